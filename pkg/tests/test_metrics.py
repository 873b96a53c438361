import numpy as np
import pytest

from hierclass.metrics import (
    EmptyInput,
    confusion_by_label,
    error_taxonomy,
    macro_prf,
    micro_prf,
    worst_labels,
)
from hierclass.ontology import parse_ontology

from helpers import FLAT_LINES


def brute_micro(pairs):
    # Definition-by-counting oracle, no pooling shortcuts.
    tp = sum(len(set(p) & set(g)) for p, g in pairs)
    fp = sum(len(set(p) - set(g)) for p, g in pairs)
    fn = sum(len(set(g) - set(p)) for p, g in pairs)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def brute_macro_f1(pairs):
    universe = set()
    for p, g in pairs:
        universe |= set(p) | set(g)
    total = 0.0
    for label in universe:
        tp = sum(1 for p, g in pairs if label in p and label in g)
        fp = sum(1 for p, g in pairs if label in p and label not in g)
        fn = sum(1 for p, g in pairs if label not in p and label in g)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return total / len(universe) if universe else 0.0


def random_pairs(rng, n, labels, max_size=5):
    pairs = []
    for _ in range(n):
        pred = set(rng.choice(labels, size=rng.integers(0, max_size + 1), replace=False))
        gold = set(rng.choice(labels, size=rng.integers(1, max_size + 1), replace=False))
        pairs.append((pred, gold))
    return pairs


class TestMicro:
    def test_hand_counts(self):
        # tp=2, fp=0, fn=1 pooled over two samples.
        pairs = [({"a"}, {"a"}), ({"b"}, {"b", "c"})]
        p, r, f1 = micro_prf(pairs)
        assert p == 1.0
        assert r == pytest.approx(2 / 3)
        assert f1 == pytest.approx(0.8)

    def test_perfect(self):
        p, r, f1 = micro_prf([({"a", "b"}, {"a", "b"}), ({"c"}, {"c"})])
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_no_overlap(self):
        p, r, f1 = micro_prf([({"a"}, {"b"})])
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_empty_predictions_zero_precision_defined(self):
        p, r, f1 = micro_prf([(set(), {"a"})])
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_single_label_pairs_p_equals_r(self):
        # One prediction and one gold per sample forces tp+fp == tp+fn.
        rng = np.random.default_rng(7)
        labels = np.array(["a", "b", "c", "d"])
        pairs = [({rng.choice(labels)}, {rng.choice(labels)}) for _ in range(50)]
        p, r, f1 = micro_prf(pairs)
        assert p == r == f1

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        labels = np.array([f"l{i}" for i in range(5)])
        for _ in range(200):
            pairs = random_pairs(rng, int(rng.integers(1, 7)), labels)
            assert micro_prf(pairs) == pytest.approx(brute_micro(pairs))

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            micro_prf([])


class TestMacro:
    def test_two_label_hand_case(self):
        # Label a: exact. Label b: never predicted, support 1 -> F1 0.
        pairs = [({"a"}, {"a"}), ({"a"}, {"b"})]
        p, r, f1, table = macro_prf(pairs)
        assert f1 == pytest.approx((2 * (1 / 2) * 1 / (1 / 2 + 1) + 0.0) / 2)
        assert len(table) == 2

    def test_universe_includes_predicted_only_labels(self):
        # "b" has no gold support but was predicted, so it drags the mean.
        pairs = [({"a", "b"}, {"a"})]
        _, _, f1, table = macro_prf(pairs)
        assert {row.label for row in table} == {"a", "b"}
        assert f1 == pytest.approx(0.5)

    def test_universe_excludes_untouched_labels(self):
        o = parse_ontology(FLAT_LINES)
        _, _, _, table = macro_prf([({"1.1"}, {"1.1"})], o)
        assert [row.label for row in table] == ["1.1"]

    def test_zero_denominator_rows(self):
        pairs = [(set(), {"a"}), ({"b"}, {"a"})]
        _, _, _, table = macro_prf(pairs)
        by_label = {row.label: row for row in table}
        assert by_label["a"].precision == 0.0 and by_label["a"].recall == 0.0
        assert by_label["b"].precision == 0.0 and by_label["b"].fn == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(13)
        labels = np.array([f"l{i}" for i in range(5)])
        for _ in range(200):
            pairs = random_pairs(rng, int(rng.integers(1, 7)), labels)
            _, _, f1, _ = macro_prf(pairs)
            assert f1 == pytest.approx(brute_macro_f1(pairs))

    def test_duplication_invariance(self):
        # Repeating every sample leaves macro scores unchanged.
        rng = np.random.default_rng(17)
        labels = np.array([f"l{i}" for i in range(4)])
        pairs = random_pairs(rng, 6, labels)
        p1, r1, f1, _ = macro_prf(pairs)
        p2, r2, f2, _ = macro_prf(pairs * 3)
        assert (p1, r1, f1) == pytest.approx((p2, r2, f2))

    def test_table_counts_sum_to_micro_counts(self):
        rng = np.random.default_rng(19)
        labels = np.array([f"l{i}" for i in range(5)])
        pairs = random_pairs(rng, 20, labels)
        counts = confusion_by_label(pairs)
        tp = sum(c[0] for c in counts.values())
        fp = sum(c[1] for c in counts.values())
        fn = sum(c[2] for c in counts.values())
        assert tp == sum(len(set(p) & set(g)) for p, g in pairs)
        assert fp == sum(len(set(p) - set(g)) for p, g in pairs)
        assert fn == sum(len(set(g) - set(p)) for p, g in pairs)

    def test_ontology_rows_ordered_and_named(self):
        o = parse_ontology(FLAT_LINES)
        pairs = [({"2.1"}, {"1.1"}), ({"1.2"}, {"1.2"})]
        _, _, _, table = macro_prf(pairs, o)
        assert [row.label for row in table] == ["1.1", "1.2", "2.1"]
        assert [row.name for row in table] == ["B", "C", "E"]
        assert [row.index for row in table] == [o.full_index[lb] for lb in ("1.1", "1.2", "2.1")]

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            macro_prf([])


class TestWorstLabels:
    def test_ascending_with_index_ties(self):
        o = parse_ontology(FLAT_LINES)
        pairs = [
            ({"1.1"}, {"1.1"}),   # 1.1 perfect
            ({"2.1"}, {"1.2"}),   # 1.2 and 2.1 both F1 0
            ({"2.2"}, {"2.2"}),   # 2.2 perfect
        ]
        _, _, _, table = macro_prf(pairs, o)
        worst = worst_labels(table, 3)
        assert [w[0] for w in worst] == ["1.2", "2.1", "1.1"]
        assert worst[0] == ("1.2", "C", 0.0)

    def test_k_clipped(self):
        _, _, _, table = macro_prf([({"a"}, {"a"})])
        assert len(worst_labels(table, 10)) == 1

    def test_bad_k(self):
        with pytest.raises(ValueError):
            worst_labels([], 0)


class TestErrorTaxonomy:
    def test_hand_classification(self):
        pairs = [
            ({"a"}, {"a"}),              # correct
            ({"b"}, {"a"}),              # completely incorrect
            (set(), {"a"}),              # completely incorrect (empty overlap)
            ({"a", "b"}, {"a"}),         # over-predicted
            ({"a"}, {"a", "b"}),         # under-predicted
            ({"a", "c"}, {"a", "b"}),    # over and under
        ]
        br = error_taxonomy(pairs)
        assert br.n_samples == 6
        assert br.correct == 1
        assert br.completely_incorrect == 2
        assert br.over_predicted == 1
        assert br.under_predicted == 1
        assert br.over_and_under == 1
        assert br.incorrect == 5
        assert br.residual == 0

    def test_partition_property(self):
        # Categories are exhaustive and mutually exclusive on random pairs.
        rng = np.random.default_rng(23)
        labels = np.array([f"l{i}" for i in range(5)])
        for _ in range(300):
            pairs = random_pairs(rng, int(rng.integers(1, 8)), labels)
            br = error_taxonomy(pairs)
            assert br.residual == 0
            assert br.correct + br.incorrect == br.n_samples

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            error_taxonomy([])

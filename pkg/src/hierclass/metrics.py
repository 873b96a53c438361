"""Micro/macro precision-recall-F1, per-label rankings, and error taxonomy.

Micro metrics pool true/false positives and false negatives over all
samples; macro metrics average per-label scores without frequency
weighting. The averaging universe is every label with gold support plus
every label that was actually predicted; labels absent from both sides are
excluded. Zero-denominator precision or recall is defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ontology import Ontology


class MetricsError(Exception):
    pass


class EmptyInput(MetricsError):
    pass


@dataclass(frozen=True)
class LabelStats:
    """Per-label confusion counts and derived scores."""

    label: str
    name: str
    index: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ErrorBreakdown:
    """Sample-level five-way error taxonomy.

    The four incorrect categories are mutually exclusive; ``residual`` is
    their shortfall against the incorrect total and must always be zero.
    """

    n_samples: int
    correct: int
    completely_incorrect: int
    over_predicted: int
    under_predicted: int
    over_and_under: int

    @property
    def incorrect(self) -> int:
        return self.n_samples - self.correct

    @property
    def residual(self) -> int:
        return self.incorrect - (self.completely_incorrect + self.over_predicted
                                 + self.under_predicted + self.over_and_under)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def _check_pairs(pairs):
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no (predicted, gold) pairs")
    return pairs


def micro_prf(pairs) -> tuple[float, float, float]:
    """Globally pooled precision, recall, F1 over (pred set, gold set) pairs."""
    pairs = _check_pairs(pairs)
    tp = fp = fn = 0
    for pred, gold in pairs:
        pred, gold = set(pred), set(gold)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    return _prf(tp, fp, fn)


def confusion_by_label(pairs) -> dict[str, list[int]]:
    """Per-label [tp, fp, fn] counts over (pred set, gold set) pairs."""
    counts: dict[str, list[int]] = {}
    for pred, gold in pairs:
        pred, gold = set(pred), set(gold)
        for label in pred | gold:
            row = counts.setdefault(label, [0, 0, 0])
            if label in pred and label in gold:
                row[0] += 1
            elif label in pred:
                row[1] += 1
            else:
                row[2] += 1
    return counts


def macro_prf(pairs, o: Ontology | None = None):
    """Unweighted mean P/R/F1 plus the per-label table.

    Returns (P, R, F1, table). The averaging universe is labels with gold
    support or at least one prediction. With an ontology, rows are ordered
    and tie-broken by dense index and carry display names.
    """
    pairs = _check_pairs(pairs)
    counts = confusion_by_label(pairs)

    def index_of(label: str) -> int:
        return o.full_index[label] if o is not None else 0

    table = []
    for label in sorted(counts, key=lambda lb: (index_of(lb), lb)):
        tp, fp, fn = counts[label]
        p, r, f1 = _prf(tp, fp, fn)
        table.append(LabelStats(
            label=label,
            name=o.names[label] if o is not None else label,
            index=index_of(label),
            tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1,
        ))
    if not table:
        return 0.0, 0.0, 0.0, []
    macro_p = sum(row.precision for row in table) / len(table)
    macro_r = sum(row.recall for row in table) / len(table)
    macro_f1 = sum(row.f1 for row in table) / len(table)
    return macro_p, macro_r, macro_f1, table


def worst_labels(table: list[LabelStats], k: int) -> list[tuple[str, str, float]]:
    """k lowest-F1 rows, ascending; ties by dense index. k is clipped."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(table, key=lambda row: (row.f1, row.index, row.label))
    return [(row.label, row.name, row.f1) for row in ranked[:min(k, len(ranked))]]


def error_taxonomy(pairs) -> ErrorBreakdown:
    """Classify each sample: correct, completely incorrect (zero overlap),
    over-predicted, under-predicted, or both."""
    pairs = _check_pairs(pairs)
    correct = zero = over = under = both = 0
    for pred, gold in pairs:
        pred, gold = set(pred), set(gold)
        if pred == gold:
            correct += 1
        elif not pred & gold:
            zero += 1
        else:
            extra = bool(pred - gold)
            missing = bool(gold - pred)
            if extra and missing:
                both += 1
            elif extra:
                over += 1
            else:
                under += 1
    return ErrorBreakdown(
        n_samples=len(pairs), correct=correct, completely_incorrect=zero,
        over_predicted=over, under_predicted=under, over_and_under=both,
    )

"""Turning score vectors into label sets, and tuning the threshold.

Three strategies: keep everything above a threshold, keep only the top
score, or threshold with the top score as a fallback so the prediction is
never empty. Multi-level score vectors cover internal labels too, so their
thresholded sets are pushed down to leaves before use.

``tune_threshold`` sweeps every threshold that can change the predictions:
midpoints between consecutive distinct scores plus sentinels outside the
observed range. The sweep is incremental: descending thresholds only ever
add predictions, so per-label counts and the running metric are updated in
O(1) per score instead of re-scoring the dev set at each candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import DimensionMismatch
from .heads import resolve_to_leaves
from .ontology import Ontology

HEAD_KINDS = ("linear-leaf", "multi-level")
METRICS = ("macroF1", "microF1")


class DecisionError(Exception):
    pass


class EmptyDevSet(DecisionError):
    pass


class LengthMismatch(DecisionError):
    pass


@dataclass(frozen=True)
class Strategy:
    """A decision rule: ``kind`` plus ``theta`` for the threshold kinds."""

    kind: str
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in ("Threshold", "MaxScore", "ThresholdWithMax"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "MaxScore":
            if self.theta is not None:
                raise ValueError("MaxScore takes no theta")
        elif self.theta is None or not math.isfinite(self.theta):
            raise ValueError(f"{self.kind} needs a finite theta, got {self.theta!r}")

    @staticmethod
    def threshold(theta: float) -> "Strategy":
        return Strategy("Threshold", float(theta))

    @staticmethod
    def max_score() -> "Strategy":
        return Strategy("MaxScore")

    @staticmethod
    def threshold_with_max(theta: float) -> "Strategy":
        return Strategy("ThresholdWithMax", float(theta))


def _label_space(o: Ontology, head_kind: str) -> tuple[str, ...]:
    if head_kind == "linear-leaf":
        return o.leaf_ids
    if head_kind == "multi-level":
        return o.all_ids
    raise ValueError(f"unknown head kind {head_kind!r}")


def select(scores, strategy: Strategy, o: Ontology, head_kind: str) -> set[str]:
    """Apply a decision strategy to one score vector; returns leaf ids."""
    ids = _label_space(o, head_kind)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(ids),):
        raise DimensionMismatch(
            f"scores shape {scores.shape} vs {len(ids)} labels for {head_kind}")

    if strategy.kind == "MaxScore":
        picked = {ids[int(np.argmax(scores))]}
    else:
        picked = {ids[k] for k in np.flatnonzero(scores > strategy.theta)}
        if strategy.kind == "ThresholdWithMax" and not picked:
            picked = {ids[int(np.argmax(scores))]}

    if head_kind == "multi-level":
        return resolve_to_leaves(scores, picked, o)
    return picked


def _resolved_leaf(scores: np.ndarray, label: str, o: Ontology) -> str:
    (leaf,) = resolve_to_leaves(scores, [label], o)
    return leaf


def _candidate_below(hi: float, lo: float) -> float:
    # Largest representative theta strictly inside (lo, hi); if the midpoint
    # rounds up onto hi, lo itself still separates the two groups because
    # the comparison is strict.
    mid = (hi + lo) / 2.0
    return mid if lo < mid < hi else lo


def tune_threshold(score_rows, gold_sets, o: Ontology, head_kind: str,
                   metric: str = "macroF1") -> float:
    """Exact best threshold for the Threshold strategy on a dev set.

    Candidates are midpoints of consecutive distinct scores plus sentinels
    beyond both ends; ties prefer the larger theta. ``metric`` is macroF1
    or microF1, computed over leaf predictions (multi-level sets are
    resolved before scoring).
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    ids = _label_space(o, head_kind)
    rows = [np.asarray(rw, dtype=np.float64) for rw in score_rows]
    gold_sets = [frozenset(g) for g in gold_sets]
    if not rows:
        raise EmptyDevSet("no dev samples to tune on")
    if len(rows) != len(gold_sets):
        raise LengthMismatch(f"{len(rows)} score rows vs {len(gold_sets)} gold sets")
    for rw in rows:
        if rw.shape != (len(ids),):
            raise DimensionMismatch(
                f"scores shape {rw.shape} vs {len(ids)} labels for {head_kind}")

    n = len(rows)
    n_leaf = o.n_leaf
    leaf_idx = o.leaf_index

    # Where each dense label lands after resolution, per sample. For the
    # leaf head this is the identity and scores never move a prediction.
    if head_kind == "multi-level":
        lands = np.empty((n, len(ids)), dtype=np.int64)
        for i, rw in enumerate(rows):
            for j, label in enumerate(ids):
                lands[i, j] = leaf_idx[_resolved_leaf(rw, label, o)]
    else:
        lands = np.broadcast_to(np.arange(n_leaf, dtype=np.int64), (n, n_leaf))

    gold_mask = np.zeros((n, n_leaf), dtype=bool)
    for i, gold in enumerate(gold_sets):
        for label in gold:
            if label not in leaf_idx:
                raise DecisionError(f"gold label {label!r} is not a leaf")
            gold_mask[i, leaf_idx[label]] = True

    support = gold_mask.sum(axis=0).astype(np.int64)
    total_gold = int(support.sum())

    # Running confusion state, updated as thresholds descend.
    pred_count = np.zeros((n, n_leaf), dtype=np.int64)
    tp = np.zeros(n_leaf, dtype=np.int64)
    fp = np.zeros(n_leaf, dtype=np.int64)
    in_universe = support > 0
    f1_of = np.zeros(n_leaf, dtype=np.float64)
    state = {
        "universe_n": int(in_universe.sum()),
        "f1_sum": 0.0,
        "tp_total": 0,
        "fp_total": 0,
    }

    def label_f1(leaf: int) -> float:
        t, f = int(tp[leaf]), int(fp[leaf])
        fn = int(support[leaf]) - t
        p = t / (t + f) if t + f else 0.0
        r = t / (t + fn) if t + fn else 0.0
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def add_prediction(sample: int, leaf: int) -> None:
        pred_count[sample, leaf] += 1
        if pred_count[sample, leaf] != 1:
            return
        old = f1_of[leaf] if in_universe[leaf] else 0.0
        if gold_mask[sample, leaf]:
            tp[leaf] += 1
            state["tp_total"] += 1
        else:
            fp[leaf] += 1
            state["fp_total"] += 1
        if not in_universe[leaf]:
            in_universe[leaf] = True
            state["universe_n"] += 1
        f1_of[leaf] = label_f1(leaf)
        state["f1_sum"] += f1_of[leaf] - old

    def current_metric() -> float:
        if metric == "macroF1":
            return state["f1_sum"] / state["universe_n"] if state["universe_n"] else 0.0
        t = state["tp_total"]
        denom = 2 * t + state["fp_total"] + (total_gold - t)
        return 2.0 * t / denom if denom else 0.0

    flat = np.concatenate(rows)
    order = np.argsort(flat, kind="stable")[::-1]
    values = flat[order]
    samples = order // len(ids)
    labels = order % len(ids)

    best_theta = float(values[0])      # above every score: empty predictions
    best_metric = current_metric()

    k = 0
    n_scores = values.shape[0]
    while k < n_scores:
        v = values[k]
        while k < n_scores and values[k] == v:
            add_prediction(int(samples[k]), int(lands[int(samples[k]), int(labels[k])]))
            k += 1
        if k < n_scores:
            theta = _candidate_below(float(v), float(values[k]))
        else:
            theta = float(v) - 1.0     # below every score: everything predicted
        m = current_metric()
        if m > best_metric:
            best_metric, best_theta = m, theta
    return best_theta

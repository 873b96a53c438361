"""Classifier heads: leaf linear, multi-level linear, and masked GRU decoder.

All heads score labels from a pooled document vector. The two linear heads
differ only in output width (leaf set vs the whole taxonomy). The GRU head
predicts one label per hierarchy level, feeding the chosen label's row of
the classifier matrix back as the next step's input; a child mask restricts
each step's candidates to the previous label's children.

Forward functions return caches; the matching *_bwd functions consume them
and produce analytic parameter gradients (no autodiff anywhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import DimensionMismatch, PooledVector
from .ontology import START, Ontology, UnknownLabel, ancestors, child_mask


class DeadEnd(Exception):
    """Decoder hit an all-false child mask before reaching a leaf."""


class InvalidPath(Exception):
    """Teacher path is not a root-to-leaf parent/child chain."""


def _values(v) -> np.ndarray:
    vec = v.values if isinstance(v, PooledVector) else np.asarray(v)
    if vec.ndim != 1:
        raise DimensionMismatch(f"pooled vector must be 1-D, got shape {vec.shape}")
    return vec.astype(np.float64, copy=False)


def xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass
class LinearHead:
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, n_out: int, dim: int, rng: np.random.Generator) -> "LinearHead":
        return cls(W=xavier(rng, n_out, dim), b=np.zeros(n_out))

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


def linear_forward(v, head: LinearHead) -> np.ndarray:
    """Logits s = W v + b."""
    vec = _values(v)
    if head.W.shape[1] != vec.shape[0] or head.b.shape != (head.W.shape[0],):
        raise DimensionMismatch(
            f"head dims {head.W.shape}/{head.b.shape} do not match input {vec.shape}")
    return head.W @ vec + head.b


def linear_backward(grad_s: np.ndarray, v, head: LinearHead):
    """Gradients of s = W v + b: returns ({W, b}, dv)."""
    vec = _values(v)
    return {"W": np.outer(grad_s, vec), "b": grad_s.copy()}, head.W.T @ grad_s


@dataclass
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @classmethod
    def init(cls, in_dim: int, h: int, rng: np.random.Generator) -> "GruParams":
        return cls(
            W_z=xavier(rng, h, in_dim), W_r=xavier(rng, h, in_dim), W_h=xavier(rng, h, in_dim),
            U_z=xavier(rng, h, h), U_r=xavier(rng, h, h), U_h=xavier(rng, h, h),
            b_z=np.zeros(h), b_r=np.zeros(h), b_h=np.zeros(h),
        )

    @property
    def h(self) -> int:
        return self.U_z.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W_z.shape[1]


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def gru_cell_fwd(x: np.ndarray, h_prev: np.ndarray, g: GruParams):
    """One GRU step. Returns (h, cache).

    z = sig(W_z x + U_z h_prev + b_z)
    r = sig(W_r x + U_r h_prev + b_r)
    hbar = tanh(W_h x + U_h (r * h_prev) + b_h)
    h = (1 - z) * h_prev + z * hbar
    """
    if x.shape != (g.in_dim,) or h_prev.shape != (g.h,):
        raise DimensionMismatch(
            f"x {x.shape} / h_prev {h_prev.shape} vs in_dim={g.in_dim} h={g.h}")
    z = _sigmoid(g.W_z @ x + g.U_z @ h_prev + g.b_z)
    r = _sigmoid(g.W_r @ x + g.U_r @ h_prev + g.b_r)
    rh = r * h_prev
    hbar = np.tanh(g.W_h @ x + g.U_h @ rh + g.b_h)
    h = (1.0 - z) * h_prev + z * hbar
    cache = {"x": x, "h_prev": h_prev, "z": z, "r": r, "rh": rh, "hbar": hbar}
    return h, cache


def gru_cell(x: np.ndarray, h_prev: np.ndarray, g: GruParams) -> np.ndarray:
    return gru_cell_fwd(x, h_prev, g)[0]


def gru_cell_bwd(dh: np.ndarray, cache: dict, g: GruParams):
    """Backward through one GRU step: returns (dx, dh_prev, param grads)."""
    x, h_prev = cache["x"], cache["h_prev"]
    z, r, rh, hbar = cache["z"], cache["r"], cache["rh"], cache["hbar"]

    dz = dh * (hbar - h_prev)
    dhbar = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dhbar * (1.0 - hbar * hbar)          # tanh'
    drh = g.U_h.T @ da_h
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    da_z = dz * z * (1.0 - z)                   # sigmoid'
    da_r = dr * r * (1.0 - r)

    dx = g.W_z.T @ da_z + g.W_r.T @ da_r + g.W_h.T @ da_h
    dh_prev = dh_prev + g.U_z.T @ da_z + g.U_r.T @ da_r

    grads = {
        "W_z": np.outer(da_z, x), "W_r": np.outer(da_r, x), "W_h": np.outer(da_h, x),
        "U_z": np.outer(da_z, h_prev), "U_r": np.outer(da_r, h_prev), "U_h": np.outer(da_h, rh),
        "b_z": da_z, "b_r": da_r, "b_h": da_h,
    }
    return dx, dh_prev, grads


@dataclass
class GruHead:
    gru: GruParams
    C: np.ndarray        # n_total x h; row ell doubles as label ell's embedding
    c_b: np.ndarray
    e_init: np.ndarray

    @classmethod
    def init(cls, n_total: int, pooled_dim: int, h: int,
             rng: np.random.Generator) -> "GruHead":
        return cls(
            gru=GruParams.init(pooled_dim + h, h, rng),
            C=xavier(rng, n_total, h),
            c_b=np.zeros(n_total),
            e_init=rng.uniform(-0.01, 0.01, size=h),
        )

    @property
    def h(self) -> int:
        return self.gru.h

    @property
    def pooled_dim(self) -> int:
        return self.gru.in_dim - self.gru.h


@dataclass(frozen=True)
class DecodePath:
    labels: tuple[str, ...]
    scores: tuple[float, ...]


def _masked_argmax(logits: np.ndarray, mask: np.ndarray) -> int:
    # mask first, then argmax; first max wins, i.e. the lower dense index
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        raise DeadEnd("child mask is all-false before reaching a leaf")
    return int(candidates[np.argmax(logits[candidates])])


def gru_decode(v, head: GruHead, o: Ontology) -> DecodePath:
    """Greedy masked decoding from the taxonomy root down to one leaf."""
    vec = _values(v)
    if vec.shape[0] != head.pooled_dim:
        raise DimensionMismatch(
            f"pooled dim {vec.shape[0]} vs head expecting {head.pooled_dim}")
    h = np.zeros(head.h)
    e = head.e_init
    prev = START
    labels: list[str] = []
    scores: list[float] = []
    for _ in range(o.max_depth):
        x = np.concatenate([vec, e])
        h, _ = gru_cell_fwd(x, h, head.gru)
        logits = head.C @ h + head.c_b
        idx = _masked_argmax(logits, child_mask(o, prev))
        label = o.all_ids[idx]
        labels.append(label)
        scores.append(float(logits[idx]))
        if o.is_leaf(label):
            break
        e = head.C[idx]
        prev = label
    return DecodePath(labels=tuple(labels), scores=tuple(scores))


def _check_path(o: Ontology, labels) -> list[str]:
    labels = list(labels)
    if not labels:
        raise InvalidPath("empty teacher path")
    for label in labels:
        if label not in o:
            raise InvalidPath(f"label {label!r} not in taxonomy")
    if o.depth(labels[0]) != 1:
        raise InvalidPath(f"path must start at depth 1, got {labels[0]!r}")
    for parent, child in zip(labels, labels[1:]):
        if child not in o.children[parent]:
            raise InvalidPath(f"{child!r} is not a child of {parent!r}")
    if not o.is_leaf(labels[-1]):
        raise InvalidPath(f"path must end at a leaf, got {labels[-1]!r}")
    return labels


def gold_path(o: Ontology, leaf: str) -> DecodePath:
    """Root-to-leaf teacher path for one gold leaf label."""
    if leaf not in o:
        raise UnknownLabel(f"unknown label {leaf!r}")
    return DecodePath(labels=tuple(ancestors(o, leaf)), scores=())


def gru_teacher_fwd(v, head: GruHead, o: Ontology, path: DecodePath):
    """Teacher-forced forward pass along a gold path.

    Returns (steps, caches): per step, full logits, the step's child mask,
    and the gold label's dense index; caches feed gru_teacher_bwd.
    """
    labels = _check_path(o, path.labels)
    vec = _values(v)
    if vec.shape[0] != head.pooled_dim:
        raise DimensionMismatch(
            f"pooled dim {vec.shape[0]} vs head expecting {head.pooled_dim}")
    h = np.zeros(head.h)
    e = head.e_init
    prev = START
    steps = []
    caches = []
    for label in labels:
        x = np.concatenate([vec, e])
        h, cell_cache = gru_cell_fwd(x, h, head.gru)
        logits = head.C @ h + head.c_b
        mask = child_mask(o, prev)
        gold_idx = o.full_index[label]
        steps.append({"logits": logits, "mask": mask, "gold_idx": gold_idx})
        caches.append({"cell": cell_cache, "h": h})
        e = head.C[gold_idx]
        prev = label
    return steps, caches


def gru_teacher_logits(v, head: GruHead, o: Ontology, path: DecodePath) -> list[np.ndarray]:
    """Per-step logits restricted to each step's child mask."""
    steps, _ = gru_teacher_fwd(v, head, o, path)
    return [step["logits"][step["mask"]] for step in steps]


def gru_teacher_bwd(dlogits_list, steps, caches, head: GruHead):
    """Backward through a teacher-forced pass.

    dlogits_list holds one full-width (n_total) gradient vector per step.
    Returns (grads, dv) where grads covers the GRU cell parameters, C, c_b,
    and e_init; C receives both classifier and embedding-feedback terms.
    """
    pd = head.pooled_dim
    grads = {
        "C": np.zeros_like(head.C), "c_b": np.zeros_like(head.c_b),
        "e_init": np.zeros_like(head.e_init),
        "W_z": np.zeros_like(head.gru.W_z), "W_r": np.zeros_like(head.gru.W_r),
        "W_h": np.zeros_like(head.gru.W_h), "U_z": np.zeros_like(head.gru.U_z),
        "U_r": np.zeros_like(head.gru.U_r), "U_h": np.zeros_like(head.gru.U_h),
        "b_z": np.zeros_like(head.gru.b_z), "b_r": np.zeros_like(head.gru.b_r),
        "b_h": np.zeros_like(head.gru.b_h),
    }
    dv = np.zeros(pd)
    dh_next = np.zeros(head.h)
    for t in reversed(range(len(steps))):
        dlogits = dlogits_list[t]
        dh = head.C.T @ dlogits + dh_next
        grads["C"] += np.outer(dlogits, caches[t]["h"])
        grads["c_b"] += dlogits
        dx, dh_prev, cell_grads = gru_cell_bwd(dh, caches[t]["cell"], head.gru)
        for name, grad in cell_grads.items():
            grads[name] += grad
        dv += dx[:pd]
        de = dx[pd:]
        if t == 0:
            grads["e_init"] += de
        else:
            grads["C"][steps[t - 1]["gold_idx"]] += de
        dh_next = dh_prev
    return grads, dv


def resolve_to_leaves(scores: np.ndarray, predicted, o: Ontology) -> set[str]:
    """Map predicted labels to leaves by descending to the best child.

    Non-leaf labels repeatedly move to their highest-scoring direct child
    (ties to the lower dense index); leaves pass through. Result is a set.
    """
    scores = np.asarray(scores)
    if scores.shape != (o.n_total,):
        raise DimensionMismatch(f"scores shape {scores.shape} vs n_total {o.n_total}")
    out: set[str] = set()
    for label in predicted:
        if label not in o:
            raise UnknownLabel(f"unknown label {label!r}")
        while not o.is_leaf(label):
            kids = o.children[label]
            kid_idx = np.fromiter((o.full_index[k] for k in kids), dtype=np.int64)
            label = kids[int(np.argmax(scores[kid_idx]))]
        out.add(label)
    return out

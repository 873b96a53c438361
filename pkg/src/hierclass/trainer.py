"""Losses, optimizer, LR schedule, and the training loop.

Gradients are hand-derived per component and verified against central
finite differences by ``grad_check``. The optimizer is bias-corrected Adam
with no weight decay; the learning rate warms up linearly and then stays
constant. Training walks the interleaved slice schedule; every
``eval_every`` optimizer steps the dev set is scored per language and a
checkpoint is written.

Only pooling and head parameters train; token embeddings are a frozen
input supplied by a provider object with ``get(lang, page_id)``.
"""

from __future__ import annotations

import json
import pathlib
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .corpus import (
    DEFAULT_N_SLICES,
    DEFAULT_SPLIT_RATIO,
    SplitCorpus,
    iter_batches,
    slice_schedule,
    split,
)
from .decision import LengthMismatch, Strategy, select
from .encoder import (
    DEFAULT_DROPOUT,
    DEFAULT_FIRST_K,
    EmbeddingMatrix,
    MissingPage,
    PoolParams,
    concat_dim,
    hash_encode,
    pool_cls_bwd,
    pool_cls_fwd,
    pool_concat_bwd,
    pool_concat_fwd,
    pool_mean,
)
from .heads import (
    GruHead,
    GruParams,
    LinearHead,
    _sigmoid,
    gold_path,
    gru_cell,
    gru_cell_bwd,
    gru_cell_fwd,
    gru_decode,
    gru_teacher_bwd,
    gru_teacher_fwd,
    linear_backward,
    linear_forward,
)
from .metrics import macro_prf, micro_prf
from .ontology import Ontology, expand_gold, parse_ontology

HEADS = ("linear-leaf", "multi-level", "gru")
POOLINGS = ("CLS", "MEAN", "CONCAT")
GRAD_CHECK_COMPONENTS = ("pooling", "linear-head", "gru-cell", "teacher-forced-loss")

CHECKPOINT_MAGIC = b"HCP1"
CHECKPOINT_VERSION = 1


class TrainerError(Exception):
    pass


class GoldMasked(TrainerError):
    pass


class ShapeMismatch(TrainerError):
    pass


class NonFiniteGradient(TrainerError):
    pass


class NonFiniteLoss(TrainerError):
    pass


class BadCheckpoint(TrainerError):
    pass


# ---------------------------------------------------------------- losses

def bce_with_logits(s, y) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over logits, in the overflow-safe form.

    Returns (loss, dloss/ds) with ds = (sigmoid(s) - y) / n.
    """
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if s.ndim != 1 or s.shape != y.shape:
        raise LengthMismatch(f"logits {s.shape} vs targets {y.shape}")
    if s.shape[0] == 0:
        raise LengthMismatch("empty logit vector")
    per = np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))
    ds = (_sigmoid(s) - y) / s.shape[0]
    return float(per.mean()), ds


def masked_ce(logits, mask, gold_idx: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of a softmax restricted to masked entries.

    The gradient is zero outside the mask. A gold index outside the mask
    means the decode path is broken upstream, hence its own error.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 1 or logits.shape != mask.shape:
        raise LengthMismatch(f"logits {logits.shape} vs mask {mask.shape}")
    if not (0 <= gold_idx < logits.shape[0]) or not mask[gold_idx]:
        raise GoldMasked(f"gold index {gold_idx} is not inside the mask")
    idx = np.flatnonzero(mask)
    z = logits[idx]
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    dlogits = np.zeros_like(logits)
    dlogits[idx] = np.exp(z - lse)
    dlogits[gold_idx] -= 1.0
    return float(lse - logits[gold_idx]), dlogits


# ----------------------------------------------------- optimizer/schedule

@dataclass
class TrainConfig:
    head: str
    pooling: str
    d: int
    seq: int
    first_k: int = DEFAULT_FIRST_K
    h: int = 768
    batch_size: int = 32
    lr_max: float = 2e-5
    warmup_steps: int = 10000
    epochs: int = 1
    seed: int = 0
    eval_every: int = 0
    n_slices: int = DEFAULT_N_SLICES
    split_ratio: float = DEFAULT_SPLIT_RATIO
    dropout: float = DEFAULT_DROPOUT
    langs: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        for name in ("d", "seq", "first_k", "h", "batch_size", "epochs", "n_slices"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("warmup_steps", "eval_every", "seed"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not np.isfinite(self.lr_max) or self.lr_max <= 0:
            raise ValueError(f"lr_max must be a positive number, got {self.lr_max}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.pooling == "CONCAT" and self.first_k > self.seq:
            raise ValueError(f"first_k {self.first_k} > seq {self.seq}")
        if self.langs is not None:
            self.langs = tuple(self.langs)

    @property
    def pooled_dim(self) -> int:
        return concat_dim(self.d, self.first_k) if self.pooling == "CONCAT" else self.d

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if out["langs"] is not None:
            out["langs"] = list(out["langs"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config key {unknown[0]!r}")
        return cls(**data)


def lr_at(t: int, cfg: TrainConfig) -> float:
    """Linear warm-up to lr_max over warmup_steps, then constant. t >= 1."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    if cfg.warmup_steps <= 0:
        return cfg.lr_max
    return cfg.lr_max * min(t / cfg.warmup_steps, 1.0)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update, in place, no weight decay."""
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise ShapeMismatch(f"parameter/gradient name mismatch: {missing}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"{name}: param {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ----------------------------------------------------------------- model

def leaf_targets(o: Ontology, gold) -> np.ndarray:
    """0/1 vector over leaves."""
    y = np.zeros(o.n_leaf)
    for label in gold:
        y[o.leaf_index[label]] = 1.0
    return y


def expanded_targets(o: Ontology, gold) -> np.ndarray:
    """0/1 vector over all labels: gold leaves plus every ancestor."""
    y = np.zeros(o.n_total)
    for label in expand_gold(o, gold):
        y[o.full_index[label]] = 1.0
    return y


class Model:
    """Pooling plus one classification head; parameters update in place."""

    def __init__(self, cfg: TrainConfig, o: Ontology, pool: PoolParams | None, head):
        self.cfg = cfg
        self.o = o
        self.pool = pool
        self.head = head

    @classmethod
    def build(cls, cfg: TrainConfig, o: Ontology) -> "Model":
        rng = np.random.default_rng([cfg.seed, 0])
        pool = None
        if cfg.pooling != "MEAN":
            pool = PoolParams.init(cfg.d, rng, cfg.dropout, cfg.first_k)
        if cfg.head == "gru":
            head = GruHead.init(o.n_total, cfg.pooled_dim, cfg.h, rng)
        else:
            n_out = o.n_leaf if cfg.head == "linear-leaf" else o.n_total
            head = LinearHead.init(n_out, cfg.pooled_dim, rng)
        return cls(cfg, o, pool, head)

    @classmethod
    def from_params(cls, cfg: TrainConfig, o: Ontology,
                    tensors: dict[str, np.ndarray]) -> "Model":
        built = cls.build(cfg, o)
        want = built.params
        if set(tensors) != set(want):
            raise ShapeMismatch(
                f"tensor name mismatch: {sorted(set(tensors) ^ set(want))}")
        for name, arr in tensors.items():
            if arr.shape != want[name].shape:
                raise ShapeMismatch(
                    f"{name}: stored {arr.shape} vs expected {want[name].shape}")
            want[name][...] = arr
        return built

    @property
    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.pool is not None:
            out["W_pool"] = self.pool.W_pool
            out["b_pool"] = self.pool.b_pool
        if isinstance(self.head, LinearHead):
            out["W"] = self.head.W
            out["b"] = self.head.b
        else:
            out["C"] = self.head.C
            out["c_b"] = self.head.c_b
            out["e_init"] = self.head.e_init
            g = self.head.gru
            out.update(W_z=g.W_z, W_r=g.W_r, W_h=g.W_h,
                       U_z=g.U_z, U_r=g.U_r, U_h=g.U_h,
                       b_z=g.b_z, b_r=g.b_r, b_h=g.b_h)
        return out

    def pool_fwd(self, E: EmbeddingMatrix, mode: str = "eval", rng=None):
        if self.cfg.pooling == "MEAN":
            return pool_mean(E).values, None
        if self.cfg.pooling == "CLS":
            pv, cache = pool_cls_fwd(E, self.pool, mode, rng)
        else:
            pv, cache = pool_concat_fwd(E, self.pool, mode, rng)
        return pv.values, cache

    def pool_bwd(self, dv: np.ndarray, cache) -> dict[str, np.ndarray]:
        if self.cfg.pooling == "MEAN":
            return {}
        if self.cfg.pooling == "CLS":
            return pool_cls_bwd(dv, cache)
        return pool_concat_bwd(dv, cache, self.cfg.d)

    def scores(self, E: EmbeddingMatrix) -> np.ndarray:
        """Eval-mode score vector (linear heads only)."""
        if not isinstance(self.head, LinearHead):
            raise TrainerError("score vectors are only defined for linear heads")
        v, _ = self.pool_fwd(E)
        return linear_forward(v, self.head)

    def predict(self, E: EmbeddingMatrix, strategy: Strategy | None = None) -> set[str]:
        """Leaf predictions for one page; GRU heads decode greedily."""
        if self.cfg.head == "gru":
            v, _ = self.pool_fwd(E)
            path = gru_decode(v, self.head, self.o)
            return {path.labels[-1]}
        if strategy is None:
            strategy = Strategy.max_score()
        return select(self.scores(E), strategy, self.o, self.cfg.head)

    def sample_loss_grads(self, E: EmbeddingMatrix, gold, mode: str = "train",
                          rng=None) -> tuple[float, dict[str, np.ndarray]]:
        """Loss and parameter gradients for one page."""
        v, pcache = self.pool_fwd(E, mode, rng)
        if isinstance(self.head, LinearHead):
            s = linear_forward(v, self.head)
            if self.cfg.head == "linear-leaf":
                y = leaf_targets(self.o, gold)
            else:
                y = expanded_targets(self.o, gold)
            loss, ds = bce_with_logits(s, y)
            head_grads, dv = linear_backward(ds, v, self.head)
        else:
            paths = [gold_path(self.o, leaf) for leaf in sorted(gold)]
            loss = 0.0
            head_grads = None
            dv = np.zeros(self.cfg.pooled_dim)
            for path in paths:
                steps, caches = gru_teacher_fwd(v, self.head, self.o, path)
                dlogits_list = []
                for step in steps:
                    step_loss, dlogits = masked_ce(
                        step["logits"], step["mask"], step["gold_idx"])
                    loss += step_loss
                    dlogits_list.append(dlogits)
                g, dv_path = gru_teacher_bwd(dlogits_list, steps, caches, self.head)
                dv += dv_path
                if head_grads is None:
                    head_grads = g
                else:
                    for name in head_grads:
                        head_grads[name] += g[name]
            scale = 1.0 / len(paths)
            loss *= scale
            dv *= scale
            for name in head_grads:
                head_grads[name] *= scale
        grads = dict(head_grads)
        grads.update(self.pool_bwd(dv, pcache))
        return loss, grads


class HashProvider:
    """Provider that hash-encodes page text on demand, with a small cache."""

    def __init__(self, pages, d: int, seq: int, seed: int = 0):
        self._text = {(p.lang, p.page_id): p.text for p in pages}
        self.d, self.seq, self.seed = d, seq, seed
        self._cache: dict[tuple[str, int], EmbeddingMatrix] = {}

    def get(self, lang: str, page_id: int) -> EmbeddingMatrix:
        key = (lang, page_id)
        if key not in self._text:
            raise MissingPage(f"no page ({lang!r}, {page_id})")
        if key not in self._cache:
            self._cache[key] = hash_encode(self._text[key], self.d, self.seq, self.seed)
        return self._cache[key]


# ------------------------------------------------------------ evaluation

def evaluate(model: Model, pages, provider, strategy: Strategy | None = None,
             threads: int = 1):
    """Per-language and pooled dev metrics rows (no step field).

    ``threads`` > 1 fans prediction out over a thread pool; the reduction
    order is fixed, so results do not depend on the thread count.
    """
    pages = list(pages)

    def predict_one(page):
        return model.predict(provider.get(page.lang, page.page_id), strategy)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            preds = list(pool.map(predict_one, pages))
    else:
        preds = [predict_one(page) for page in pages]
    by_lang: dict[str, list] = {}
    for page, pred in zip(pages, preds):
        by_lang.setdefault(page.lang, []).append((pred, page.gold))
    rows = []
    all_pairs = []
    for lang in sorted(by_lang):
        pairs = by_lang[lang]
        all_pairs.extend(pairs)
        rows.append(_metrics_row(lang, pairs))
    if all_pairs:
        rows.append(_metrics_row("all", all_pairs))
    return rows


def _metrics_row(lang: str, pairs) -> dict:
    micro_p, micro_r, micro_f1 = micro_prf(pairs)
    macro_p, macro_r, macro_f1, _ = macro_prf(pairs)
    return {"lang": lang, "macro_f1": macro_f1, "micro_f1": micro_f1,
            "macro_p": macro_p, "macro_r": macro_r,
            "micro_p": micro_p, "micro_r": micro_r}


# ------------------------------------------------------------ train loop

@dataclass
class TrainResult:
    model: Model
    split: SplitCorpus
    metrics: list[dict] = field(default_factory=list)
    checkpoint_paths: list[str] = field(default_factory=list)
    final_checkpoint: str | None = None


def train(cfg: TrainConfig, corpus, o: Ontology, provider, out_dir=None) -> TrainResult:
    """Run the slice schedule for cfg.epochs epochs.

    ``corpus`` is either a list of pages (split here with cfg.seed) or a
    ready SplitCorpus. Checkpoints and a metrics JSONL land in out_dir when
    given. Identical (config, corpus, provider) reruns are bit-identical.
    """
    if isinstance(corpus, SplitCorpus):
        sc = corpus
    else:
        sc = split(list(corpus), cfg.seed, cfg.split_ratio)
    schedule = slice_schedule(sc, cfg.n_slices, cfg.langs)
    model = Model.build(cfg, o)
    params = model.params
    state = OptimizerState.for_params(params)
    droprng = np.random.default_rng([cfg.seed, 1])

    out_path = None
    metrics_file = None
    if out_dir is not None:
        out_path = pathlib.Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_file = out_path / "metrics.jsonl"
        metrics_file.write_text("")

    result = TrainResult(model=model, split=sc)
    step = 0
    last_eval_step = -1

    def run_eval():
        nonlocal last_eval_step
        last_eval_step = step
        for row in evaluate(model, sc.dev, provider):
            row = {"step": step, **row}
            result.metrics.append(row)
            if metrics_file is not None:
                with metrics_file.open("a") as fh:
                    fh.write(json.dumps(row) + "\n")

    for epoch in range(1, cfg.epochs + 1):
        for lang, s, batch in iter_batches(sc, schedule, epoch, cfg.batch_size, cfg.seed):
            step += 1
            n = len(batch)
            total = 0.0
            acc: dict[str, np.ndarray] = {k: np.zeros_like(p) for k, p in params.items()}
            for page in batch:
                E = provider.get(page.lang, page.page_id)
                loss, grads = model.sample_loss_grads(E, page.gold, "train", droprng)
                total += loss
                for name, g in grads.items():
                    acc[name] += g
            mean_loss = total / n
            if not np.isfinite(mean_loss):
                raise NonFiniteLoss(
                    f"non-finite loss at step {step} "
                    f"(epoch {epoch}, lang {lang}, slice {s})")
            for name in acc:
                acc[name] /= n
            adam_step(params, acc, state, lr_at(step, cfg))
            if cfg.eval_every and step % cfg.eval_every == 0:
                run_eval()
                if out_path is not None:
                    ck = out_path / f"step{step:06d}.ckpt"
                    save_checkpoint(ck, model, step)
                    result.checkpoint_paths.append(str(ck))

    if step != last_eval_step:
        run_eval()
    if out_path is not None:
        final = out_path / "final.ckpt"
        save_checkpoint(final, model, step)
        result.checkpoint_paths.append(str(final))
        result.final_checkpoint = str(final)
    return result


# ----------------------------------------------------------- checkpoints

def save_checkpoint(path, model: Model, step: int = 0) -> None:
    """Binary dump: ontology hash, config echo + step, named float64 tensors."""
    params = model.params
    blob = {"config": model.cfg.to_dict(), "step": int(step)}
    cfg_json = json.dumps(blob, sort_keys=True).encode()
    o_hash = model.o.content_hash().encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<I", len(o_hash)))
    parts.append(o_hash)
    parts.append(struct.pack("<I", len(cfg_json)))
    parts.append(cfg_json)
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        name_b = name.encode()
        parts.append(struct.pack("<I", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, str, int]:
    """Read back (tensors, config dict, ontology hash, training step)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise BadCheckpoint(f"truncated checkpoint at byte {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise BadCheckpoint("bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise BadCheckpoint(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", take(4))
    o_hash = bytes(take(n)).decode()
    (n,) = struct.unpack("<I", take(4))
    blob_json = json.loads(bytes(take(n)).decode())
    if not isinstance(blob_json, dict) or "config" not in blob_json:
        raise BadCheckpoint("malformed config block")
    cfg_dict = blob_json["config"]
    step = int(blob_json.get("step", 0))
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (n,) = struct.unpack("<I", take(4))
        name = bytes(take(n)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        tensors[name] = data.astype(np.float64)
    if pos != len(view):
        raise BadCheckpoint(f"{len(view) - pos} trailing bytes")
    return tensors, cfg_dict, o_hash, step


def restore(path, o: Ontology) -> tuple[Model, TrainConfig, int]:
    """Rebuild a model from a checkpoint, refusing a mismatched taxonomy."""
    tensors, cfg_dict, o_hash, step = load_checkpoint(path)
    if o_hash != o.content_hash():
        raise BadCheckpoint("checkpoint was trained against a different taxonomy")
    cfg = TrainConfig.from_dict(cfg_dict)
    return Model.from_params(cfg, o, tensors), cfg, step


# ---------------------------------------------------------- grad checks

def _rel_err(a: float, n: float) -> float:
    # central differences at eps=1e-4 carry ~1e-9 absolute noise, so
    # coordinates below 1e-3 are effectively compared absolutely
    return abs(a - n) / max(abs(a), abs(n), 1e-3)


def _fd_check(param_arrays: dict[str, np.ndarray],
              analytic: dict[str, np.ndarray],
              loss_fn, eps: float) -> tuple[float, str]:
    """Central differences over every coordinate; returns (worst, name)."""
    worst, worst_name = 0.0, ""
    for name, arr in param_arrays.items():
        grad = analytic[name]
        flat = arr.reshape(-1)
        gflat = np.asarray(grad, dtype=np.float64).reshape(-1)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_fn()
            flat[i] = keep - eps
            down = loss_fn()
            flat[i] = keep
            num = (up - down) / (2.0 * eps)
            err = _rel_err(float(gflat[i]), num)
            if err > worst:
                worst, worst_name = err, name
    return worst, worst_name


def _toy_matrix(rng, d: int, seq: int) -> EmbeddingMatrix:
    n_tokens = int(rng.integers(0, seq + 1))
    rows = np.zeros((seq + 1, d), dtype=np.float32)
    rows[:n_tokens + 1] = rng.normal(size=(n_tokens + 1, d)).astype(np.float32)
    return EmbeddingMatrix(rows=rows, n_tokens=n_tokens)


def _check_pooling(rng, eps, d=8):
    seq, first_k = 5, 2
    E = _toy_matrix(rng, d, seq)
    p = PoolParams.init(d, rng, dropout_rate=0.25, first_k=first_k)
    mask = rng.random(d) >= 0.25
    concat = bool(rng.integers(0, 2))
    fwd = pool_concat_fwd if concat else pool_cls_fwd
    w = rng.normal(size=concat_dim(d, first_k) if concat else d)

    def loss_fn():
        pv, _ = fwd(E, p, "train", mask=mask)
        return float(w @ pv.values)

    _, cache = fwd(E, p, "train", mask=mask)
    analytic = pool_concat_bwd(w, cache, d) if concat else pool_cls_bwd(w, cache)
    return _fd_check({"W_pool": p.W_pool, "b_pool": p.b_pool}, analytic, loss_fn, eps)


def _check_linear_head(rng, eps, d=8):
    n_out = 6
    head = LinearHead.init(n_out, d, rng)
    head.W[...] = rng.normal(size=head.W.shape)
    head.b[...] = rng.normal(size=head.b.shape)
    v = rng.normal(size=d)
    y = rng.integers(0, 2, size=n_out).astype(np.float64)

    def loss_fn():
        loss, _ = bce_with_logits(linear_forward(v, head), y)
        return loss

    _, ds = bce_with_logits(linear_forward(v, head), y)
    head_grads, dv = linear_backward(ds, v, head)
    arrays = {"W": head.W, "b": head.b, "v": v}
    analytic = {**head_grads, "v": dv}
    return _fd_check(arrays, analytic, loss_fn, eps)


def _check_gru_cell(rng, eps, h=8):
    in_dim = h + 3
    g = GruParams.init(in_dim, h, rng)
    x = rng.normal(size=in_dim)
    h_prev = rng.normal(size=h)
    w = rng.normal(size=h)

    def loss_fn():
        return float(w @ gru_cell(x, h_prev, g))

    _, cache = gru_cell_fwd(x, h_prev, g)
    dx, dh_prev, grads = gru_cell_bwd(w, cache, g)
    arrays = {name: getattr(g, name)
              for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h",
                           "b_z", "b_r", "b_h")}
    arrays.update(x=x, h_prev=h_prev)
    analytic = {**grads, "x": dx, "h_prev": dh_prev}
    return _fd_check(arrays, analytic, loss_fn, eps)


_GRAD_CHECK_TAXONOMY = "1\tA\n1.1\tB\n1.1.1\tC\n1.1.2\tD\n1.2\tE\n2\tF\n2.1\tG\n"


def _check_teacher_loss(rng, eps, d=8, h=8):
    o = parse_ontology(_GRAD_CHECK_TAXONOMY)
    seq, first_k = 4, 2
    pooling = "CONCAT" if rng.integers(0, 2) else "CLS"
    cfg = TrainConfig(head="gru", pooling=pooling, d=d, seq=seq,
                      first_k=first_k, h=h, dropout=0.0, seed=0)
    model = Model.build(cfg, o)
    params = model.params
    for name, arr in params.items():
        arr[...] = rng.normal(size=arr.shape) * 0.5
    E = _toy_matrix(rng, d, seq)
    leaves = ["1.1.1", "1.2"] if rng.integers(0, 2) else ["2.1"]
    gold = frozenset(leaves)

    def loss_fn():
        loss, _ = model.sample_loss_grads(E, gold, mode="eval")
        return loss

    _, analytic = model.sample_loss_grads(E, gold, mode="eval")
    return _fd_check(params, analytic, loss_fn, eps)


_CHECKERS = {
    "pooling": _check_pooling,
    "linear-head": _check_linear_head,
    "gru-cell": _check_gru_cell,
    "teacher-forced-loss": _check_teacher_loss,
}


def grad_check(component: str, trials: int = 25, eps: float = 1e-4,
               seed: int = 0) -> dict:
    """Compare hand-derived gradients against central finite differences.

    Returns the worst relative error over all trials and coordinates.
    """
    if component not in _CHECKERS:
        raise ValueError(
            f"component must be one of {GRAD_CHECK_COMPONENTS}, got {component!r}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    checker = _CHECKERS[component]
    worst, worst_name, worst_trial = 0.0, "", -1
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        err, name = checker(rng, eps)
        if err > worst:
            worst, worst_name, worst_trial = err, name, trial
    return {"component": component, "trials": trials, "eps": eps,
            "max_rel_error": worst, "worst_param": worst_name,
            "worst_trial": worst_trial}

"""Per-page embedding matrices and the three pooling strategies.

An embedding matrix holds one CLS row plus ``seq`` token positions of width
``d``; positions past the true token count are zero padding. Matrices come
either from the deterministic built-in hash encoder (desk-scale stand-in for
a frozen pretrained encoder) or from an EMB1 file written by an exporter.

Pooling reduces a matrix to a single vector:

- CLS: dimension-preserving linear layer + tanh over the CLS row, with
  inverted dropout at train time.
- MEAN: average of the CLS row and the real token rows.
- CONCAT: CLS pooling ++ first ``first_k`` token rows flattened ++ mean of
  the remaining real token rows.
"""

from __future__ import annotations

import io
import os
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .corpus import DuplicatePage

DEFAULT_D = 768
DEFAULT_SEQ = 511
DEFAULT_FIRST_K = 200
DEFAULT_DROPOUT = 0.1

_MAGIC = b"EMB1"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")          # magic, version, d, seq, count
_REC_HEAD = struct.Struct("<Q8sI")          # page_id, lang, n_tokens

_M64 = (1 << 64) - 1


class EncoderError(Exception):
    """Base class for embedding-file and pooling failures."""


class BadMagic(EncoderError):
    pass


class VersionMismatch(EncoderError):
    pass


class TruncatedFile(EncoderError):
    pass


class MissingPage(EncoderError):
    pass


class DimensionMismatch(EncoderError):
    pass


@dataclass(frozen=True)
class EmbeddingMatrix:
    """(seq+1) x d float32 matrix; row 0 is CLS, rows 1..n_tokens are real."""

    rows: np.ndarray
    n_tokens: int

    def __post_init__(self):
        rows = self.rows
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise DimensionMismatch(f"rows must be (seq+1, d), got {rows.shape}")
        if rows.dtype != np.float32:
            raise DimensionMismatch(f"rows must be float32, got {rows.dtype}")
        if not 0 <= self.n_tokens <= self.seq:
            raise ValueError(f"n_tokens {self.n_tokens} outside [0, {self.seq}]")
        if not np.all(np.isfinite(rows)):
            raise ValueError("non-finite embedding values")
        if self.n_tokens < self.seq and np.any(rows[self.n_tokens + 1:]):
            raise ValueError("padding rows must be exactly zero")

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def seq(self) -> int:
        return self.rows.shape[0] - 1

    @property
    def cls_row(self) -> np.ndarray:
        return self.rows[0]

    @property
    def token_rows(self) -> np.ndarray:
        return self.rows[1:self.n_tokens + 1]


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _M64
    return h


def splitmix64(x) -> np.ndarray:
    """SplitMix64 output for state(s) x: one generator step, vectorized."""
    with np.errstate(over="ignore"):
        z = (np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def hash_encode(text: str, d: int, seq: int, seed: int = 0) -> EmbeddingMatrix:
    """Deterministic position-independent token embeddings.

    Tokens are the Unicode-whitespace-split words of the lowercased text,
    truncated to ``seq``. Component j of a token's vector is 2u-1 with
    u = SplitMix64(seed xor FNV1a64(token bytes) xor j) / 2^64. The CLS row
    is the mean of the token rows (zero when there are none).
    """
    if d < 1 or seq < 1:
        raise ValueError(f"d and seq must be >= 1, got d={d} seq={seq}")
    tokens = text.lower().split()[:seq]
    rows64 = np.zeros((seq + 1, d), dtype=np.float64)
    j = np.arange(d, dtype=np.uint64)
    seed_u = np.uint64(seed & _M64)
    cache: dict[str, np.ndarray] = {}
    for pos, token in enumerate(tokens, start=1):
        vec = cache.get(token)
        if vec is None:
            state = (seed_u ^ np.uint64(fnv1a64(token.encode("utf-8")))) ^ j
            u = splitmix64(state).astype(np.float64) / 2.0**64
            vec = 2.0 * u - 1.0
            cache[token] = vec
        rows64[pos] = vec
    if tokens:
        rows64[0] = rows64[1:len(tokens) + 1].mean(axis=0)
    return EmbeddingMatrix(rows=rows64.astype(np.float32), n_tokens=len(tokens))


def _encode_lang(lang: str) -> bytes:
    raw = lang.encode("ascii")
    if not 1 <= len(raw) <= 8:
        raise ValueError(f"lang must be 1..8 ASCII bytes, got {lang!r}")
    return raw.ljust(8, b"\x00")


def write_embeddings(path, records, d: int, seq: int) -> int:
    """Write (page_id, lang, EmbeddingMatrix) records as an EMB1 file.

    Returns the record count. Records are materialized lazily; the count
    field is patched after the body is written.
    """
    count = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, seq, 0))
        for page_id, lang, mat in records:
            if mat.d != d or mat.seq != seq:
                raise DimensionMismatch(
                    f"record ({lang}, {page_id}) has shape d={mat.d} seq={mat.seq}, "
                    f"file header says d={d} seq={seq}")
            fh.write(_REC_HEAD.pack(page_id, _encode_lang(lang), mat.n_tokens))
            fh.write(np.ascontiguousarray(mat.rows, dtype="<f4").tobytes())
            count += 1
        fh.seek(0)
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, seq, count))
    return count


class EmbeddingProvider:
    """Random access to EMB1 records by (lang, page_id)."""

    def __init__(self, path):
        self._path = os.fspath(path)
        self._fh = open(self._path, "rb")
        self._lock = threading.Lock()  # the handle's seek+read must not interleave
        try:
            self._scan()
        except Exception:
            self._fh.close()
            raise

    def _scan(self):
        header = self._fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TruncatedFile(f"{self._path}: header truncated")
        magic, version, d, seq, count = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise BadMagic(f"{self._path}: magic {magic!r}")
        if version != _VERSION:
            raise VersionMismatch(f"{self._path}: version {version}, expected {_VERSION}")
        self.d, self.seq = d, seq
        self._payload = (seq + 1) * d * 4
        rec_size = _REC_HEAD.size + self._payload
        self._index: dict[tuple[str, int], tuple[int, int]] = {}
        offset = _HEADER.size
        for _ in range(count):
            head = self._fh.read(_REC_HEAD.size)
            if len(head) < _REC_HEAD.size:
                raise TruncatedFile(f"{self._path}: record header truncated at {offset}")
            page_id, lang_raw, n_tokens = _REC_HEAD.unpack(head)
            lang = lang_raw.rstrip(b"\x00").decode("ascii")
            if n_tokens > seq:
                raise TruncatedFile(
                    f"{self._path}: record ({lang}, {page_id}) claims n_tokens "
                    f"{n_tokens} > seq {seq}")
            key = (lang, page_id)
            if key in self._index:
                raise DuplicatePage(f"{self._path}: duplicate record ({lang}, {page_id})")
            self._index[key] = (offset + _REC_HEAD.size, n_tokens)
            offset += rec_size
            self._fh.seek(offset)
        size = os.fstat(self._fh.fileno()).st_size
        if size < offset:
            raise TruncatedFile(f"{self._path}: {offset - size} payload bytes missing")
        if size > offset:
            raise TruncatedFile(f"{self._path}: trailing data after {count} records")

    def get(self, lang: str, page_id: int) -> EmbeddingMatrix:
        try:
            offset, n_tokens = self._index[(lang, page_id)]
        except KeyError:
            raise MissingPage(f"({lang}, {page_id}) not in {self._path}") from None
        with self._lock:
            self._fh.seek(offset)
            buf = self._fh.read(self._payload)
        if len(buf) < self._payload:
            raise TruncatedFile(f"{self._path}: record payload truncated")
        rows = np.frombuffer(buf, dtype="<f4").reshape(self.seq + 1, self.d)
        return EmbeddingMatrix(rows=rows.astype(np.float32, copy=True), n_tokens=n_tokens)

    def keys(self):
        return self._index.keys()

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key) -> bool:
        return key in self._index

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_embeddings(path) -> EmbeddingProvider:
    """Open an EMB1 file and build its (lang, page_id) index by scanning."""
    return EmbeddingProvider(path)


@dataclass
class PoolParams:
    """Trainable CLS-pooling parameters plus pooling configuration."""

    W_pool: np.ndarray
    b_pool: np.ndarray
    dropout_rate: float = DEFAULT_DROPOUT
    first_k: int = DEFAULT_FIRST_K

    @classmethod
    def init(cls, d: int, rng: np.random.Generator,
             dropout_rate: float = DEFAULT_DROPOUT,
             first_k: int = DEFAULT_FIRST_K) -> "PoolParams":
        a = np.sqrt(6.0 / (d + d))
        return cls(W_pool=rng.uniform(-a, a, size=(d, d)),
                   b_pool=np.zeros(d), dropout_rate=dropout_rate, first_k=first_k)


@dataclass(frozen=True)
class PooledVector:
    values: np.ndarray
    strategy: str

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def concat_dim(d: int, first_k: int) -> int:
    """CONCAT output width: CLS block + first_k token rows + tail mean."""
    return d * (first_k + 2)


def _check_pool_dims(E: EmbeddingMatrix, p: PoolParams):
    d = E.d
    if p.W_pool.shape != (d, d) or p.b_pool.shape != (d,):
        raise DimensionMismatch(
            f"pool params for d={p.W_pool.shape} do not match embedding d={d}")


def _dropout_mask(d: int, rate: float, mode: str, rng, mask):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        return None
    if mask is not None:
        return np.asarray(mask, dtype=bool)
    if rate <= 0.0:
        return np.ones(d, dtype=bool)
    if rng is None:
        raise ValueError("train-mode pooling needs an rng (or an explicit mask)")
    return rng.random(d) >= rate


def pool_cls_fwd(E: EmbeddingMatrix, p: PoolParams, mode: str = "eval",
                 rng: np.random.Generator | None = None, mask=None):
    """CLS pooling: tanh(W_pool @ cls + b_pool), inverted dropout at train.

    Returns (PooledVector, cache); the cache feeds pool_cls_bwd.
    """
    _check_pool_dims(E, p)
    cls = E.cls_row.astype(np.float64)
    t = np.tanh(p.W_pool @ cls + p.b_pool)
    keep = _dropout_mask(E.d, p.dropout_rate, mode, rng, mask)
    if keep is None:
        out, scale = t, 1.0
    elif p.dropout_rate >= 1.0:
        out, scale = np.zeros_like(t), 0.0
    else:
        scale = 1.0 / (1.0 - p.dropout_rate)
        out = t * keep * scale
    cache = {"cls": cls, "t": t, "keep": keep, "scale": scale}
    return PooledVector(values=out, strategy="CLS"), cache


def pool_cls_bwd(grad: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
    """Gradients of CLS pooling wrt W_pool and b_pool."""
    t, keep, scale = cache["t"], cache["keep"], cache["scale"]
    dt = grad if keep is None else grad * keep * scale
    da = dt * (1.0 - t * t)  # tanh'
    return {"W_pool": np.outer(da, cache["cls"]), "b_pool": da}


def pool_mean(E: EmbeddingMatrix) -> PooledVector:
    """Mean of the CLS row and the real token rows; CLS row alone if none."""
    if E.n_tokens == 0:
        values = E.cls_row.astype(np.float64)
    else:
        stack = E.rows[:E.n_tokens + 1].astype(np.float64)
        values = stack.mean(axis=0)
    return PooledVector(values=values, strategy="MEAN")


def pool_concat_fwd(E: EmbeddingMatrix, p: PoolParams, mode: str = "eval",
                    rng: np.random.Generator | None = None, mask=None):
    """CLS pooling ++ first_k token rows flattened ++ tail mean.

    Token positions past n_tokens contribute zero rows; the tail mean covers
    real tokens at positions first_k+1..seq and is zero when there are none.
    """
    if p.first_k > E.seq:
        raise DimensionMismatch(f"first_k {p.first_k} > seq {E.seq}")
    head, cache = pool_cls_fwd(E, p, mode, rng, mask)
    d, k = E.d, p.first_k
    flat = E.rows[1:k + 1].astype(np.float64).reshape(k * d)
    n_tail = E.n_tokens - k
    if n_tail > 0:
        tail = E.rows[k + 1:E.n_tokens + 1].astype(np.float64).mean(axis=0)
    else:
        tail = np.zeros(d)
    values = np.concatenate([head.values, flat, tail])
    return PooledVector(values=values, strategy="CONCAT"), cache


def pool_concat_bwd(grad: np.ndarray, cache: dict, d: int) -> dict[str, np.ndarray]:
    """Gradients of CONCAT pooling; only the CLS block carries parameters."""
    return pool_cls_bwd(grad[:d], cache)

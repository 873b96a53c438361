"""Corpus ingestion, stratified splitting, and the interleaved slice schedule.

Pages arrive as JSONL (one object per line, keys exactly page_id / lang /
text / labels); files ending in ``.gz`` are gzip-decompressed. The split is
stratified per language, and training order interleaves languages slice by
slice: all languages' first slices, then all second slices, and so on.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .ontology import NonLeafGold, Ontology, UnknownLabel

# Languages used by the reference configuration, in schedule order.
DEFAULT_LANGS = ("en", "de", "es", "fr", "it", "pt", "ru", "tr", "ar", "zh", "pl", "nl", "ko")

DEFAULT_N_SLICES = 10
DEFAULT_SPLIT_RATIO = 0.95

_PAGE_KEYS = {"page_id", "lang", "text", "labels"}
_U64_MAX = 2**64 - 1


class CorpusError(Exception):
    """Base class for corpus validation failures."""


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class DuplicatePage(CorpusError):
    pass


class UnknownLanguage(CorpusError):
    pass


@dataclass(frozen=True)
class Page:
    """One document with its gold leaf-label set."""

    page_id: int
    lang: str
    text: str
    gold: frozenset[str]


@dataclass(frozen=True)
class SplitCorpus:
    train: tuple[Page, ...]
    dev: tuple[Page, ...]
    seed: int
    ratio: float


@dataclass(frozen=True)
class SliceSchedule:
    """Block order for one epoch: (lang, slice_index, train indices)."""

    order: tuple[tuple[str, int, tuple[int, ...]], ...]
    n_slices: int
    langs: tuple[str, ...] = field(default=())


def _lang_digest(lang: str) -> int:
    return int.from_bytes(hashlib.sha256(lang.encode("utf-8")).digest()[:8], "little")


def _check_lang(lang: object, line_no: int) -> str:
    if not isinstance(lang, str) or not (1 <= len(lang) <= 8) or not lang.isascii() \
            or not lang.isalpha() or lang != lang.lower():
        raise MalformedLine(line_no, f"bad language code {lang!r}")
    return lang


def parse_corpus(source, ontology: Ontology) -> list[Page]:
    """Parse and validate a JSONL corpus from a path or an iterable of lines.

    Every label must be a leaf of ``ontology``; (lang, page_id) pairs must be
    unique. Raises MalformedLine / UnknownLabel / NonLeafGold / DuplicatePage.
    """
    if isinstance(source, (str, os.PathLike)):
        opener = gzip.open if str(source).endswith(".gz") else open
        with opener(source, "rt", encoding="utf-8") as fh:
            return parse_corpus(fh, ontology)

    pages: list[Page] = []
    seen: set[tuple[str, int]] = set()
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict) or set(obj) != _PAGE_KEYS:
            raise MalformedLine(line_no, f"keys must be exactly {sorted(_PAGE_KEYS)}")

        page_id = obj["page_id"]
        if isinstance(page_id, bool) or not isinstance(page_id, int) \
                or not (0 <= page_id <= _U64_MAX):
            raise MalformedLine(line_no, f"page_id must be an unsigned 64-bit integer, got {page_id!r}")
        lang = _check_lang(obj["lang"], line_no)
        text = obj["text"]
        if not isinstance(text, str):
            raise MalformedLine(line_no, "text must be a string")
        labels = obj["labels"]
        if not isinstance(labels, list) or not labels \
                or any(not isinstance(x, str) for x in labels):
            raise MalformedLine(line_no, "labels must be a non-empty list of strings")
        if len(set(labels)) != len(labels):
            raise MalformedLine(line_no, "labels must be unique")
        for label in labels:
            if label not in ontology:
                raise UnknownLabel(f"line {line_no}: unknown label {label!r}")
            if not ontology.is_leaf(label):
                raise NonLeafGold(f"line {line_no}: gold label {label!r} is not a leaf")

        key = (lang, page_id)
        if key in seen:
            raise DuplicatePage(f"line {line_no}: duplicate page ({lang}, {page_id})")
        seen.add(key)
        pages.append(Page(page_id=page_id, lang=lang, text=text, gold=frozenset(labels)))
    return pages


def split(pages: list[Page], seed: int, ratio: float = DEFAULT_SPLIT_RATIO) -> SplitCorpus:
    """Stratified per-language random split into train and dev.

    Train size per language is round-half-up of ratio * N, so a single-page
    language lands in train. Output lists are in canonical (lang, page_id)
    order; the split depends only on (seed, page set), not input order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    by_lang: dict[str, list[Page]] = {}
    for page in sorted(pages, key=lambda p: (p.lang, p.page_id)):
        by_lang.setdefault(page.lang, []).append(page)

    train: list[Page] = []
    dev: list[Page] = []
    for lang in sorted(by_lang):
        group = by_lang[lang]
        n_train = int(np.floor(ratio * len(group) + 0.5))
        rng = np.random.default_rng([seed, _lang_digest(lang)])
        perm = rng.permutation(len(group))
        chosen = set(perm[:n_train].tolist())
        train.extend(p for i, p in enumerate(group) if i in chosen)
        dev.extend(p for i, p in enumerate(group) if i not in chosen)
    return SplitCorpus(train=tuple(train), dev=tuple(dev), seed=seed, ratio=ratio)


def slice_schedule(corpus: SplitCorpus, n_slices: int = DEFAULT_N_SLICES,
                   langs: tuple[str, ...] | None = None) -> SliceSchedule:
    """Interleaved slice order: for s in 1..n_slices, for each language, one block.

    Blocks hold indices into ``corpus.train``. Per language, slice sizes
    differ by at most one page (earlier slices get the remainder).
    """
    present: dict[str, list[int]] = {}
    for idx, page in enumerate(corpus.train):
        present.setdefault(page.lang, []).append(idx)
    if langs is None:
        langs = tuple(sorted(present))
    else:
        langs = tuple(langs)
        missing = [lang for lang in langs if lang not in present]
        if missing:
            raise UnknownLanguage(f"no training pages for language(s) {missing}")
    if n_slices < 1:
        raise ValueError(f"n_slices must be >= 1, got {n_slices}")

    chunks = {lang: np.array_split(np.asarray(present[lang], dtype=np.int64), n_slices)
              for lang in langs}
    order = []
    for s in range(1, n_slices + 1):
        for lang in langs:
            order.append((lang, s, tuple(chunks[lang][s - 1].tolist())))
    return SliceSchedule(order=tuple(order), n_slices=n_slices, langs=langs)


def shuffle_seed(seed: int, epoch: int, lang: str, slice_index: int) -> list[int]:
    """Derived seed material for one schedule block's per-epoch shuffle."""
    return [seed, epoch, slice_index, _lang_digest(lang)]


def iter_batches(corpus: SplitCorpus, schedule: SliceSchedule, epoch: int,
                 batch_size: int, seed: int):
    """Yield (lang, slice_index, pages) batches for one epoch.

    Within each schedule block, page order is shuffled with a seed derived
    from (seed, epoch, lang, slice_index); batches are all of size
    ``batch_size`` except possibly the last one in a block.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    for lang, s, indices in schedule.order:
        if not indices:
            continue
        rng = np.random.default_rng(shuffle_seed(seed, epoch, lang, s))
        perm = rng.permutation(len(indices))
        shuffled = [corpus.train[indices[k]] for k in perm]
        for start in range(0, len(shuffled), batch_size):
            yield lang, s, shuffled[start:start + batch_size]

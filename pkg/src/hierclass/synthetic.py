"""Synthetic taxonomy and corpus generation for desk-scale runs.

Pages carry one signature token per ancestor of each gold leaf, plus noise
tokens, so the hash encoder turns label structure into linearly separable
geometry. A small fraction of pages get a second gold leaf, mirroring a
corpus where almost every page has a single category.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, fields

import numpy as np

from .ontology import Ontology, ancestors, format_label_id, parse_ontology

DEFAULT_BRANCHING = (3, 3, 3, 2)
DEFAULT_SYNTH_LANGS = ("aa", "bb", "cc")


@dataclass
class SyntheticConfig:
    branching: tuple[int, ...] = DEFAULT_BRANCHING
    langs: tuple[str, ...] = DEFAULT_SYNTH_LANGS
    pages_per_lang: int = 2000
    multi_label_rate: float = 0.025
    noise_tokens: int = 3
    noise_vocab: int = 50
    seed: int = 0

    def __post_init__(self):
        self.branching = tuple(int(b) for b in self.branching)
        self.langs = tuple(self.langs)
        if not self.branching or any(b < 1 for b in self.branching):
            raise ValueError(f"branching must be positive, got {self.branching}")
        if len(self.branching) > 4:
            raise ValueError("branching deeper than 4 levels")
        if not self.langs or len(set(self.langs)) != len(self.langs):
            raise ValueError("langs must be non-empty and unique")
        if self.pages_per_lang < 1:
            raise ValueError(f"pages_per_lang must be >= 1, got {self.pages_per_lang}")
        if not 0.0 <= self.multi_label_rate < 1.0:
            raise ValueError(f"multi_label_rate must be in [0, 1), got "
                             f"{self.multi_label_rate}")
        if self.noise_tokens < 0 or self.noise_vocab < 1:
            raise ValueError("noise_tokens must be >= 0 and noise_vocab >= 1")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["branching"] = list(out["branching"])
        out["langs"] = list(out["langs"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config key {unknown[0]!r}")
        return cls(**data)


def gen_taxonomy(branching=DEFAULT_BRANCHING) -> list[tuple[str, str]]:
    """Full uniform tree: branching[k] children at depth k+1.

    Returns (id, name) pairs in canonical order; (3, 3, 3, 2) gives
    3 + 9 + 27 + 54 = 93 nodes with all 54 leaves at depth 4.
    """
    branching = tuple(int(b) for b in branching)
    pairs: list[tuple[str, str]] = []

    def emit(prefix: tuple[int, ...], level: int):
        label = format_label_id(prefix)
        pairs.append((label, "Cat_" + "_".join(str(s) for s in prefix)))
        if level < len(branching):
            for child in range(1, branching[level] + 1):
                emit(prefix + (child,), level + 1)

    for root in range(1, branching[0] + 1):
        emit((root,), 1)
    return pairs


def signature_tokens(leaf: str, o: Ontology) -> list[str]:
    """One token per ancestor of the leaf, shared across languages.

    Sharing keeps the task linearly separable at small hash dimensions;
    language-specific vocabularies would triple the planted token count
    and push cross-token hash interference past what d=32 can carry.
    """
    return [f"w{label}" for label in ancestors(o, leaf)]


def gen_pages(o: Ontology, cfg: SyntheticConfig) -> list[dict]:
    """Deterministic corpus rows {page_id, lang, text, labels}."""
    leaves = list(o.leaf_ids)
    rng = np.random.default_rng([cfg.seed])
    rows = []
    page_id = 0
    for lang in cfg.langs:
        for _ in range(cfg.pages_per_lang):
            page_id += 1
            gold = [leaves[int(rng.integers(len(leaves)))]]
            if rng.random() < cfg.multi_label_rate:
                extra = leaves[int(rng.integers(len(leaves)))]
                while extra == gold[0]:
                    extra = leaves[int(rng.integers(len(leaves)))]
                gold.append(extra)
            tokens: list[str] = []
            for leaf in gold:
                tokens.extend(signature_tokens(leaf, o))
            for _ in range(cfg.noise_tokens):
                tokens.append(f"n{lang}.{int(rng.integers(cfg.noise_vocab))}")
            rng.shuffle(tokens)
            rows.append({"page_id": page_id, "lang": lang,
                         "text": " ".join(tokens), "labels": sorted(gold)})
    return rows


def write_synthetic(out_dir, cfg: SyntheticConfig, extra_manifest: dict | None = None):
    """Write taxonomy.tsv, corpus.jsonl, and manifest.json under out_dir.

    Returns the manifest dict. Identical configs produce identical files.
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = gen_taxonomy(cfg.branching)
    taxonomy_path = out / "taxonomy.tsv"
    taxonomy_path.write_text("".join(f"{i}\t{n}\n" for i, n in pairs))
    o = parse_ontology(taxonomy_path.read_text())

    rows = gen_pages(o, cfg)
    corpus_path = out / "corpus.jsonl"
    with corpus_path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")

    planted: dict[str, int] = {}
    multi = 0
    for row in rows:
        if len(row["labels"]) > 1:
            multi += 1
        for label in row["labels"]:
            planted[label] = planted.get(label, 0) + 1
    manifest = {
        "generator": cfg.to_dict(),
        "taxonomy": {"path": taxonomy_path.name, "n_total": o.n_total,
                     "n_leaf": o.n_leaf, "content_hash": o.content_hash()},
        "corpus": {"path": corpus_path.name, "n_pages": len(rows),
                   "n_multi_label": multi},
        "planted_labels": {k: planted[k] for k in sorted(planted)},
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest

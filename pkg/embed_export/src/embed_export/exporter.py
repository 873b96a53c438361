"""Run a frozen pretrained encoder over corpus pages and write EMB1 files.

The classification engine trains on precomputed token embeddings; this
module produces them. Each corpus page is tokenized into subwords, a [CLS]
token is prepended, the sequence is truncated at ``seq`` subwords, and the
encoder's final-layer hidden states are written out: the CLS row first,
then one row per real token, then exact-zero padding rows up to ``seq``.
No layer averaging, no sliding windows over long pages.

Output is the EMB1 binary layout, little-endian: magic ``EMB1``, version
u32=1, d u32, seq u32, count u64; then per record page_id u64, lang as 8
NUL-padded ASCII bytes, n_tokens u32, and (seq+1) x d float32 rows. The
count field is patched into the header after the last record so records
can stream straight from inference. A JSON manifest (model id, d, seq,
page count, corpus hash, timestamp) is written next to the output file.
"""

from __future__ import annotations

import argparse
import errno
import gzip
import hashlib
import json
import os
import struct
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

_MAGIC = b"EMB1"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")          # magic, version, d, seq, count
_REC_HEAD = struct.Struct("<Q8sI")          # page_id, lang, n_tokens

_PAGE_KEYS = {"page_id", "lang", "text", "labels"}
_U64_MAX = 2**64 - 1


class ModelLoadError(Exception):
    """The encoder identifier did not resolve to a loadable model."""


class TokenizationError(Exception):
    """The tokenizer failed on one page; carries the offending page_id."""

    def __init__(self, page_id: int, reason: str):
        super().__init__(f"page {page_id}: {reason}")
        self.page_id = page_id


class DiskFull(Exception):
    """The filesystem ran out of space while writing the output."""


class CorpusFormatError(ValueError):
    """A corpus line violates the JSONL page format."""


@dataclass(frozen=True)
class ExportJob:
    """One export run: corpus in, EMB1 file plus manifest out.

    ``d`` is not a field; it comes from the loaded model. ``device`` is a
    hint: a CUDA request on a CPU-only machine falls back to CPU so jobs
    written on GPU boxes stay runnable anywhere.
    """

    corpus_path: str | os.PathLike
    out_path: str | os.PathLike
    model_id: str | os.PathLike
    seq: int = 511
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        if not isinstance(self.seq, int) or isinstance(self.seq, bool) \
                or not (1 <= self.seq < 2**32):
            raise ValueError(f"seq must be a positive u32, got {self.seq!r}")
        if not isinstance(self.batch_size, int) or isinstance(self.batch_size, bool) \
                or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size!r}")


def _check_lang(lang: object, line_no: int) -> str:
    if not isinstance(lang, str) or not (1 <= len(lang) <= 8) or not lang.isascii() \
            or not lang.isalpha() or lang != lang.lower():
        raise CorpusFormatError(f"line {line_no}: bad language code {lang!r}")
    return lang


def read_corpus(path) -> list[tuple[int, str, str]]:
    """Read (page_id, lang, text) triples from a JSONL corpus, in file order.

    Enforces the shared page format: keys exactly page_id/lang/text/labels,
    unsigned 64-bit page_id, 1..8 lowercase ASCII letters of lang, string
    text, list labels, unique (lang, page_id). Label contents are not
    inspected; embeddings do not depend on them. ``.gz`` paths are
    gzip-decompressed.
    """
    opener = gzip.open if str(path).endswith(".gz") else open
    pages: list[tuple[int, str, str]] = []
    seen: set[tuple[str, int]] = set()
    with opener(path, "rt", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or set(obj) != _PAGE_KEYS:
                raise CorpusFormatError(
                    f"line {line_no}: keys must be exactly {sorted(_PAGE_KEYS)}")
            page_id = obj["page_id"]
            if isinstance(page_id, bool) or not isinstance(page_id, int) \
                    or not (0 <= page_id <= _U64_MAX):
                raise CorpusFormatError(
                    f"line {line_no}: page_id must be an unsigned 64-bit integer")
            lang = _check_lang(obj["lang"], line_no)
            if not isinstance(obj["text"], str):
                raise CorpusFormatError(f"line {line_no}: text must be a string")
            if not isinstance(obj["labels"], list):
                raise CorpusFormatError(f"line {line_no}: labels must be a list")
            key = (lang, page_id)
            if key in seen:
                raise CorpusFormatError(f"line {line_no}: duplicate page ({lang}, {page_id})")
            seen.add(key)
            pages.append((page_id, lang, obj["text"]))
    return pages


def _load_encoder(model_id, device: str):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise ModelLoadError(f"cannot load encoder {model_id!r}: {exc}") from exc
    if getattr(tokenizer, "cls_token_id", None) is None:
        raise ModelLoadError(f"encoder {model_id!r} has no [CLS] token")
    if str(device).startswith("cuda") and not torch.cuda.is_available():
        device = "cpu"
    model.to(device)
    model.eval()
    return tokenizer, model, int(model.config.hidden_size), device


def _subword_ids(tokenizer, page_id: int, text: str, seq: int) -> list[int]:
    # no special tokens from the tokenizer; the [CLS] prefix is added by hand
    try:
        ids = tokenizer(text, add_special_tokens=False)["input_ids"]
    except Exception as exc:
        raise TokenizationError(page_id, str(exc)) from exc
    return ids[:seq]


def _embed_records(pages, tokenizer, model, d: int, seq: int,
                   batch_size: int, device: str):
    """Yield (page_id, lang, n_tokens, rows) per page, batching inference."""
    import torch

    cls_id = tokenizer.cls_token_id
    pad_id = tokenizer.pad_token_id or 0
    for start in range(0, len(pages), batch_size):
        batch = pages[start:start + batch_size]
        ids = [_subword_ids(tokenizer, pid, text, seq) for pid, _, text in batch]
        width = 1 + max(len(i) for i in ids)
        input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
        mask = torch.zeros((len(batch), width), dtype=torch.long)
        for row, page_ids in enumerate(ids):
            input_ids[row, 0] = cls_id
            input_ids[row, 1:1 + len(page_ids)] = torch.tensor(page_ids, dtype=torch.long)
            mask[row, :1 + len(page_ids)] = 1
        with torch.inference_mode():
            hidden = model(input_ids=input_ids.to(device),
                           attention_mask=mask.to(device)).last_hidden_state
        hidden = hidden.to("cpu", torch.float32).numpy()
        for row, (page_id, lang, _) in enumerate(batch):
            n_tokens = len(ids[row])
            rows = np.zeros((seq + 1, d), dtype=np.float32)
            rows[:1 + n_tokens] = hidden[row, :1 + n_tokens]
            yield page_id, lang, n_tokens, rows


def _write_emb1(path, d: int, seq: int, records) -> int:
    """Stream records into an EMB1 file; the count is patched in afterwards."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, seq, 0))
        for page_id, lang, n_tokens, rows in records:
            fh.write(_REC_HEAD.pack(page_id, lang.encode("ascii").ljust(8, b"\x00"),
                                    n_tokens))
            fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
            count += 1
        fh.seek(0)
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, seq, count))
    return count


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export(job: ExportJob) -> dict:
    """Run the job and return its manifest.

    The manifest is also written as JSON next to the output file
    (``<out_path>.manifest.json``). Re-running the same job reproduces the
    EMB1 file byte for byte; only the manifest timestamp moves.
    """
    pages = read_corpus(job.corpus_path)
    tokenizer, model, d, device = _load_encoder(job.model_id, job.device)
    records = _embed_records(pages, tokenizer, model, d, job.seq,
                             job.batch_size, device)
    try:
        count = _write_emb1(job.out_path, d, job.seq, records)
    except OSError as exc:
        if exc.errno == errno.ENOSPC:
            raise DiskFull(f"{job.out_path}: no space left on device") from exc
        raise
    manifest = {
        "model_id": str(job.model_id),
        "d": d,
        "seq": job.seq,
        "count": count,
        "corpus_sha256": _sha256(job.corpus_path),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    manifest_path = str(job.out_path) + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def main(argv=None) -> int:
    """Command-line wrapper: 0 success, 1 bad input, 2 runtime failure."""
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export frozen-encoder token embeddings to an EMB1 file.")
    parser.add_argument("--corpus", required=True, help="JSONL corpus path")
    parser.add_argument("--model", required=True, help="encoder name or directory")
    parser.add_argument("--out", required=True, help="EMB1 output path")
    parser.add_argument("--seq", type=int, default=511, help="max subword tokens per page")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        job = ExportJob(corpus_path=args.corpus, out_path=args.out,
                        model_id=args.model, seq=args.seq,
                        batch_size=args.batch_size, device=args.device)
        manifest = export(job)
    except (ModelLoadError, TokenizationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {manifest['count']} records (d={manifest['d']}, "
          f"seq={manifest['seq']}) to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

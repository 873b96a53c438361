"""Helpers for exercising the exporter without downloading a real encoder."""

from __future__ import annotations

from pathlib import Path

_SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


def tiny_model_dir(path, d: int = 768, seed: int = 0) -> Path:
    """Write a one-layer randomly initialized BERT checkpoint to ``path``.

    The checkpoint is small but structurally real: AutoTokenizer and
    AutoModel load it offline, hidden size is ``d``, and the vocabulary is
    character-level, so any lowercase-ASCII word tokenizes to one piece per
    character. That makes expected token counts trivial to compute in
    tests. Same (path contents, d, seed) give identical weights.
    """
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    if d % 4 != 0:
        raise ValueError(f"d must be divisible by the 4 attention heads, got {d}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    vocab = _SPECIALS + list(_CHARS) + ["##" + c for c in _CHARS]
    (path / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = BertTokenizerFast(str(path / "vocab.txt"), do_lower_case=True)
    tokenizer.save_pretrained(path)
    config = BertConfig(vocab_size=len(vocab), hidden_size=d,
                        num_hidden_layers=1, num_attention_heads=4,
                        intermediate_size=128, max_position_embeddings=512)
    torch.manual_seed(seed)
    BertModel(config).save_pretrained(path)
    return path

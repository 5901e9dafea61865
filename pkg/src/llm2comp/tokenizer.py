"""Byte-level tokenizer: byte b -> id b, plus BOS/EOS/PAD."""

from __future__ import annotations

BOS, EOS, PAD = 256, 257, 258
BASE_VOCAB = 259
REPLACEMENT = "�".encode()


def tokenize(text: bytes | str) -> list[int]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return [BOS, *text, EOS]


def detokenize(ids) -> bytes:
    """Inverse of :func:`tokenize`; framing BOS/EOS are dropped, other specials become U+FFFD."""
    ids = list(ids)
    if ids and ids[0] == BOS:
        ids = ids[1:]
    if ids and ids[-1] == EOS:
        ids = ids[:-1]
    out = bytearray()
    for i in ids:
        out += bytes([i]) if 0 <= i < 256 else REPLACEMENT
    return bytes(out)

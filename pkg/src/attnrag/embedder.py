"""Deterministic toy text embedder based on character n-gram hashing.

Text is lowercased and runs of whitespace collapse to one space (leading
and trailing whitespace dropped).  Each character n-gram is hashed with
64-bit FNV-1a, seeded by prefixing the 8-byte little-endian seed to the
UTF-8 bytes of the n-gram.  The hash picks a bucket (``h % d``) and a sign
(top bit), and the bucket counts are L2-normalized.  Texts shorter than
``ngram_size`` contribute a single gram: the whole text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .graph import GraphFormatError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes, h: int = FNV64_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class EmbedderConfig:
    dimension: int
    seed: int = 0
    ngram_size: int = 3

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if self.ngram_size < 1:
            raise ValueError(f"ngram_size must be >= 1, got {self.ngram_size}")


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def char_ngrams(text: str, n: int) -> list[str]:
    if not text:
        return []
    if len(text) <= n:
        return [text]
    return [text[i : i + n] for i in range(len(text) - n + 1)]


def embed_text(cfg: EmbedderConfig, text: str) -> np.ndarray:
    """Embed ``text`` into a unit (or all-zero) vector of length ``cfg.dimension``."""
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    # Seed is folded into the hash state once; grams are hashed from there.
    base = fnv1a_64((cfg.seed & _MASK64).to_bytes(8, "little"))
    for gram in char_ngrams(normalize_text(text), cfg.ngram_size):
        h = fnv1a_64(gram.encode("utf-8"), base)
        vec[h % cfg.dimension] += -1.0 if h >> 63 else 1.0
    norm = float(np.sqrt(np.dot(vec, vec)))
    if norm > 0.0:
        vec /= norm
    return vec


class TextEmbedder:
    """Toy embedder with optional per-text overrides from a sidecar table."""

    def __init__(self, cfg: EmbedderConfig, overrides: Mapping[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.overrides = dict(overrides or {})
        for key, vec in self.overrides.items():
            if np.shape(vec) != (cfg.dimension,):
                raise ValueError(f"override {key!r} has length {np.size(vec)}, expected {cfg.dimension}")

    def __call__(self, text: str) -> np.ndarray:
        if text in self.overrides:
            return np.array(self.overrides[text], dtype=np.float64)
        return embed_text(self.cfg, text)

    def embed_many(self, texts) -> np.ndarray:
        out = np.zeros((len(texts), self.cfg.dimension))
        for i, t in enumerate(texts):
            out[i] = self(t)
        return out


def load_embedding_table(path: str | Path, dimension: int | None = None) -> dict[str, np.ndarray]:
    """Read an ``embeddings.jsonl`` sidecar of ``{"key", "embedding"}`` records."""
    p = Path(path)
    table: dict[str, np.ndarray] = {}
    try:
        fh = open(p, encoding="utf-8")
    except FileNotFoundError:
        raise GraphFormatError("missing file", p) from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                key = obj["key"]
                vec = np.asarray(obj["embedding"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise GraphFormatError(f"bad embedding record: {exc}", p, lineno) from None
            if not isinstance(key, str) or vec.ndim != 1:
                raise GraphFormatError("bad embedding record", p, lineno)
            if dimension is None:
                dimension = vec.shape[0]
            if vec.shape[0] != dimension:
                raise GraphFormatError(
                    f"dimension mismatch: embedding has length {vec.shape[0]}, expected {dimension}", p, lineno
                )
            if not np.all(np.isfinite(vec)):
                raise GraphFormatError("non-finite embedding value", p, lineno)
            table[key] = vec
    return table

"""Vocabulary, pre-trained embedding ingestion and token encoding."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ndmath import DTYPE, init

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1


class EmbeddingFormatError(ValueError):
    pass


class EmbeddingDimensionError(EmbeddingFormatError):
    pass


class Vocab:
    pad_index = PAD_INDEX
    unk_index = UNK_INDEX

    def __init__(self, tokens: Iterable[str] = ()):
        self.index_to_token: list[str] = [PAD, UNK]
        self.token_to_index: dict[str, int] = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        for tok in tokens:
            if tok in self.token_to_index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.token_to_index[tok] = len(self.index_to_token)
            self.index_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, tok: str) -> bool:
        return tok in self.token_to_index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.index_to_token == other.index_to_token

    def __getitem__(self, tok: str) -> int:
        return self.token_to_index.get(tok, UNK_INDEX)

    def words(self) -> list[str]:
        """Tokens from index 2 on, in index order."""
        return self.index_to_token[2:]

    def save(self, path) -> None:
        # one token per line, in index order (PAD and UNK included)
        Path(path).write_text("".join(t + "\n" for t in self.index_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:2] != [PAD, UNK]:
            raise ValueError(f"{path}: vocabulary must start with {PAD} and {UNK}")
        return cls(lines[2:])


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 1) -> Vocab:
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(tok for seq in corpus for tok in seq)
    counts.pop(PAD, None)
    counts.pop(UNK, None)
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(kept)


@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray  # |V| x d, row lookup
    found: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def coverage(self, vocab: Vocab) -> float:
        n = len(vocab) - 2
        return self.found / n if n > 0 else 0.0


def random_embeddings(vocab: Vocab, dim: int, rng: np.random.Generator) -> EmbeddingMatrix:
    mat = init((len(vocab), dim), "uniform", rng, -0.05, 0.05)
    mat[PAD_INDEX] = 0.0
    return EmbeddingMatrix(mat, 0)


def load_embeddings(path, vocab: Vocab, rng: np.random.Generator, dim: int = 200) -> EmbeddingMatrix:
    """Read a whitespace separated ``token v1 ... v_dim`` text file.

    Rows for vocabulary tokens missing from the file keep their seeded
    uniform(-0.05, 0.05) initialization; the PAD row is zero.
    """
    emb = random_embeddings(vocab, dim, rng)
    mat = emb.matrix
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                if len(parts) >= 2 and lineno == 1 and all(p.isdigit() for p in parts):
                    # word2vec-style "count dim" header line
                    if int(parts[-1]) != dim:
                        raise EmbeddingDimensionError(f"{path}: header declares dim {parts[-1]}, expected {dim}")
                    continue
                raise EmbeddingDimensionError(
                    f"{path}:{lineno}: expected token + {dim} values, got {len(parts) - 1} values"
                )
            tok = parts[0]
            idx = vocab.token_to_index.get(tok)
            if idx is None or idx == PAD_INDEX:
                continue
            try:
                row = np.array([float(v) for v in parts[1:]], dtype=DTYPE)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value for {tok!r}") from None
            if not np.all(np.isfinite(row)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value for {tok!r}")
            mat[idx] = row
            if idx != UNK_INDEX:
                seen.add(idx)
    mat[PAD_INDEX] = 0.0
    emb.found = len(seen)
    return emb


def encode(tokens: Sequence[str], vocab: Vocab, max_len: int = 70) -> np.ndarray:
    """Index sequence of true length (no padding), truncated to the first ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if not tokens:
        return np.array([UNK_INDEX], dtype=np.int64)
    return np.array([vocab[t] for t in tokens[:max_len]], dtype=np.int64)


def decode(indices: Iterable[int], vocab: Vocab) -> list[str]:
    return [vocab.index_to_token[i] for i in indices]

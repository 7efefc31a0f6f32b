"""Corpus handling: QE / parallel file IO, vocabularies, noise distribution.

File formats (UTF-8, LF):
  QE data:    source<TAB>target<TAB>score, one record per line, no header
  parallel:   source<TAB>target
  vocab:      token<TAB>frequency per line, in id order
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
N_RESERVED = len(RESERVED_TOKENS)


def tokenize(text: str) -> list[str]:
    """Lowercase + whitespace split."""
    return text.lower().split()


@dataclass(frozen=True)
class QESample:
    """One translation instance with its z-standardized DA score."""

    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    score: float
    language_pair: str

    def __post_init__(self):
        if not self.source_tokens or not self.target_tokens:
            raise ValueError("QESample requires non-empty source and target")
        if not np.isfinite(self.score):
            raise ValueError(f"QESample score must be finite, got {self.score}")


@dataclass(frozen=True)
class ParallelPair:
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.source_tokens or not self.target_tokens:
            raise ValueError("ParallelPair requires non-empty source and target")


@dataclass(frozen=True)
class Vocab:
    """Dense token<->id maps with frequency counts.

    Ids 0..3 are reserved for <pad>, <unk>, <bos>, <eos>; content tokens
    follow, most frequent first, ties broken lexicographically.
    """

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    frequencies: tuple[int, ...]

    def __post_init__(self):
        if self.id_to_token[:N_RESERVED] != RESERVED_TOKENS:
            raise ValueError("reserved tokens must occupy ids 0..3")
        if len(self.id_to_token) != len(self.frequencies):
            raise ValueError("id_to_token and frequencies length mismatch")
        if any(f < 0 for f in self.frequencies):
            raise ValueError("negative frequency")
        for i, tok in enumerate(self.id_to_token):
            if self.token_to_id.get(tok) != i:
                raise ValueError(f"token_to_id and id_to_token disagree at id {i}")
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("token_to_id has extra entries")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)


@dataclass(frozen=True)
class NoiseDistribution:
    """Frequency-based distribution over vocabulary ids for negative sampling.

    Reserved ids carry zero mass.  `cumulative` is the inclusive running sum
    of `probabilities`, used for inverse-CDF sampling.
    """

    counts: np.ndarray
    probabilities: np.ndarray
    cumulative: np.ndarray = field(repr=False)

    def __post_init__(self):
        total = float(self.probabilities.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"noise probabilities sum to {total}, not 1")
        if (self.probabilities < 0).any():
            raise ValueError("negative noise probability")
        if self.probabilities[:N_RESERVED].any():
            raise ValueError("reserved tokens must have zero noise mass")
        for arr in (self.counts, self.probabilities, self.cumulative):
            arr.setflags(write=False)


def _parse_lines(path: str | Path, n_fields: int) -> list[tuple[int, list[str]]]:
    text = Path(path).read_text(encoding="utf-8")
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise ValueError(
                f"{path}: line {lineno}: expected {n_fields} tab-separated "
                f"fields, got {len(fields)}"
            )
        out.append((lineno, fields))
    return out


def load_qe_dataset(path: str | Path, pair: str) -> list[QESample]:
    """Read a QE data file; one QESample per line, file order preserved."""
    records = _parse_lines(path, 3)
    if not records:
        raise ValueError(f"{path}: empty QE data file")
    samples = []
    for lineno, (src, tgt, score_str) in records:
        try:
            score = float(score_str)
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric score {score_str!r}") from None
        if not np.isfinite(score):
            raise ValueError(f"{path}: line {lineno}: non-finite score {score_str!r}")
        src_tokens, tgt_tokens = tokenize(src), tokenize(tgt)
        if not src_tokens or not tgt_tokens:
            raise ValueError(f"{path}: line {lineno}: empty source or target")
        samples.append(QESample(tuple(src_tokens), tuple(tgt_tokens), score, pair))
    return samples


def write_qe_dataset(samples: Sequence[QESample], path: str | Path) -> None:
    lines = [
        f"{' '.join(s.source_tokens)}\t{' '.join(s.target_tokens)}\t{s.score!r}\n"
        for s in samples
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_parallel(path: str | Path) -> list[ParallelPair]:
    """Read a source<TAB>target file with the same tokenization as QE data."""
    pairs = []
    for lineno, (src, tgt) in _parse_lines(path, 2):
        src_tokens, tgt_tokens = tokenize(src), tokenize(tgt)
        if not src_tokens or not tgt_tokens:
            raise ValueError(f"{path}: line {lineno}: empty source or target")
        pairs.append(ParallelPair(tuple(src_tokens), tuple(tgt_tokens)))
    return pairs


def write_parallel(pairs: Sequence[ParallelPair], path: str | Path) -> None:
    lines = [f"{' '.join(p.source_tokens)}\t{' '.join(p.target_tokens)}\n" for p in pairs]
    Path(path).write_text("".join(lines), encoding="utf-8")


def build_vocab(
    corpora: Iterable[Sequence[str]],
    min_freq: int = 1,
    max_size: int = 10_000,
) -> Vocab:
    """Build a vocabulary over token sequences.

    Keeps tokens with frequency >= min_freq, most frequent first up to
    max_size (reserved tokens included in the budget), ties lexicographic.
    """
    if max_size < N_RESERVED:
        raise ValueError(f"max_size must be >= {N_RESERVED}")
    counts = Counter()
    for seq in corpora:
        counts.update(seq)
    kept = sorted(
        ((tok, c) for tok, c in counts.items() if c >= min_freq),
        key=lambda item: (-item[1], item[0]),
    )[: max_size - N_RESERVED]
    id_to_token = RESERVED_TOKENS + tuple(tok for tok, _ in kept)
    frequencies = (0,) * N_RESERVED + tuple(c for _, c in kept)
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    return Vocab(token_to_id, id_to_token, frequencies)


def encode(tokens: Sequence[str], vocab: Vocab) -> list[int]:
    """Map tokens to ids with BOS/EOS framing; OOV tokens become UNK."""
    return [BOS] + [vocab.lookup(t) for t in tokens] + [EOS]


def decode(ids: Sequence[int], vocab: Vocab) -> list[str]:
    """Inverse of encode: strips PAD/BOS/EOS framing, keeps <unk> markers."""
    return [vocab.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS)]


def noise_distribution(vocab: Vocab, exponent: float = 1.0) -> NoiseDistribution:
    """Q(w) proportional to frequency(w)**exponent over non-reserved tokens."""
    counts = np.asarray(vocab.frequencies, dtype=np.float64)
    counts[:N_RESERVED] = 0.0
    if counts.sum() <= 0:
        raise ValueError("noise distribution needs at least one token with frequency > 0")
    weighted = np.zeros_like(counts)
    nz = counts > 0
    weighted[nz] = counts[nz] ** exponent
    probs = weighted / weighted.sum()
    return NoiseDistribution(counts, probs, np.cumsum(probs))


def sample_negatives(
    dist: NoiseDistribution,
    k: int,
    exclude: int | None,
    rng: np.random.Generator,
) -> list[int]:
    """Draw k ids i.i.d. from Q, resampling any draw equal to `exclude`.

    Deterministic given the generator state.  Raises if only the excluded
    token has mass, or after 100*k resample attempts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if exclude is not None and dist.probabilities[exclude] >= 1.0 - 1e-12:
        raise ValueError("noise distribution has mass only on the excluded token")
    out: list[int] = []
    attempts = 0
    budget = 100 * k
    while len(out) < k:
        need = k - len(out)
        if attempts + need > budget:
            raise ValueError(f"exceeded {budget} resample attempts")
        attempts += need
        draws = np.searchsorted(dist.cumulative, rng.random(need), side="right")
        for d in draws:
            if exclude is None or d != exclude:
                out.append(int(d))
    return out


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    lines = [f"{tok}\t{freq}\n" for tok, freq in zip(vocab.id_to_token, vocab.frequencies)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    id_to_token = []
    frequencies = []
    for lineno, (tok, freq_str) in _parse_lines(path, 2):
        try:
            freq = int(freq_str)
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-integer frequency {freq_str!r}") from None
        id_to_token.append(tok)
        frequencies.append(freq)
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    return Vocab(token_to_id, tuple(id_to_token), tuple(frequencies))


def vocab_fingerprint(vocab: Vocab) -> str:
    """sha256 over the vocab-file serialization; stable across processes."""
    payload = "".join(
        f"{tok}\t{freq}\n" for tok, freq in zip(vocab.id_to_token, vocab.frequencies)
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()

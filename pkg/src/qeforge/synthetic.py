"""Deterministic synthetic translation benchmark.

Each language is a closed alphabet of tokens ("et00".."et19", ...).  A
language pair is a fixed substitution cipher between the two alphabets,
so the correct translation of a source sentence is its token-by-token
image under the cipher — a fully learnable masked-LM task at desk scale.

QE samples corrupt a controlled fraction of target tokens (replacing
them with a wrong token), and the gold score is the z-standardized
fraction of uncorrupted tokens.  Parallel corpora are uncorrupted
cipher pairs; augmentation tiers are nested prefixes of a shared pool.

Everything is generated from a fixed data seed that is independent of
any experiment's run seed: the benchmark is an artifact, not part of a
run's randomness.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    ParallelPair,
    QESample,
    Vocab,
    build_vocab,
    load_parallel,
    load_qe_dataset,
    write_parallel,
    write_qe_dataset,
)

HIGH_RESOURCE_PAIRS = ("et-en", "ne-en", "ro-en")
LOW_RESOURCE_PAIRS = ("en-de", "en-zh")
ALL_PAIRS = HIGH_RESOURCE_PAIRS + LOW_RESOURCE_PAIRS

CORRUPTION_RATES = (0.0, 0.2, 0.4, 0.6, 0.8)
AUGMENTATION_TIERS = {"D1": 100, "D2": 200, "D3": 300, "D5": 500}

QE_SPLITS = ("qe_train", "qe_valid", "qe_test")
PARALLEL_SPLITS = ("parallel_base", "parallel_pool", "parallel_valid")


@dataclass(frozen=True)
class BenchmarkSpec:
    data_seed: int = 20_200_501
    alphabet_size: int = 20
    min_len: int = 6
    max_len: int = 10
    high_resource_qe_train: int = 700
    low_resource_qe_train: int = 100
    qe_valid: int = 100
    qe_test: int = 100
    parallel_base: int = 500
    parallel_pool: int = 500
    parallel_valid: int = 50

    def validate(self) -> "BenchmarkSpec":
        if self.alphabet_size < 2:
            raise ValueError("alphabet needs at least 2 tokens to corrupt against")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"bad length range [{self.min_len}, {self.max_len}]")
        counts = (
            self.high_resource_qe_train, self.low_resource_qe_train,
            self.qe_valid, self.qe_test, self.parallel_base,
            self.parallel_pool, self.parallel_valid,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all split sizes must be >= 1")
        return self


@dataclass(frozen=True)
class PairData:
    pair: str
    qe_train: tuple[QESample, ...]
    qe_valid: tuple[QESample, ...]
    qe_test: tuple[QESample, ...]
    parallel_base: tuple[ParallelPair, ...]
    parallel_pool: tuple[ParallelPair, ...]
    parallel_valid: tuple[ParallelPair, ...]

    def augmentation(self, tier: str) -> tuple[ParallelPair, ...]:
        """Nested prefixes of the pool: D1 ⊂ D2 ⊂ D3 ⊂ D5."""
        if tier not in AUGMENTATION_TIERS:
            raise ValueError(
                f"unknown augmentation tier {tier!r}; valid: {sorted(AUGMENTATION_TIERS)}"
            )
        n = AUGMENTATION_TIERS[tier]
        if n > len(self.parallel_pool):
            raise ValueError(f"tier {tier} needs {n} pairs, pool has {len(self.parallel_pool)}")
        return self.parallel_pool[:n]


def stable_seed(*parts) -> list[int]:
    """Platform-independent rng seed material from string/int parts."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def language_alphabet(lang: str, size: int = 20) -> tuple[str, ...]:
    return tuple(f"{lang}{i:02d}" for i in range(size))


def split_pair(pair: str) -> tuple[str, str]:
    parts = pair.split("-")
    if len(parts) != 2 or not all(parts):
        raise ValueError(f"language pair must look like 'xx-yy', got {pair!r}")
    return parts[0], parts[1]


def pair_cipher(pair: str, spec: BenchmarkSpec = BenchmarkSpec()) -> dict[str, str]:
    """Fixed bijection source-alphabet -> target-alphabet for this pair."""
    src_lang, tgt_lang = split_pair(pair)
    src_alpha = language_alphabet(src_lang, spec.alphabet_size)
    tgt_alpha = language_alphabet(tgt_lang, spec.alphabet_size)
    rng = np.random.default_rng(stable_seed(spec.data_seed, "cipher", pair))
    image = rng.permutation(spec.alphabet_size)
    return {src_alpha[i]: tgt_alpha[image[i]] for i in range(spec.alphabet_size)}


def _source_sentence(rng, alphabet, spec) -> tuple[str, ...]:
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    return tuple(alphabet[i] for i in rng.integers(len(alphabet), size=length))


def _qe_raws(pair, cipher, n, split_name, spec):
    """Corrupted samples plus their raw (pre-standardization) scores."""
    src_lang, tgt_lang = split_pair(pair)
    src_alpha = language_alphabet(src_lang, spec.alphabet_size)
    tgt_alpha = language_alphabet(tgt_lang, spec.alphabet_size)
    rng = np.random.default_rng(stable_seed(spec.data_seed, pair, split_name))
    out = []
    for i in range(n):
        src = _source_sentence(rng, src_alpha, spec)
        tgt = [cipher[s] for s in src]
        rate = CORRUPTION_RATES[i % len(CORRUPTION_RATES)]
        n_corrupt = int(round(rate * len(src)))
        if n_corrupt:
            positions = rng.choice(len(src), size=n_corrupt, replace=False)
            for p in positions:
                wrong = [t for t in tgt_alpha if t != tgt[p]]
                tgt[p] = wrong[int(rng.integers(len(wrong)))]
        raw = (len(src) - n_corrupt) / len(src)
        out.append((src, tuple(tgt), raw))
    return out


def _parallel(pair, cipher, n, split_name, spec):
    src_lang, _ = split_pair(pair)
    src_alpha = language_alphabet(src_lang, spec.alphabet_size)
    rng = np.random.default_rng(stable_seed(spec.data_seed, pair, split_name))
    pairs = []
    for _ in range(n):
        src = _source_sentence(rng, src_alpha, spec)
        pairs.append(ParallelPair(src, tuple(cipher[s] for s in src)))
    return tuple(pairs)


def generate_pair_data(pair: str, spec: BenchmarkSpec = BenchmarkSpec()) -> PairData:
    spec.validate()
    cipher = pair_cipher(pair, spec)
    n_train = (
        spec.high_resource_qe_train if pair in HIGH_RESOURCE_PAIRS
        else spec.low_resource_qe_train
    )
    splits = {
        "qe_train": _qe_raws(pair, cipher, n_train, "qe_train", spec),
        "qe_valid": _qe_raws(pair, cipher, spec.qe_valid, "qe_valid", spec),
        "qe_test": _qe_raws(pair, cipher, spec.qe_test, "qe_test", spec),
    }
    # z-standardize raw scores over the pair's full generated population so
    # every split shares one scale (mirrors per-population DA standardization)
    raws = np.array([raw for rows in splits.values() for (_, _, raw) in rows])
    mu, sigma = raws.mean(), raws.std()
    if sigma == 0:
        raise ValueError(f"degenerate corruption spread for {pair}; cannot standardize")
    qe = {
        name: tuple(
            QESample(src, tgt, float((raw - mu) / sigma), pair) for (src, tgt, raw) in rows
        )
        for name, rows in splits.items()
    }
    return PairData(
        pair=pair,
        qe_train=qe["qe_train"],
        qe_valid=qe["qe_valid"],
        qe_test=qe["qe_test"],
        parallel_base=_parallel(pair, cipher, spec.parallel_base, "parallel_base", spec),
        parallel_pool=_parallel(pair, cipher, spec.parallel_pool, "parallel_pool", spec),
        parallel_valid=_parallel(pair, cipher, spec.parallel_valid, "parallel_valid", spec),
    )


def generate_benchmark(
    spec: BenchmarkSpec = BenchmarkSpec(), pairs=ALL_PAIRS
) -> dict[str, PairData]:
    return {pair: generate_pair_data(pair, spec) for pair in pairs}


def pair_files(root: str | Path, pair: str) -> dict[str, Path]:
    base = Path(root) / pair
    return {name: base / f"{name}.tsv" for name in QE_SPLITS + PARALLEL_SPLITS}


def write_benchmark(root: str | Path, spec: BenchmarkSpec = BenchmarkSpec(),
                    pairs=ALL_PAIRS) -> None:
    for pair in pairs:
        data = generate_pair_data(pair, spec)
        files = pair_files(root, pair)
        files["qe_train"].parent.mkdir(parents=True, exist_ok=True)
        write_qe_dataset(data.qe_train, files["qe_train"])
        write_qe_dataset(data.qe_valid, files["qe_valid"])
        write_qe_dataset(data.qe_test, files["qe_test"])
        write_parallel(data.parallel_base, files["parallel_base"])
        write_parallel(data.parallel_pool, files["parallel_pool"])
        write_parallel(data.parallel_valid, files["parallel_valid"])


def load_pair_data(root: str | Path, pair: str) -> PairData:
    files = pair_files(root, pair)
    missing = [str(p) for p in files.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(
            f"benchmark files missing for {pair}: {', '.join(missing)}; "
            "run scripts/make_synthetic_data.py"
        )
    return PairData(
        pair=pair,
        qe_train=tuple(load_qe_dataset(files["qe_train"], pair)),
        qe_valid=tuple(load_qe_dataset(files["qe_valid"], pair)),
        qe_test=tuple(load_qe_dataset(files["qe_test"], pair)),
        parallel_base=tuple(load_parallel(files["parallel_base"])),
        parallel_pool=tuple(load_parallel(files["parallel_pool"])),
        parallel_valid=tuple(load_parallel(files["parallel_valid"])),
    )


def pair_vocabs(data: PairData, spec: BenchmarkSpec = BenchmarkSpec()) -> tuple[Vocab, Vocab]:
    """Vocabularies with the full alphabets always present.

    Corpus-derived frequencies drive the noise distribution, but the
    alphabet itself is injected once so vocabulary sizes are identical
    across pairs and corpora — transfer needs shape-compatible
    projection layers, which ties them to the target vocabulary size.
    """
    src_lang, tgt_lang = split_pair(data.pair)
    parallel = data.parallel_base + data.parallel_pool
    src_corpora = [list(p.source_tokens) for p in parallel]
    src_corpora += [list(s.source_tokens) for s in data.qe_train]
    src_corpora.append(list(language_alphabet(src_lang, spec.alphabet_size)))
    tgt_corpora = [list(p.target_tokens) for p in parallel]
    tgt_corpora += [list(s.target_tokens) for s in data.qe_train]
    tgt_corpora.append(list(language_alphabet(tgt_lang, spec.alphabet_size)))
    return build_vocab(src_corpora), build_vocab(tgt_corpora)

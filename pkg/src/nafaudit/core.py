"""Vocabularies, probability vectors, token sequences and seeded randomness.

Every probability vector in the package is a read-only ``float64`` numpy
array of length ``K`` (the vocabulary size).  Logarithms are natural
throughout; ``-inf`` is an ordinary value for log-probabilities of
impossible events.

Randomness
----------
:class:`RandomSource` wraps numpy's Philox-4x64 counter-based bit generator.
The key is derived with :class:`numpy.random.SeedSequence` from the user seed
(entropy) and the SHA-256 digest of the stream label (spawn key, eight
32-bit words).  Philox and SeedSequence are specified bit-for-bit by numpy,
so a given ``(seed, label)`` pair replays the same stream on every platform.
Independent streams come from :meth:`RandomSource.derive`, never from
sharing one instance between workers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
RESERVED = (BOS, EOS, UNK)

PROB_ATOL = 1e-9
DEFAULT_T_MAX = 256

TokenSequence = tuple[int, ...]


class NafError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(NafError, ValueError):
    """Input failed validation before any computation ran."""


class AllZeroWeights(NafError, ValueError):
    """Every weight was zero; typically two ensembled models have disjoint supports."""


class Vocabulary:
    """Ordered, duplicate-free token list with the three reserved markers.

    Token ``i`` has id ``i``.  Use :meth:`build` to append the markers to a
    list of ordinary tokens; the constructor itself expects the full list.
    """

    def __init__(self, tokens: Iterable[str]):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        for marker in RESERVED:
            if marker not in tokens:
                raise ValidationError(f"vocabulary is missing reserved marker {marker!r}")
        if len(tokens) < 2:
            raise ValidationError("vocabulary needs at least two tokens")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}
        self.bos = self._index[BOS]
        self.eos = self._index[EOS]
        self.unk = self._index[UNK]

    @classmethod
    def build(cls, words: Iterable[str]) -> "Vocabulary":
        """Ordinary tokens first (in the given order, de-duplicated), then ``<bos> <eos> <unk>``."""
        seen: dict[str, None] = {}
        for w in words:
            if w in RESERVED:
                continue
            seen.setdefault(w, None)
        return cls(list(seen) + list(RESERVED))

    @classmethod
    def toy(cls, n: int) -> "Vocabulary":
        """``n`` ordinary tokens ``t0 .. t{n-1}`` with ids ``0 .. n-1``."""
        return cls.build(f"t{i}" for i in range(n))

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def __repr__(self) -> str:
        return f"Vocabulary(K={len(self)})"

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, self.unk)

    def encode(self, text: str | Sequence[str]) -> TokenSequence:
        """Whitespace-tokenize ``text`` (or take a token list) and map to ids."""
        words = text.split() if isinstance(text, str) else text
        return tuple(self.id(w) for w in words)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def predictable(self) -> np.ndarray:
        """Boolean mask of tokens a trained model may emit (everything but ``<bos>`` and ``<unk>``)."""
        mask = np.ones(len(self), dtype=bool)
        mask[[self.bos, self.unk]] = False
        return mask


def as_distribution(probs, atol: float = PROB_ATOL) -> np.ndarray:
    """Validate ``probs`` as a probability vector and return a read-only copy."""
    d = np.array(probs, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValidationError("a distribution must be a non-empty 1-d vector")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("distribution entries must be finite and non-negative")
    total = d.sum()
    if abs(total - 1.0) > atol:
        raise ValidationError(f"distribution sums to {total!r}, not 1")
    d.flags.writeable = False
    return d


def is_distribution(probs, atol: float = PROB_ATOL) -> bool:
    d = np.asarray(probs, dtype=np.float64)
    return bool(d.ndim == 1 and np.all(d >= 0) and abs(d.sum() - 1.0) <= atol)


def normalize(weights) -> np.ndarray:
    """Scale non-negative weights to sum to one.

    Raises:
        AllZeroWeights: every weight is zero.
    """
    w = np.array(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise AllZeroWeights("cannot normalize an all-zero weight vector")
    w /= total
    w.flags.writeable = False
    return w


def safe_log(x) -> np.ndarray:
    """Elementwise natural log with ``log 0 = -inf`` and no warnings."""
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=np.float64))


@dataclass
class RandomSource:
    """Seeded, labelled random stream (Philox-4x64 keyed by ``(seed, label)``).

    The only stateful object in the package.  Keep one instance per worker
    and use :meth:`derive` for independent sub-streams.
    """

    seed: int
    label: str = "main"
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        spawn_key = tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4))
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, sublabel: str) -> "RandomSource":
        """Fresh stream for ``label/sublabel``; does not touch this stream's state."""
        return RandomSource(self.seed, f"{self.label}/{sublabel}")

    def restart(self) -> "RandomSource":
        """Fresh copy of this stream positioned at its first draw."""
        return RandomSource(self.seed, self.label)

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self._gen.random(n)


def sample_token(d: np.ndarray, r: RandomSource) -> int:
    """Draw a token id from ``d`` by inverse-CDF lookup.

    Consumes exactly one :meth:`RandomSource.uniform` draw.  Zero-probability
    ids are never returned.
    """
    cdf = np.cumsum(d)
    u = r.uniform() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= len(d):
        # u landed on the rounding slack above cdf[-1]; fall back to the last supported id
        i = int(np.flatnonzero(d)[-1])
    return i


def check_sequence(ids: Sequence[int], vocab_size: int, t_max: int = DEFAULT_T_MAX) -> TokenSequence:
    seq = tuple(int(i) for i in ids)
    if len(seq) > t_max:
        raise ValidationError(f"sequence length {len(seq)} exceeds T_max={t_max}")
    if any(i < 0 or i >= vocab_size for i in seq):
        raise ValidationError("token id out of range for the vocabulary")
    return seq


def sequence_logprob(model, prompt: Sequence[int], y: Sequence[int]) -> float:
    """Chain-rule log-probability of ``y`` continuing ``prompt`` under ``model``.

    Returns ``-inf`` as soon as a step has probability zero.
    """
    context = list(prompt)
    total = 0.0
    for tok in y:
        p = model.next_distribution(tuple(context))[tok]
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
        context.append(tok)
    return total

"""Duplication-driven memorization experiment on n-gram models, scored by normalized edit distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import NafError, RandomSource, ValidationError
from .divergence import DivergenceKind
from .models import Corpus, SafeModelSet, greedy_sequence, sample_sequence, train_ngram
from .protect import CPDeltaModel, RejectionExhausted, cp_kappa_sample

SCHEMES = ("base", "cp_delta_min", "cp_delta_geo", "cp_kappa")
BIN_WIDTH = 0.05
BIN_EDGES = np.round(np.arange(0.0, 1.0 + BIN_WIDTH / 2, BIN_WIDTH), 10)


class BothEmpty(NafError, ValueError):
    pass


class UnknownDocId(NafError, KeyError):
    pass


class DocumentTooShort(ValidationError):
    pass


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance (unit-cost insertions, deletions, substitutions).

    Works on any sequences of comparable items: token-id tuples or strings.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_edit_distance(a: Sequence, b: Sequence) -> float:
    """``edit_distance(a, b) / max(len(a), len(b))``, in ``[0, 1]``."""
    longest = max(len(a), len(b))
    if longest == 0:
        raise BothEmpty("normalized edit distance of two empty sequences")
    return edit_distance(a, b) / longest


def duplicate_corpus(c: Corpus, doc_ids: Sequence[int], times: int) -> Corpus:
    """Append ``times - 1`` extra copies of each selected document.

    Copies keep the provenance id of their original, so every copy of a
    unit can be traced back to it.
    """
    if times < 1:
        raise ValidationError("times must be >= 1")
    for d in doc_ids:
        if not 0 <= d < len(c):
            raise UnknownDocId(d)
    docs = list(c.documents)
    prov = list(c.provenance)
    for _ in range(times - 1):
        for d in doc_ids:
            docs.append(c.documents[d])
            prov.append(c.provenance[d])
    return Corpus(c.vocab, docs, prov)


def split_by_unit(c: Corpus, unit_index: dict[str, int]) -> tuple[Corpus, Corpus]:
    """Even units to the first half, odd units to the second; all copies of a unit stay together."""
    halves: tuple[list, list] = ([], [])
    for doc, prov in zip(c.documents, c.provenance):
        halves[unit_index[prov] % 2].append((doc, prov))
    return tuple(Corpus(c.vocab, [d for d, _ in h], [p for _, p in h]) for h in halves)


@dataclass
class UnitRecord:
    unit: int
    provenance: str
    scheme: str
    prompt: tuple
    reference: tuple
    generated: tuple
    distance: float
    refused: bool = False

    def to_dict(self, vocab=None) -> dict:
        def show(ids):
            return " ".join(vocab.decode(ids)) if vocab is not None else list(ids)

        return {
            "unit": self.unit,
            "provenance": self.provenance,
            "scheme": self.scheme,
            "prompt": show(self.prompt),
            "reference": show(self.reference),
            "generated": show(self.generated),
            "distance": self.distance,
            "refused": self.refused,
        }


@dataclass
class MemorizationReport:
    records: list[UnitRecord]
    schemes: tuple[str, ...]
    config: dict = field(default_factory=dict)

    def distances(self, scheme: str) -> np.ndarray:
        return np.array([r.distance for r in self.records if r.scheme == scheme])

    def mean(self, scheme: str) -> float:
        return float(self.distances(scheme).mean())

    @property
    def means(self) -> dict[str, float]:
        return {s: self.mean(s) for s in self.schemes}

    def histogram(self, scheme: str) -> list[int]:
        """Counts over 0.05-wide bins on ``[0, 1]``; 1.0 lands in the last bin."""
        counts, _ = np.histogram(self.distances(scheme), bins=BIN_EDGES)
        return [int(c) for c in counts]

    def to_dict(self, vocab=None) -> dict:
        return {
            "config": self.config,
            "bin_edges": [float(e) for e in BIN_EDGES],
            "histograms": {s: self.histogram(s) for s in self.schemes},
            "means": self.means,
            "refusals": {s: sum(r.refused for r in self.records if r.scheme == s) for s in self.schemes},
            "records": [r.to_dict(vocab) for r in self.records],
        }


def run_memorization_experiment(
    c: Corpus,
    dup_ids: Sequence[int],
    times: int,
    order: int = 2,
    smoothing: float = 1.0,
    prompt_len: int = 10,
    gen_len: int = 20,
    schemes: Sequence[str] = SCHEMES,
    r: RandomSource | None = None,
    kappa: float = 5.0,
    decoding: str = "greedy",
    max_attempts: int = 200,
) -> MemorizationReport:
    """Duplicate units, train a base model and two half-corpus safe models, score completions.

    Each duplicated unit is prompted with its first ``prompt_len`` tokens
    and every scheme's ``gen_len``-token continuation is compared with the
    true one.  ``cp_kappa`` always samples (the threshold test needs random
    proposals); when every attempt is rejected the unit counts as a refusal
    with an empty continuation, i.e. distance 1.
    """
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ValidationError(f"unknown schemes {unknown}")
    if decoding not in ("greedy", "sample"):
        raise ValidationError("decoding must be 'greedy' or 'sample'")
    if gen_len < 1 or prompt_len < 0:
        raise DocumentTooShort("need gen_len >= 1 and prompt_len >= 0")
    for d in dup_ids:
        if not 0 <= d < len(c):
            raise UnknownDocId(d)
        if len(c.documents[d]) < prompt_len + gen_len:
            raise DocumentTooShort(f"document {d} has {len(c.documents[d])} tokens, need {prompt_len + gen_len}")
    if r is None:
        r = RandomSource(0, "memorize")

    unit_index = {}
    for i, prov in enumerate(c.provenance):
        unit_index.setdefault(prov, i)
    full = duplicate_corpus(c, dup_ids, times)
    half1, half2 = split_by_unit(full, unit_index)
    p = train_ngram(full, order, smoothing)
    q1 = train_ngram(half1, order, smoothing)
    q2 = train_ngram(half2, order, smoothing)
    safe = SafeModelSet.of(q1, q2)
    decoders = {
        "base": p,
        "cp_delta_min": CPDeltaModel(q1, q2, DivergenceKind.MAX),
        "cp_delta_geo": CPDeltaModel(q1, q2, DivergenceKind.KL),
    }

    records = []
    for u in dup_ids:
        doc = c.documents[u]
        prompt = doc[:prompt_len]
        reference = doc[prompt_len:prompt_len + gen_len]
        for scheme in schemes:
            stream = r.derive(f"unit{u}/{scheme}")
            refused = False
            if scheme == "cp_kappa":
                try:
                    generated, _ = cp_kappa_sample(p, safe, kappa, prompt, gen_len, stream, max_attempts)
                except RejectionExhausted:
                    generated, refused = (), True
            elif decoding == "greedy":
                generated = greedy_sequence(decoders[scheme], prompt, gen_len)
            else:
                generated, _ = sample_sequence(decoders[scheme], prompt, gen_len, stream)
            records.append(UnitRecord(
                unit=u,
                provenance=c.provenance[u],
                scheme=scheme,
                prompt=tuple(prompt),
                reference=tuple(reference),
                generated=tuple(generated),
                distance=normalized_edit_distance(generated, reference),
                refused=refused,
            ))
    config = {
        "units": list(dup_ids),
        "times": times,
        "order": order,
        "smoothing": smoothing,
        "prompt_len": prompt_len,
        "gen_len": gen_len,
        "kappa": kappa,
        "decoding": decoding,
        "max_attempts": max_attempts,
        "seed": r.seed,
        "stream": r.label,
    }
    return MemorizationReport(records, tuple(schemes), config)

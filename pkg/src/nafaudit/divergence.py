"""Exact divergences between token distributions and between sequence distributions.

Sequence-level quantities are computed by enumerating every length-``T``
continuation in the support of the first model (chain rule, prefixes with
zero probability pruned).  The cost is ``O(K^T)`` so the caller-visible cap
``ENUMERATION_CAP`` guards against accidental blow-ups; it is checked
against ``K ** length`` before any work is done.
"""

from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from .core import NafError, safe_log
from .models import GenerativeModel, SafeModelSet

ENUMERATION_CAP = 10**6


class DivergenceKind(str, enum.Enum):
    MAX = "max"
    KL = "kl"
    TV = "tv"
    HELLINGER_SQ = "h2"

    @classmethod
    def parse(cls, value) -> "DivergenceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown divergence {value!r}; expected one of max, kl, tv, h2") from None


class EnumerationTooLarge(NafError):
    pass


class BoundInfinite(NafError):
    pass


def _max_kl_from_logs(lp: np.ndarray, lq: np.ndarray, kind: DivergenceKind) -> float:
    """MAX / KL given log-probs listed over the support of ``p`` (``lp`` finite)."""
    if np.any(np.isneginf(lq)):
        return math.inf
    diff = lp - lq
    if kind is DivergenceKind.MAX:
        return float(diff.max())
    return float(np.sum(np.exp(lp) * diff))


def divergence_on_support(lp, lq, kind) -> float:
    """Divergence of ``p`` from ``q`` given both log-probs over ``p``'s whole support.

    ``q`` may put mass outside the listed outcomes; for TV that leftover mass
    ``1 - sum(q)`` is added, for the other kinds it does not contribute.
    """
    kind = DivergenceKind.parse(kind)
    lp = np.asarray(lp, dtype=np.float64)
    lq = np.asarray(lq, dtype=np.float64)
    if kind in (DivergenceKind.MAX, DivergenceKind.KL):
        return _max_kl_from_logs(lp, lq, kind)
    p = np.exp(lp)
    q = np.exp(lq)
    if kind is DivergenceKind.TV:
        outside = max(0.0, 1.0 - float(q.sum()))
        return 0.5 * (float(np.abs(p - q).sum()) + outside)
    return max(0.0, 1.0 - float(np.sqrt(p * q).sum()))


def token_divergence(p, q, kind) -> float:
    """``Delta(p || q)`` for one pair of next-token distributions.

    MAX is one-sided over ``p``'s support: ``max_{p(y)>0} log(p(y)/q(y))``.
    MAX and KL are ``+inf`` when ``p`` puts mass where ``q`` has none.
    """
    kind = DivergenceKind.parse(kind)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if kind is DivergenceKind.TV:
        return 0.5 * float(np.abs(p - q).sum())
    if kind is DivergenceKind.HELLINGER_SQ:
        return max(0.0, 1.0 - float(np.sqrt(p * q).sum()))
    support = p > 0
    return _max_kl_from_logs(safe_log(p[support]), safe_log(q[support]), kind)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def check_enumeration(vocab_size: int, length: int, cap: int | None = None) -> None:
    cap = ENUMERATION_CAP if cap is None else cap
    if length < 0:
        raise ValueError("length must be >= 0")
    if vocab_size**length > cap:
        raise EnumerationTooLarge(
            f"enumerating {vocab_size}^{length} sequences exceeds the cap of {cap}"
        )


def enumerate_joint(
    support: GenerativeModel,
    others: Sequence[GenerativeModel],
    prompt: Sequence[int],
    length: int,
    cap: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """All continuations of ``prompt`` with positive probability under ``support``.

    Returns ``(sequences, logps)``: an ``(N, length)`` id array in
    lexicographic order and an ``(1 + len(others), N)`` array of
    log-probabilities, row 0 for ``support`` and row ``j`` for
    ``others[j-1]`` (``-inf`` where that model assigns zero).
    """
    check_enumeration(support.vocab_size, length, cap)
    models = [support, *others]
    prompt = tuple(prompt)
    prefixes: list[tuple[int, ...]] = [()]
    logps = np.zeros((len(models), 1))
    for _ in range(length):
        new_prefixes = []
        new_cols = []
        for col, prefix in enumerate(prefixes):
            ctx = prompt + prefix
            dists = [m.next_distribution(ctx) for m in models]
            toks = np.flatnonzero(dists[0] > 0)
            step = np.stack([safe_log(d[toks]) for d in dists])
            new_cols.append(logps[:, col:col + 1] + step)
            new_prefixes.extend(prefix + (int(t),) for t in toks)
        prefixes = new_prefixes
        logps = np.concatenate(new_cols, axis=1)
    seqs = np.array(prefixes, dtype=np.int64).reshape(len(prefixes), length)
    return seqs, logps


def sequence_divergence_exact(
    pm: GenerativeModel,
    qm: GenerativeModel,
    prompt: Sequence[int],
    length: int,
    kind,
    cap: int | None = None,
) -> float:
    """Exact divergence between the two length-``length`` continuation laws."""
    _, logps = enumerate_joint(pm, [qm], prompt, length, cap)
    return divergence_on_support(logps[0], logps[1], kind)


def cp_delta_bound(q1, q2, kind) -> float:
    """Closed-form NAF bound of the two-model ensemble.

    ``-log(1 - TV(q1, q2))`` for the min combiner (MAX) and
    ``-2 log(1 - H^2(q1, q2))`` for the geometric combiner (KL).

    Raises:
        BoundInfinite: the two distributions have disjoint supports.
    """
    kind = DivergenceKind.parse(kind)
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    if not np.any((q1 > 0) & (q2 > 0)):
        raise BoundInfinite("safe models have disjoint supports")
    if kind is DivergenceKind.MAX:
        return -math.log1p(-token_divergence(q1, q2, DivergenceKind.TV))
    if kind is DivergenceKind.KL:
        return -2.0 * math.log1p(-token_divergence(q1, q2, DivergenceKind.HELLINGER_SQ))
    raise ValueError("the ensemble bound is defined for MAX and KL only")


def _as_safe_set(safe) -> SafeModelSet:
    if isinstance(safe, SafeModelSet):
        return safe
    if isinstance(safe, GenerativeModel):
        return SafeModelSet.of(safe)
    return SafeModelSet.of(*safe)


def naf_divergences_exact(p, safe, prompt, length, kind, cap=None) -> dict[str, float]:
    """Exact ``Delta(p || q_j)`` for every safe model, keyed by member id."""
    safe = _as_safe_set(safe)
    _, logps = enumerate_joint(p, safe.models, prompt, length, cap)
    return {
        sid: divergence_on_support(logps[0], logps[j + 1], kind)
        for j, sid in enumerate(safe.ids)
    }


def naf_check_exact(p, safe, prompt, length, kind, cap=None) -> float:
    """``k_x = max_j Delta(p(.|x) || q_j(.|x))`` by full enumeration."""
    return max(naf_divergences_exact(p, safe, prompt, length, kind, cap).values())


def exact_probability_floor(models, prompt, length, cap=None) -> float:
    """Smallest positive sequence probability any model assigns within its own support.

    An honest ``alpha`` for the empirical Bernstein half-width on instances
    small enough to enumerate.
    """
    floor = math.inf
    for m in models:
        _, logps = enumerate_joint(m, [], prompt, length, cap)
        floor = min(floor, float(np.exp(logps[0].min())))
    return floor

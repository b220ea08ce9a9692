"""Monte Carlo NAF audits with empirical-Bernstein half-widths, probability floors and DPG checks.

The estimator draws ``y_1..y_n ~ p(.|x)`` and averages, per safe model,

* ``basic``:             ``log(p(y)/q_j(y))``
* ``variance-reduced``:  ``log(p(y)/q_j(y)) + q_j(y)/p(y) - 1``

Both are unbiased for ``KL(p || q_j)`` when ``p << q_j``; the second adds a
zero-mean control variate and every term is non-negative
(``t - 1 - log t >= 0`` with ``t = q_j/p``).  ``k_hat = max_j`` of the means.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import NafError, RandomSource, ValidationError, sequence_logprob
from .divergence import DivergenceKind, divergence_on_support, sequence_divergence_exact
from .models import GenerativeModel, SafeModelSet, sample_sequence
from .protect import EmptyAcceptanceRegion, cp_kappa_induced_exact

VARIANTS = ("basic", "variance-reduced")
FLOOR_RTOL = 1e-9


class FloorViolated(NafError):
    pass


class ZeroDensityEncountered(RuntimeWarning):
    """A sampled sequence has zero probability under some safe model; the estimate is ``+inf``."""


@dataclass
class NafEstimate:
    k_hat: float
    deltas: dict[str, float]
    variant: str
    n: int
    m: int
    delta: float | None = None
    alpha: float | None = None
    alpha_source: str | None = None
    half_width: float | None = None
    seed: int | None = None
    label: str | None = None
    zero_density: bool = False
    logp: np.ndarray = field(default=None, repr=False)
    logq: np.ndarray = field(default=None, repr=False)

    def terms(self, variant: str | None = None) -> np.ndarray:
        """Per-sample estimator terms, shape ``(m, n)``."""
        return estimator_terms(self.logp, self.logq, variant or self.variant)

    @property
    def ratios(self) -> np.ndarray:
        """``p(y_i)/q_j(y_i)``, shape ``(m, n)``."""
        with np.errstate(over="ignore"):
            return np.exp(self.logp[None, :] - self.logq)

    def to_dict(self) -> dict:
        return {
            "k_hat": self.k_hat,
            "deltas": dict(self.deltas),
            "variant": self.variant,
            "n": self.n,
            "m": self.m,
            "delta": self.delta,
            "alpha": self.alpha,
            "alpha_source": self.alpha_source,
            "half_width": self.half_width,
            "half_width_formula": "as-printed",
            "seed": self.seed,
            "stream": self.label,
            "zero_density": self.zero_density,
        }


def estimator_terms(logp: np.ndarray, logq: np.ndarray, variant: str) -> np.ndarray:
    if variant not in VARIANTS:
        raise ValidationError(f"unknown estimator variant {variant!r}")
    logq = np.atleast_2d(logq)
    with np.errstate(invalid="ignore"):
        log_ratio = np.where(np.isneginf(logq), np.inf, logp[None, :] - logq)
    if variant == "basic":
        return log_ratio
    with np.errstate(over="ignore"):
        return log_ratio + np.expm1(-log_ratio)


def _draw(p, safe_models, prompt, length, count, r):
    logp = np.empty(count)
    logq = np.empty((len(safe_models), count))
    for i in range(count):
        y, lp = sample_sequence(p, prompt, length, r)
        logp[i] = lp
        for j, q in enumerate(safe_models):
            logq[j, i] = sequence_logprob(q, prompt, y)
    return logp, logq


def _draw_chunk(args):
    p, safe_models, prompt, length, count, seed, label = args
    return _draw(p, safe_models, prompt, length, count, RandomSource(seed, label))


def draw_log_probs(p, safe: SafeModelSet, prompt, length, n, r: RandomSource, workers: int = 1):
    """Sample ``n`` continuations from ``p``; return their log-probs under ``p`` and each ``q_j``.

    ``workers=1`` consumes ``r`` directly.  With ``workers=N > 1`` the
    samples are split into ``N`` contiguous chunks, chunk ``w`` drawn from
    ``r.derive(f"worker{w}of{N}")`` in its own process, and concatenated
    in chunk order.
    """
    prompt = tuple(prompt)
    if workers <= 1:
        return _draw(p, safe.models, prompt, length, n, r)
    sizes = [n // workers + (w < n % workers) for w in range(workers)]
    jobs = [
        (p, safe.models, prompt, length, size, r.seed, r.derive(f"worker{w}of{workers}").label)
        for w, size in enumerate(sizes)
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_draw_chunk, jobs))
    return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts], axis=1)


def mc_naf_estimate(
    p: GenerativeModel,
    safe: SafeModelSet,
    prompt: Sequence[int],
    length: int,
    n: int,
    variant: str = "basic",
    r: RandomSource | None = None,
    delta: float | None = None,
    alpha: float | None = None,
    alpha_source: str | None = None,
    workers: int = 1,
) -> NafEstimate:
    """Monte Carlo estimate of ``k_x = max_j KL(p(.|x) || q_j(.|x))``.

    When both ``delta`` and ``alpha`` are given the empirical-Bernstein
    half-width is attached (see :func:`bernstein_half_width`).  A sample
    with ``q_j(y) = 0`` makes that ``Delta_j`` infinite; a
    :class:`ZeroDensityEncountered` warning is issued and the estimate
    is still returned.
    """
    if n < 2:
        raise ValidationError("n must be >= 2")
    if variant not in VARIANTS:
        raise ValidationError(f"unknown estimator variant {variant!r}")
    if r is None:
        r = RandomSource(0)
    logp, logq = draw_log_probs(p, safe, prompt, length, n, r, workers)
    terms = estimator_terms(logp, logq, variant)
    deltas = {sid: float(np.mean(terms[j])) for j, sid in enumerate(safe.ids)}
    zero_density = bool(np.any(np.isneginf(logq)))
    if zero_density:
        warnings.warn("a sampled sequence has zero probability under a safe model", ZeroDensityEncountered, stacklevel=2)
    est = NafEstimate(
        k_hat=max(deltas.values()),
        deltas=deltas,
        variant=variant,
        n=n,
        m=safe.m,
        delta=delta,
        alpha=alpha,
        alpha_source=alpha_source,
        seed=r.seed,
        label=r.label,
        zero_density=zero_density,
        logp=logp,
        logq=logq,
    )
    if delta is not None and alpha is not None:
        est.half_width = math.inf if zero_density else bernstein_half_width(
            est.ratios, n, delta, alpha, safe.m,
            observed=np.concatenate([np.exp(logp), np.exp(logq).ravel()]),
        )
    return est


def bernstein_half_width(ratio_samples, n: int, delta: float, alpha: float, m: int, observed=None) -> float:
    """Empirical-Bernstein half-width for ``|k_hat - k_x|``, exactly as printed:

    ``sqrt(8 V log(1/delta) log(m/alpha)^2 / n) + 14 log(2/delta) log(m/alpha) / (3 (n-1))``

    with ``V`` the largest unbiased sample variance of the raw ratios
    ``p(y_i)/q_j(y_i)`` over ``j``.  ``alpha = 0`` (no usable floor) gives
    ``inf``.

    Raises:
        FloorViolated: an ``observed`` probability lies below ``alpha``.
    """
    if n < 2:
        raise ValidationError("n must be >= 2")
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    if not 0 <= alpha < 1:
        raise ValidationError("alpha must lie in [0, 1)")
    if m < 1:
        raise ValidationError("m must be >= 1")
    if alpha == 0:
        return math.inf
    if observed is not None:
        obs = np.asarray(observed, dtype=np.float64)
        low = obs < alpha * (1 - FLOOR_RTOL)
        if np.any(low):
            raise FloorViolated(f"observed probability {obs[low].min():.3e} below alpha={alpha:.3e}")
    ratios = np.atleast_2d(np.asarray(ratio_samples, dtype=np.float64))
    v = float(max(np.var(row, ddof=1) for row in ratios))
    log_m_alpha = math.log(m / alpha)
    first = math.sqrt(8.0 * v * math.log(1.0 / delta) * log_m_alpha**2 / n)
    second = 14.0 * math.log(2.0 / delta) * log_m_alpha / (3.0 * (n - 1))
    return first + second


def alpha_floor_top_p(K: int, T: int, top_p: float) -> float:
    """Lower bound ``((1 - p)/K)^T`` on sequence probabilities under nucleus decoding."""
    if K < 2 or T < 1:
        raise ValidationError("need K >= 2 and T >= 1")
    if not 0 < top_p <= 1:
        raise ValidationError("top-p must lie in (0, 1]")
    return ((1.0 - top_p) / K) ** T


def alpha_floor_randomized_response(K: int, T: int, lam: float) -> float:
    """Per-step floor ``lam/K`` of a randomized-response wrapper, compounded over ``T`` steps."""
    if K < 2 or T < 1:
        raise ValidationError("need K >= 2 and T >= 1")
    if not 0 <= lam <= 1:
        raise ValidationError("randomized-response weight must lie in [0, 1]")
    return (lam / K) ** T


def dpg_check(m_s: GenerativeModel, m_s2: GenerativeModel, prompt, length, kind, cap=None) -> float:
    """Symmetrized exact divergence ``max(D(P_S || P_S'), D(P_S' || P_S))``."""
    return max(
        sequence_divergence_exact(m_s, m_s2, prompt, length, kind, cap),
        sequence_divergence_exact(m_s2, m_s, prompt, length, kind, cap),
    )


def sweep(
    build: Callable,
    grid: Sequence,
    safe: SafeModelSet | None,
    prompt,
    length: int,
    n: int,
    r: RandomSource,
    variant: str = "basic",
    delta: float | None = None,
    alpha=None,
) -> list[tuple[object, NafEstimate]]:
    """One Monte Carlo estimate per grid value.

    ``build(value)`` returns either the audited model (audited against
    ``safe``) or a ``(model, safe_set)`` pair, e.g. when the safe models
    are heated together with the ensemble.  Every point restarts ``r`` so
    all points see the same random stream.  ``alpha`` may be a number or
    ``alpha(value, model, safe_set)``.
    """
    if not grid:
        raise ValidationError("empty parameter grid")
    out = []
    for value in grid:
        built = build(value)
        model, point_safe = built if isinstance(built, tuple) else (built, safe)
        if point_safe is None:
            raise ValidationError("no safe set for sweep point")
        a = alpha(value, model, point_safe) if callable(alpha) else alpha
        est = mc_naf_estimate(model, point_safe, prompt, length, n, variant, r.restart(), delta=delta, alpha=a)
        out.append((value, est))
    return out


@dataclass(frozen=True)
class KappaPoint:
    kappa: float
    k_x: float
    nu: float
    bound: float


def kappa_sweep_exact(p, safe: SafeModelSet, kappas, prompt, length, cap=None) -> list[KappaPoint]:
    """Exact one-sided max divergence of the threshold sampler's output for each ``kappa``.

    ``bound`` is ``kappa + log(1/nu)``.  An empty acceptance region is
    recorded as ``k_x = inf, nu = 0``.
    """
    points = []
    for kappa in kappas:
        try:
            ind = cp_kappa_induced_exact(p, safe, kappa, prompt, length, cap)
        except EmptyAcceptanceRegion:
            points.append(KappaPoint(float(kappa), math.inf, 0.0, math.inf))
            continue
        k_x = induced_naf_exact(ind, safe, prompt, DivergenceKind.MAX)
        points.append(KappaPoint(float(kappa), k_x, ind.nu, kappa + math.log(1.0 / ind.nu)))
    return points


def induced_naf_exact(induced, safe: SafeModelSet, prompt, kind) -> float:
    """``max_j Delta(induced || q_j)`` for an explicitly listed sequence distribution."""
    lp = np.log(induced.probs)
    worst = -math.inf
    for q in safe.models:
        lq = np.array([sequence_logprob(q, prompt, tuple(s)) for s in induced.sequences])
        worst = max(worst, divergence_on_support(lp, lq, kind))
    return worst

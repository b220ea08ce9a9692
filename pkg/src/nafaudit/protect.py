"""Protected decoding: two-model ensembling, threshold rejection sampling, certificates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .core import NafError, RandomSource, TokenSequence, ValidationError, normalize, sequence_logprob
from .divergence import DivergenceKind, enumerate_joint
from .models import GenerativeModel, SafeModelSet, sample_sequence

DEFAULT_MAX_ATTEMPTS = 1000


class RejectionExhausted(NafError):
    def __init__(self, attempts: int):
        super().__init__(f"no sample accepted after {attempts} attempts")
        self.attempts = attempts


class EmptyAcceptanceRegion(NafError):
    pass


def _kind(kind) -> DivergenceKind:
    kind = DivergenceKind.parse(kind)
    if kind not in (DivergenceKind.MAX, DivergenceKind.KL):
        raise ValidationError("protected decoding supports the max and kl divergences only")
    return kind


def cp_delta_combine(q1, q2, kind) -> np.ndarray:
    """Ensemble two safe next-token distributions.

    ``min(q1, q2) / Z`` for MAX, ``sqrt(q1 * q2) / Z`` for KL.  Raises
    :class:`~nafaudit.core.AllZeroWeights` when the supports are disjoint.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    if _kind(kind) is DivergenceKind.MAX:
        return normalize(np.minimum(q1, q2))
    return normalize(np.sqrt(q1 * q2))


class CPDeltaModel(GenerativeModel):
    """Token-level ensemble: every decoding step is ``cp_delta_combine`` of the two members."""

    def __init__(self, q1: GenerativeModel, q2: GenerativeModel, kind):
        super().__init__()
        if q1.vocab != q2.vocab:
            raise ValidationError("ensembled models must share a vocabulary")
        self.q1, self.q2 = q1, q2
        self.kind = _kind(kind)
        self.vocab = q1.vocab
        self.context_order = max(q1.context_order, q2.context_order)

    def _compute(self, key):
        return cp_delta_combine(self.q1.next_distribution(key), self.q2.next_distribution(key), self.kind)


def cp_delta_model(q1: GenerativeModel, q2: GenerativeModel, kind) -> GenerativeModel:
    return CPDeltaModel(q1, q2, kind)


# ---------------------------------------------------------------------------
# Threshold rejection sampling
# ---------------------------------------------------------------------------

def _log_ratios(p, safe: SafeModelSet, prompt, y, logp=None) -> list[float]:
    if logp is None:
        logp = sequence_logprob(p, prompt, y)
    out = []
    for q in safe.models:
        lq = sequence_logprob(q, prompt, y)
        out.append(math.inf if lq == -math.inf else logp - lq)
    return out


def cp_kappa_accepts(p, safe: SafeModelSet, kappa: float, prompt, y, logp=None) -> bool:
    """Acceptance test: ``log(p(y|x) / q(y|x)) <= kappa`` for every safe ``q`` (ties accepted)."""
    return all(lr <= kappa for lr in _log_ratios(p, safe, prompt, y, logp))


def cp_kappa_sample(
    p: GenerativeModel,
    safe: SafeModelSet,
    kappa: float,
    prompt: Sequence[int],
    length: int,
    r: RandomSource,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> tuple[TokenSequence, int]:
    """Draw ``y ~ p(.|x)`` until the whole-sequence ratio test passes.

    Returns the accepted sequence and the number of attempts used.  Each
    attempt consumes ``length`` uniform draws.
    """
    if not math.isfinite(kappa):
        raise ValidationError("kappa must be finite")
    if max_attempts < 1:
        raise ValidationError("max_attempts must be >= 1")
    for attempt in range(1, max_attempts + 1):
        y, logp = sample_sequence(p, prompt, length, r)
        if cp_kappa_accepts(p, safe, kappa, prompt, y, logp):
            return y, attempt
    raise RejectionExhausted(max_attempts)


@dataclass(frozen=True)
class InducedDistribution:
    """Exact law of an accepted sample: sequences (rows), their probabilities, and ``nu``."""

    sequences: np.ndarray
    probs: np.ndarray
    nu: float

    def as_dict(self) -> dict[TokenSequence, float]:
        return {tuple(int(t) for t in s): float(pr) for s, pr in zip(self.sequences, self.probs)}


def cp_kappa_induced_exact(p, safe: SafeModelSet, kappa: float, prompt, length, cap=None) -> InducedDistribution:
    """Enumerate ``p_kappa(y) = p(y) 1[all ratios <= kappa] / nu`` and ``nu = sum of accepted p(y)``.

    Only sequences with positive induced probability are listed.
    """
    seqs, logps = enumerate_joint(p, safe.models, prompt, length, cap)
    lp = logps[0]
    ratios = lp[None, :] - logps[1:]
    accepted = np.all(ratios <= kappa, axis=0)
    mass = np.exp(lp[accepted])
    nu = float(mass.sum())
    if nu <= 0:
        raise EmptyAcceptanceRegion(f"no sequence passes the ratio test at kappa={kappa}")
    return InducedDistribution(seqs[accepted], mass / nu, nu)


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtectionCertificate:
    """Outcome of estimating the acceptance probability of a threshold sampler.

    ``bound`` uses the lower confidence endpoint of ``nu``;
    ``point_bound`` plugs in the point estimate.  Both are ``inf`` when the
    corresponding ``nu`` value is zero.
    """

    scheme: str
    kappa: float
    nu_hat: float
    level: float
    nu_lo: float
    nu_hi: float
    attempts: int
    accepted: int
    bound: float
    point_bound: float

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.bound)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounded"] = self.bounded
        return d


def clopper_pearson(successes: int, n: int, level: float) -> tuple[float, float]:
    """Exact two-sided binomial interval for ``successes / n``."""
    a = 1.0 - level
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(a / 2, successes, n - successes + 1))
    hi = 1.0 if successes == n else float(stats.beta.ppf(1 - a / 2, successes + 1, n - successes))
    return lo, hi


def _kappa_bound(kappa: float, nu: float) -> float:
    return kappa + math.log(1.0 / nu) if nu > 0 else math.inf


def estimate_nu(
    p: GenerativeModel,
    safe: SafeModelSet,
    kappa: float,
    prompt,
    length: int,
    n: int,
    level: float,
    r: RandomSource,
) -> ProtectionCertificate:
    """Run ``n`` single proposal rounds and certify ``k_x <= kappa + log(1/nu_lo)``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    accepted = 0
    for _ in range(n):
        y, logp = sample_sequence(p, prompt, length, r)
        accepted += cp_kappa_accepts(p, safe, kappa, prompt, y, logp)
    nu_hat = accepted / n
    lo, hi = clopper_pearson(accepted, n, level)
    return ProtectionCertificate(
        scheme="cp-kappa",
        kappa=float(kappa),
        nu_hat=nu_hat,
        level=level,
        nu_lo=lo,
        nu_hi=hi,
        attempts=n,
        accepted=accepted,
        bound=_kappa_bound(kappa, lo),
        point_bound=_kappa_bound(kappa, nu_hat),
    )


# ---------------------------------------------------------------------------
# Ensembling by rejection (sequence level)
# ---------------------------------------------------------------------------

def cp_delta_rejection_sample(
    q1: GenerativeModel,
    q2: GenerativeModel,
    kind,
    kappa: float,
    prompt: Sequence[int],
    length: int,
    r: RandomSource,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    redraw_index: bool = True,
    kl_rule: str = "threshold",
) -> tuple[TokenSequence, int]:
    """Sample from the two-model ensemble without computing the partition function.

    Each attempt proposes ``y ~ q_i`` and compares ``log(q_i(y)/q_i'(y))``
    with ``kappa``:

    * MAX: accept iff the log-ratio is ``<= kappa``.
    * KL, ``kl_rule="threshold"``: if the log-ratio is ``>= kappa``, accept
      with probability ``min(1, sqrt(e^kappa q_i'(y) / q_i(y)))``; otherwise
      reject.  At ``kappa = 0`` the accepted law is the geometric combiner.
    * KL, ``kl_rule="capped"``: apply that probability to every proposal.
      Kept for comparison; its ``kappa = 0`` law is not the geometric
      combiner.

    With ``redraw_index`` the proposing model ``i`` is drawn afresh every
    attempt, which makes the ``kappa = 0`` law equal the combiner.  With
    ``redraw_index=False`` it is drawn once per call (ties at exactly equal
    probabilities are accepted by both proposers in either mode).

    RNG use per attempt: one draw for ``i`` (when redrawn), ``length`` for
    the proposal, one more for the KL acceptance coin.
    """
    kind = _kind(kind)
    if not kappa >= 0:
        raise ValidationError("kappa must be >= 0")
    if kl_rule not in ("threshold", "capped"):
        raise ValidationError("kl_rule must be 'threshold' or 'capped'")
    if max_attempts < 1:
        raise ValidationError("max_attempts must be >= 1")
    models = (q1, q2)
    i = int(r.uniform() < 0.5) if not redraw_index else None
    for attempt in range(1, max_attempts + 1):
        idx = int(r.uniform() < 0.5) if redraw_index else i
        proposer, other = models[idx], models[1 - idx]
        y, lqi = sample_sequence(proposer, prompt, length, r)
        lqo = sequence_logprob(other, prompt, y)
        log_ratio = math.inf if lqo == -math.inf else lqi - lqo
        if kind is DivergenceKind.MAX:
            if log_ratio <= kappa:
                return y, attempt
            continue
        if kl_rule == "threshold" and log_ratio < kappa:
            continue
        accept_prob = math.exp(min(0.0, 0.5 * (kappa - log_ratio))) if math.isfinite(log_ratio) else 0.0
        if r.uniform() < accept_prob:
            return y, attempt
    raise RejectionExhausted(max_attempts)

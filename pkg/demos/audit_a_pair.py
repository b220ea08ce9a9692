"""
Auditing a model against a safe model
=====================================

Exact and Monte Carlo k_x on a two-token i.i.d. pair, with the
empirical-Bernstein half-width.
"""

from nafaudit import RandomSource, SafeModelSet
from nafaudit.audit import mc_naf_estimate
from nafaudit.divergence import exact_probability_floor, naf_check_exact
from nafaudit.fixtures import worked_pair

p, q = worked_pair()
safe = SafeModelSet.of(q)

# three tokens long: 8 sequences, small enough to enumerate
for kind in ("kl", "max", "tv", "h2"):
    print(f"exact {kind:>3}: {naf_check_exact(p, safe, (), 3, kind):.6f}")

# the smallest sequence probability either model assigns is an honest floor
alpha = exact_probability_floor([p, q], (), 3)

for variant in ("basic", "variance-reduced"):
    est = mc_naf_estimate(p, safe, (), 3, 5000, variant, RandomSource(0, "demo"), delta=0.05, alpha=alpha)
    print(f"{variant:>16}: k_hat = {est.k_hat:.4f} +/- {est.half_width:.4f}")

"""
Protected decoding with two safe models
=======================================

Token-level ensembling, its rejection-sampling counterpart, and the
threshold sampler with an estimated certificate.
"""

import numpy as np

from nafaudit import RandomSource, SafeModelSet
from nafaudit.divergence import cp_delta_bound, naf_check_exact
from nafaudit.fixtures import worked_pair
from nafaudit.protect import (
    CPDeltaModel,
    cp_delta_combine,
    cp_delta_rejection_sample,
    estimate_nu,
)

q1, q2 = worked_pair()
d1, d2 = q1.next_distribution(()), q2.next_distribution(())

for kind in ("max", "kl"):
    print(kind, "combiner:", np.round(cp_delta_combine(d1, d2, kind)[:2], 6),
          "bound per token:", round(cp_delta_bound(d1, d2, kind), 6))

# sequence level: the bound adds up over tokens
ens = CPDeltaModel(q1, q2, "max")
print("exact k_x of the min ensemble, 3 tokens:", naf_check_exact(ens, SafeModelSet.of(q1, q2), (), 3, "max"))

# the same law without a partition function; redraw the proposer every attempt
r = RandomSource(1, "reject")
draws = [cp_delta_rejection_sample(q1, q2, "max", 0.0, (), 1, r)[0][0] for _ in range(20000)]
print("rejection sampler, share of token 1:", np.mean(draws), "(target 2/3)")

# the threshold sampler's bound depends on how often it accepts
cert = estimate_nu(q2, SafeModelSet.of(q1), 0.5, (), 2, 5000, 0.95, RandomSource(2))
print(f"nu_hat={cert.nu_hat:.3f}  certified k_x <= {cert.bound:.3f}  (point {cert.point_bound:.3f})")

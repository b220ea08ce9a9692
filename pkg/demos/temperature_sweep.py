"""
Heating an ensemble
===================

Raising the temperature of the ensemble and of the safe models together
drives k_x towards zero.
"""

from nafaudit import RandomSource
from nafaudit.audit import mc_naf_estimate
from nafaudit.divergence import naf_check_exact
from nafaudit.fixtures import temperature_fixture
from nafaudit.models import temperature_wrap

ensemble, safe = temperature_fixture()
r = RandomSource(3, "sweep")

for tau in (1, 2, 4, 8, 1000):
    p = temperature_wrap(ensemble, tau)
    heated = safe.map(lambda m: temperature_wrap(m, tau))
    exact = naf_check_exact(p, heated, (), 3, "kl")
    est = mc_naf_estimate(p, heated, (), 3, 3000, r=r.restart())
    print(f"tau={tau:<5} exact={exact:.5f}  estimate={est.k_hat:.5f}")

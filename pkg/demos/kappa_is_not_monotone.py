"""
A smaller threshold is not always safer
=======================================

The audited model splits its mass between two tokens that each safe model
likes; a tight threshold lets only the rare third token through.
"""

from nafaudit.audit import kappa_sweep_exact
from nafaudit.fixtures import kappa_fixture

p, safe = kappa_fixture()
print(" kappa    k_x      nu    kappa+log(1/nu)")
for pt in kappa_sweep_exact(p, safe, [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0], (), 1):
    print(f"{pt.kappa:6.2f} {pt.k_x:8.4f} {pt.nu:7.3f} {pt.bound:10.4f}")

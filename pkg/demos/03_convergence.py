"""
Observed orders of accuracy
===========================

Manufactured solution in 1D with dt ~ h² (expect 2), then temporal and
spatial self-convergence on a bump (expect 1 and 2).
"""

from kymo.experiments import refinement_order
from kymo.grid import GridSpec
from kymo.motility import ExpDecay
from kymo.scheme import InitSpec, SimConfig

bump = InitSpec("GaussianBump", {"center": [0.5], "width": 0.1, "amplitude": 4.0, "floor": 0.5})
zero = InitSpec("Constant", {"value": 0.0})


def template(n, dt, T):
    return SimConfig(GridSpec((n,), (1.0,)), ExpDecay(), 0.0, 1e-3, 0.5, dt, T, bump, zero, cadence=10)


def show(rep, label):
    f = rep.fits
    pairs = ", ".join(f"{p:.3f}" for p in f["pairwise_orders"])
    print(f"{label:22s} order {f['order']:.3f}  (pairwise {pairs})  {rep.status}")


show(refinement_order(template(16, 1e-3, 0.2), "MMS", [16, 32, 64, 128]), "MMS, space")
show(refinement_order(template(64, 1e-3, 0.2), "SelfConvergence", [0.02, 0.01, 0.005, 0.0025]),
     "self-conv., time")
show(refinement_order(template(32, 1e-3, 0.05), "SelfConvergence", [32, 64, 128, 256], vary="h"),
     "self-conv., space")

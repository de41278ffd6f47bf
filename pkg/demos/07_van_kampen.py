"""Distribution-level expansion: X ~ Xbar + sqrt(eps) Zbar.

The corrected one-point law tracks the slow component's law to higher order
than the averaged equation alone.  Demonstration only: the expansion is
compared through mode-1 means/variances and a smooth test functional, never
pathwise (the limit process carries its own independent noise).
"""

import numpy as np

from mspde import Ensemble, linear_bench, simulate_Zbar_ensemble
from mspde.integrators import default_dt
from mspde.rngutil import substream

model = linear_bench(4, c=[2.0, 1.0])
T, M = 1.0, 8192

print("eps       E phi(X)    E phi(Xbar)  E phi(Xbar + sqrt(eps) Zbar)")
for eps in (2.0**-3, 2.0**-5):
    dt = default_dt(eps, T)
    ens = Ensemble(model, eps, T, dt, M, substream(1, "vk", int(-np.log2(eps))))
    ens.run()
    zbar = simulate_Zbar_ensemble(model, model.closed_form.fbar,
                                  model.closed_form.dx_fbar, model.closed_form.sigma,
                                  T, dt, M, substream(2, "vk", int(-np.log2(eps))))

    phi = lambda v: np.cos(v[:, 0])
    corrected = ens.xbar + np.sqrt(eps) * zbar
    print(f"{eps:<9.4g} {phi(ens.x).mean():+.5f}    {phi(ens.xbar).mean():+.5f}"
          f"     {phi(corrected).mean():+.5f}")

print("\nthe corrected column should sit closer to the first than the plain"
      "\naveraged one, with the gap shrinking as eps decreases.")

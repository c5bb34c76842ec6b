"""
Equilibrium of a feedback circuit
=================================

With affine input ``b`` the cyclic circuit has an explicit random
equilibrium given by iterated improper integrals along the noise path.
With a saturating feedback ``g <= b`` that process becomes a
super-equilibrium: images of ``lambda v`` stay below ``lambda v``.
"""
import numpy as np

from sddeflow import sample_path, window_grid
from sddeflow.rds import Cocycle, biochem_equilibrium, biochem_equilibrium_process, \
    check_super_equilibrium
from sddeflow.systems import BiochemParams, biochem, default_biochem_params

# without noise the equilibrium is b / alpha_1, then divided by each rate
det = BiochemParams(alpha=(1.0, 2.0, 4.0), sigma=(0.0, 0.0, 0.0), b_const=1.0)
v = biochem_equilibrium(det, sample_path(0, window_grid(45.0, 0.0, 1e-3), 3))
print("deterministic v(0):", v.now.round(8))

# %%
# With noise the equilibrium segment depends on the path.
p = default_biochem_params()
c = Cocycle(biochem(p), base_seed=11, window=(45.0, 2.0), dt=1e-3)
proc = biochem_equilibrium_process(p, c.path, dt=1e-3, t_end=2.0)
print("stochastic v(0):", proc.segment(0.0).now.round(4),
      "tail estimate", f"{proc.tail_estimate:.1e}")
for lam in (1.0, 2.0):
    rep = check_super_equilibrium(c, proc, lam, 2.0)
    print(f"lambda={lam:g}:", rep.status.value,
          "mean margin", round(rep.statistics["mean_margin"], 4))
print("min over the segment:", np.min(proc.segment(0.0).samples).round(4))

"""
Pullback synchronization
========================

For a contractive delay equation, starting ever further in the past on the
same noise realization squeezes any bounded family of initial segments
onto a single random segment.  A system with no dynamics does not.
"""
from sddeflow import Segment
from sddeflow.rds import Cocycle, pullback_estimate
from sddeflow.systems import builtin, frozen

for sys in (builtin("scalar-delay"), frozen()):
    c = Cocycle(sys, base_seed=4, window=(50.0, 0.0), dt=0.01)
    fam = [Segment.constant([v], sys.delay, c.n_out) for v in (-3.0, -1.0, 1.0, 3.0)]
    est = pullback_estimate(c, fam, [5.0, 10.0, 20.0, 50.0])
    hist = ", ".join(f"t={t:g}: {d:.1e}" for t, d in est.diameter_history)
    print(f"{sys.name:<13} {hist}  converged={est.converged}")

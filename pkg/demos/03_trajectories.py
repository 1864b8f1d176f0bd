# coding: utf-8

# # Trajectories with jumps between the guides
#
# Each particle sits in one guide at a time.  It drifts with the local velocity of
# that guide and hops to the other guide at a rate fixed by the coupling current.
# Along the stationary flow above threshold the chance of still being in the main
# guide at distance x is cos^2(k1 x).

# In[1]:

import numpy as np

from bohmguide import (
    PAPER_PARAMS,
    Ensemble,
    Grid,
    advance,
    build_potential,
    guidance,
    sample_ensemble,
    spec_from_delta,
    stationary_state,
    wavenumbers,
)
from bohmguide.bohmian import MAIN, ParticleStreams, equivariance_check
from bohmguide.scenarios import plan_scattering
from bohmguide.tdse import iter_evolve

P = PAPER_PARAMS


# ## Survival along the stationary flow

# In[2]:

spec = spec_from_delta(P, 100e9)
k = wavenumbers(P, spec)
grid = Grid.from_spacing(-2e-5, 1.7 / k.k1, 5e-8)
field = stationary_state(P, spec, grid)
gd = guidance(field, build_potential(P, grid))
print(f"velocity past the step {gd.v_m[grid.i0 + 10]:.4e} m/s, k2/m = {k.k2 / P.m:.4e} m/s")

dt = 0.5 * grid.dx * P.m / k.k2
ens = Ensemble.at(np.zeros(5000))
streams = ParticleStreams(seed=0)
step = 0
for target in (0.25, 0.5, 0.75, 1.0, 1.25, 1.5):
    while np.median(ens.x) * k.k1 < target:
        ens = advance(ens, gd, gd, dt, streams, step)
        step += 1
    x = np.median(ens.x)
    print(f"k1 x = {k.k1 * x:.3f}  main fraction {np.mean(ens.sector == MAIN):.4f}  cos^2 {np.cos(k.k1 * x) ** 2:.4f}")


# ## An ensemble through a reflecting scattering event
#
# Start 20000 particles distributed like |psi|^2 and compare their histogram with
# |psi(t)|^2 as the packet bounces off the step.  Doubling the velocities breaks the
# agreement, which shows the check has teeth.

# In[3]:

spec = spec_from_delta(P, -200e9)
plan = plan_scattering(P, spec, plateau_sigmas=0.0, full_reflection=True)
f0 = plan.initial_field()


def trajectory():
    yield f0
    yield from iter_evolve(f0, plan.potential, plan.config)


ens = sample_ensemble(f0, 20000, seed=1)
cadence = plan.config.n_steps // 5
for scale in (1.0, 2.0):
    res = equivariance_check(trajectory(), plan.potential, ens, cadence=cadence, seed=1, velocity_scale=scale)
    print(f"velocity x{scale:.0f}: TV distance at checkpoints", np.round(res.distances, 4))

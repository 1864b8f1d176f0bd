# coding: utf-8

# # Population transfer between two coupled guides
#
# A particle in the main guide leaks into the auxiliary guide at a rate set by
# the coupling J0.  With no step in the way the transfer is a plain two-level
# oscillation.  Past a step the same transfer is mapped onto distance instead of
# time, and the length scale 1/k1 tells us a speed.

# In[1]:

import numpy as np

from bohmguide import PAPER_PARAMS, Grid, spec_from_delta, stationary_state, wavenumbers
from bohmguide.analysis import fit_k1, inferred_speed
from bohmguide.analytic import apparent_speed, pa_profile, two_state_evolve

P = PAPER_PARAMS
print(P)


# ## Free oscillation
#
# Early on p_a grows like (J0 t)^2 and a quarter period moves everything across.

# In[2]:

for t in np.linspace(0, np.pi / (2 * P.J0), 6):
    cm, ca = two_state_evolve(P.J0, t)
    print(f"t = {t:.3e} s   p_a = {abs(ca) ** 2:.6f}   (J0 t)^2 = {(P.J0 * t) ** 2:.6f}")


# ## Stationary states past the step
#
# The detuning delta = E - V0 + J0 picks the regime.  Above threshold (delta > 0)
# the guided wave propagates and p_a(x) = sin^2(k1 x).  Below threshold it decays
# and p_a is built from sinh and cosh instead.

# In[3]:

for delta in (100e9, -100e9):
    spec = spec_from_delta(P, delta)
    k = wavenumbers(P, spec)
    grid = Grid.from_spacing(-2e-5, 0.5 / k.k1, 0.002 / k.k1)
    pa = pa_profile(stationary_state(P, spec, grid))
    x = grid.x
    for y in (0.05, 0.1, 0.3):
        i = np.argmin(abs(k.k1 * x - y))
        print(f"{spec.regime.name:9s} k1 x = {y:.2f}  p_a = {pa[i]:.6f}  (k1 x)^2 = {(k.k1 * x[i]) ** 2:.6f}")


# ## The inferred speed
#
# Fitting sqrt(p_a) near the step and dividing J0 by the slope gives a speed.  It
# comes out as sqrt(2|delta|/m) in both regimes, even though nothing moves in the
# evanescent one.

# In[4]:

for delta in (50e9, 100e9, 200e9, -50e9, -100e9, -200e9):
    spec = spec_from_delta(P, delta)
    k = wavenumbers(P, spec, guard=1.0)
    grid = Grid.from_spacing(-2e-5, 0.5 / k.k1, 0.002 / k.k1)
    pa = pa_profile(stationary_state(P, spec, grid, guard=1.0))
    k1_hat, err = fit_k1(pa, grid)
    v_hat = inferred_speed(k1_hat, P.J0)
    print(f"delta = {delta:+.0e}  v_hat = {v_hat:.4e} m/s  sqrt(2|delta|/m) = {apparent_speed(delta, P.m):.4e} m/s")

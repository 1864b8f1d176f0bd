# coding: utf-8

# # Scattering a long packet off the step
#
# Stationary states are idealisations.  Here a long flat-topped packet is sent at
# the step and the auxiliary fraction is read off while the region behind the
# step holds a steady population.  Takes about a minute.

# In[1]:

import math

import numpy as np

from bohmguide import PAPER_PARAMS, spec_from_delta, wavenumbers
from bohmguide.analysis import dwell_time, fringe_amplitudes, measure_speed

P = PAPER_PARAMS


# ## Speed from the quasi-stationary profile
#
# measure_speed plans the grid, packet and time step, runs the Crank-Nicolson
# solver and fits the plateau profile.

# In[2]:

results = {}
for delta in (200e9, -200e9):
    r = measure_speed(P, delta)
    results[delta] = r
    print(
        f"{r.regime:9s} delta = {delta:+.0e}: plateau {r.plateau[0]:.2e}..{r.plateau[1]:.2e} s, "
        f"v_hat / sqrt(2|delta|/m) = {r.v_hat / r.v:.4f}"
    )


# ## Interference in front of the step
#
# Incident and reflected waves beat with period pi/k0.  Below threshold the
# reflection is complete and the fringes reach almost to zero.

# In[3]:

for delta, r in results.items():
    spec = spec_from_delta(P, delta)
    k = wavenumbers(P, spec, exact=True)
    c_i, c_r = fringe_amplitudes(r.field, 8 * np.pi / k.k0)
    line = f"{r.regime:9s} |C_R/C_I| = {c_r / c_i:.4f}"
    if spec.allowed:
        q = k.k2 / k.k0
        line += f"  (step-matching value {(1 - q) / (1 + q):.4f})"
    print(line)


# ## Two dwell times
#
# Dividing the stored probability by the incident flux gives a finite time in both
# regimes.  Dividing by the net current at the step gives a huge value of either
# sign when the packet is reflected, since almost no net current flows.

# In[4]:

for delta, r in results.items():
    spec = spec_from_delta(P, delta)
    tb = dwell_time(r.field, P, spec, "bohmian")
    ts = dwell_time(r.field, P, spec, "standard")
    tb_text = "inf" if math.isinf(tb) else f"{tb:.3e} s"
    print(f"{r.regime:9s} net-current dwell {tb_text:>12s}   incident-flux dwell {ts:.3e} s")

"""
Solar loading from first principles
===================================

Walks through the forward model: how a camera turns skin temperature into
intensity and back, how sunlight heats a tissue column, and how the heating
grows with skin pigmentation.  Run with ``python notebooks/01_physics.py``.
"""

# %%
import numpy as np

from solarload import bioheat
from solarload.radiometry import (RadiometricScene, forward_chain, invert_chain, melanin_index_from_mu,
                                  stefan_boltzmann)

# %% [markdown]
# The three-path chain: emitted skin radiation, reflected ambient radiation
# and the air column.  Inverting it recovers the skin temperature exactly.

# %%
scene = RadiometricScene.from_celsius(ambient_c=22.0, tau_atm=0.95)
skin_k = 34.0 + 273.15
intensity = forward_chain(skin_k, scene)
print(f"sensor intensity {intensity:.2f} W/m^2, blackbody at 34 C {stefan_boltzmann(skin_k):.2f} W/m^2")
print(f"inverted: {invert_chain(intensity, scene) - 273.15:.6f} C")

# %% [markdown]
# A 300 s sun exposure followed by 300 s in the shade, for one tissue column.

# %%
grid = bioheat.build_grid(melanin_mu=1500.0)
cycle = bioheat.simulate_cycle(grid, bioheat.source_for(grid, 1000.0), 300.0, 300.0)
for t in (0, 60, 150, 300, 360, 450, 599):
    k = int(np.argmin(np.abs(cycle.times - t)))
    print(f"t={cycle.times[k]:5.0f} s  surface {cycle.surface_c[k]:.3f} C  deep {cycle.deep_c[k]:.4f} C")
print(f"peak surface bias {cycle.peak_bias:.2f} C; deep node range {np.ptp(cycle.deep_c):.1e} C")

# %% [markdown]
# Darker skin absorbs more in the epidermis, so the bias grows with melanin.

# %%
print(f"{'mu (1/m)':>9} {'MI':>6} {'peak bias (C)':>14}")
for mu in np.geomspace(500.0, 8000.0, 6):
    resp = bioheat.solar_response(float(mu))
    print(f"{mu:9.0f} {melanin_index_from_mu(mu):6.1f} {resp.peak_bias:14.2f}")

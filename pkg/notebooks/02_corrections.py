"""
Two ways to remove solar loading
================================

Renders a sunlit face and compares the uncorrected facial mean with the
transient fit (needs a cooling video) and the single-frame linear solve.
Run with ``python notebooks/02_corrections.py``.
"""

# %%
import numpy as np

from solarload import pipeline
from solarload.scene import Schedule, SensorNoise, make_face

# %%
face = make_face(melanin_mu=3000.0, seed=4)
schedule = Schedule(load_s=300.0, cool_s=300.0)
session = pipeline.simulate_session(face, 1000.0, SensorNoise(seed=4), schedule)
truth = session.baseline_mean
print(f"true steady-state facial mean {truth:.3f} C")

# %% [markdown]
# Transient fit on the forehead pixel: longer cooling windows are more reliable.

# %%
for window in (60.0, 120.0, 300.0):
    fit, (r, c) = pipeline.transient_estimate(session.seq, face, schedule, window_s=window)
    err = fit.t_skin_star - session.truth.baseline[r, c]
    print(f"window {window:5.0f} s  T* {fit.t_skin_star:.3f} C  beta {fit.beta_peak:.2f} C  error {err:+.3f} C")

# %% [markdown]
# Single-frame spatial correction at the end of the sun exposure.

# %%
k = int(schedule.load_s * schedule.fps) - 1
frames = session.seq.temps[k:k + 1]
raw, _ = pipeline.facial_estimates(face, frames, "uncorrected")
lin, secs = pipeline.facial_estimates(face, frames, "linear", reference_c=face.ambient_c)
print(f"uncorrected error {raw[0] - truth:+.3f} C")
print(f"linear error      {lin[0] - truth:+.3f} C  ({1e3 * secs[0]:.2f} ms)")

# %% [markdown]
# Over the whole session.

# %%
est, _ = pipeline.facial_estimates(face, session.seq.temps, "linear", reference_c=face.ambient_c)
base, _ = pipeline.facial_estimates(face, session.seq.temps, "uncorrected")
for row in pipeline.score(base, np.full(len(base), truth), "uncorrected", session.seq.phases) + \
        pipeline.score(est, np.full(len(est), truth), "linear", session.seq.phases):
    print(f"{row.method:12s} {row.phase:8s} n={row.n:4d} MAE {row.mae:.3f} C")

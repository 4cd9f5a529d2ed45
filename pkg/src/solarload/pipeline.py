"""End-to-end helpers shared by the command line and the acceptance suite:
simulate a session, estimate steady-state skin temperature with either
solution, and score the estimates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import stats
from .radiometry import melanin_index_from_mu
from .scene import (FaceModel, Schedule, SensorNoise, SunConfig, ThermalFrame, detect_calibration_weights,
                    forehead_pixel, make_face, render_sequence)
from .spatial import correct_frame
from .transient import TransientTrace, fit_cooling

METHODS = ("uncorrected", "linear", "learned", "transient")


@dataclass
class Session:
    face: FaceModel
    seq: object
    truth: object
    schedule: Schedule
    sun: SunConfig
    noise: SensorNoise

    @property
    def baseline_mean(self):
        return float(self.truth.baseline[self.face.foreground].mean())


def simulate_session(face: FaceModel, irradiance=1000.0, noise: SensorNoise | None = None,
                     schedule: Schedule = Schedule()) -> Session:
    noise = SensorNoise() if noise is None else noise
    sun = SunConfig(irradiance)
    seq, truth = render_sequence(face, sun, noise, schedule)
    return Session(face, seq, truth, schedule, sun, noise)


def facial_estimates(face: FaceModel, frames, method, model=None, reference_c=None):
    """Estimated steady-state facial mean for each frame, plus kernel seconds per frame."""
    out, secs = [], []
    for temps in frames:
        frame = ThermalFrame(temps, 0.0, background_mask=face.background_mask)
        t0 = time.perf_counter()
        if method == "uncorrected":
            value = float(temps[face.foreground].mean())
        else:
            value = correct_frame(frame, face, model, method, reference_c=reference_c).mean_after
        secs.append(time.perf_counter() - t0)
        out.append(value)
    return np.array(out), np.array(secs)


def transient_estimate(seq, face: FaceModel, schedule: Schedule, window_s=None, pixel=None):
    """Transient fit on the cooling part of one pixel's trace (forehead by default).

    Returns ``(fit, pixel)``; the caller compares ``fit.t_skin_star`` with the
    pixel's baseline.
    """
    r, c = forehead_pixel(face) if pixel is None else pixel
    weights = detect_calibration_weights(seq.temps, face.background_mask)
    start = schedule.steady_s + schedule.load_s
    sel = seq.times >= start
    t = seq.times[sel] - start
    trace = TransientTrace(t, seq.temps[sel, r, c], weights[sel])
    if window_s is not None:
        trace = trace.truncate(window_s)
    return fit_cooling(trace), (r, c)


@dataclass
class EvaluationRow:
    method: str
    phase: str
    n: int
    mae: float
    rmse: float
    mape: float | None

    def as_list(self):
        return [self.method, self.phase, self.n, self.mae, self.rmse, self.mape]


ROW_HEADER = ["method", "phase", "n", "mae_c", "rmse_c", "mape_pct"]


def score(pred, truth, method, phases):
    """One row per phase plus an ``all`` row."""
    pred, truth, phases = np.asarray(pred), np.asarray(truth), np.asarray(phases)
    rows = []
    for phase in [p for p in ("steady", "loading", "cooling") if np.any(phases == p)] + ["all"]:
        sel = np.ones(len(pred), bool) if phase == "all" else phases == phase
        m = stats.error_metrics(pred[sel], truth[sel])
        rows.append(EvaluationRow(method, phase, m.n, m.mae, m.rmse, m.mape))
    return rows


# ------------------------------------------------------------ equity cohort

@dataclass
class CohortResult:
    melanin_index: np.ndarray
    before: np.ndarray        # signed facial-mean errors, uncorrected
    after: np.ndarray         # signed errors after the linear correction
    report: stats.EquityReport


def equity_cohort(n_pairs=12, seed=0, irradiance=1000.0, frame_s=300.0,
                  light_mu=(500.0, 1500.0), dark_mu=(3000.0, 8000.0), noise=True):
    """Paired dark/light cohort.

    Each pair shares geometry, core temperature, texture seed and sensor noise
    seed and differs only in melanin, the way a subject-pair protocol
    controls for everything but skin tone.  Errors are taken on the frame at
    ``frame_s`` (default: the end of the sun exposure).
    """
    rng = np.random.default_rng(seed)
    schedule = Schedule(load_s=300.0, cool_s=0.0)
    k = min(int(round(frame_s * schedule.fps)), schedule.count - 1)
    mi, before, after = [], [], []
    for p in range(n_pairs):
        shared = dict(core_temp=float(rng.uniform(36.5, 37.5)), seed=int(rng.integers(1 << 31)))
        noise_seed = int(rng.integers(1 << 31))
        mus = (float(rng.uniform(*dark_mu)), float(rng.uniform(*light_mu)))
        for mu in mus:
            face = make_face(melanin_mu=mu, **shared)
            sensor = SensorNoise(seed=noise_seed) if noise else SensorNoise.off()
            sess = simulate_session(face, irradiance, sensor, schedule)
            truth = sess.baseline_mean
            raw, _ = facial_estimates(face, sess.seq.temps[k:k + 1], "uncorrected")
            fixed, _ = facial_estimates(face, sess.seq.temps[k:k + 1], "linear", reference_c=face.ambient_c)
            mi.append(melanin_index_from_mu(mu))
            before.append(raw[0] - truth)
            after.append(fixed[0] - truth)
    mi, before, after = np.array(mi), np.array(before), np.array(after)
    report = stats.EquityReport()
    report.add_stage("uncorrected", before, mi)
    report.add_stage("corrected", after, mi)
    return CohortResult(mi, before, after, report)


# ------------------------------------------------------------ datasets on disk

def crops_from_datasets(datasets, frames_per_identity=30, seed=0):
    """Crop dataset (one identity per dataset directory) for training the regressor."""
    from .regressor import INPUT_SIZE, CropDataset
    from .scene import centred_crop_origin, crop

    crops, labels, ids, masks, phases = [], [], [], [], []
    for i, ds in enumerate(datasets):
        face = ds.face()
        frames = ds.frames
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        k = np.sort(rng.choice(len(frames), size=min(frames_per_identity, len(frames)), replace=False))
        top, left = centred_crop_origin(face, INPUT_SIZE)
        crops.append(crop(frames[k], top, left, INPUT_SIZE))
        masks.append(np.broadcast_to(crop(face.foreground, top, left, INPUT_SIZE), (len(k), INPUT_SIZE, INPUT_SIZE)))
        labels.append(ds.beta_f[k])
        ids.append(np.full(len(k), i))
        phases.append(ds.phases[k])
    return CropDataset(np.concatenate(crops), np.concatenate(labels), np.concatenate(ids),
                       np.concatenate(masks).copy(), np.concatenate(phases))

"""Single-shot solar-loading correction from one thermal frame.

Two estimators share :func:`correct_frame`:

* ``linear`` - with known normals and a spatially uniform steady state, every
  facial region obeys ``T_i = T_ss + B * max(0, l . n_i)``; two or more
  regions with different incidence pin down ``(T_ss, B)``.
* ``learned`` - a small CNN (:mod:`solarload.regressor`) regresses the mean
  facial bias straight from a 50x50 crop, no geometry needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import ConfigError, FaceModel, ThermalFrame, crop

N_BINS = 8


class RankDeficient(ValueError):
    """All observations share the same incidence; loading is unidentifiable."""


@dataclass(frozen=True)
class RegionObservation:
    temp: float
    cos_incidence: float

    def __post_init__(self):
        if not -1.0 <= self.cos_incidence <= 1.0:
            raise ValueError("cos_incidence must lie in [-1, 1]")


@dataclass(frozen=True)
class SpatialSolveResult:
    t_bar: float
    beta_f: float
    condition: float
    clamped: bool = False


def solve_two_point(observations, weights=None) -> SpatialSolveResult:
    """Weighted least squares for ``T_i = t_bar + beta_f * max(0, cos_i)``.

    ``observations`` is a sequence of :class:`RegionObservation` or an
    ``(n, 2)`` array of (temp, cos).  A negative loading estimate is clamped
    to zero and the steady state re-fitted as the weighted mean.
    """
    if isinstance(observations, np.ndarray):
        obs = np.asarray(observations, dtype=float).reshape(-1, 2)
        temps, cos = obs[:, 0], obs[:, 1]
    else:
        temps = np.array([o.temp for o in observations], dtype=float)
        cos = np.array([o.cos_incidence for o in observations], dtype=float)
    if len(temps) < 2:
        raise RankDeficient("need at least two regions")
    w = np.ones_like(temps) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    c = np.maximum(cos, 0.0)
    used = w > 0
    if np.ptp(c[used]) == 0:
        raise RankDeficient("all regions have the same incidence after clamping")

    sw = np.sqrt(w)
    a = np.column_stack((np.ones_like(c), c)) * sw[:, None]
    (t_bar, beta), *_ = np.linalg.lstsq(a, temps * sw, rcond=None)
    sv = np.linalg.svd(a, compute_uv=False)
    condition = float(sv[0] / sv[-1])
    if beta < 0:
        return SpatialSolveResult(float(np.average(temps, weights=w)), 0.0, condition, clamped=True)
    return SpatialSolveResult(float(t_bar), float(beta), condition)


def binned_observations(temps, cos, n_bins=N_BINS):
    """Bin pixels into equal-width incidence bins; returns (temp, cos) means and counts."""
    temps = np.asarray(temps, dtype=float).ravel()
    cos = np.maximum(np.asarray(cos, dtype=float).ravel(), 0.0)
    lo, hi = cos.min(), cos.max()
    if hi == lo:
        raise RankDeficient("foreground has a single incidence value")
    idx = np.minimum(((cos - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    t_sum = np.bincount(idx, weights=temps, minlength=n_bins)
    c_sum = np.bincount(idx, weights=cos, minlength=n_bins)
    nz = counts > 0
    obs = np.column_stack((t_sum[nz] / counts[nz], c_sum[nz] / counts[nz]))
    return obs, counts[nz].astype(float)


@dataclass
class CorrectionResult:
    corrected: np.ndarray
    beta_f: float          # linear: loading at normal incidence; learned: mean facial bias
    facial_bias: float     # mean correction subtracted over the face
    mean_before: float
    mean_after: float
    method: str
    t_bar: float | None = None
    offset: float = 0.0    # common-mode offset removed via the background reference
    clamped: bool = False


def _foreground(frame: ThermalFrame, face: FaceModel | None):
    if face is not None:
        return face.foreground
    if frame.background_mask is not None:
        return ~frame.background_mask
    return np.ones(frame.temps.shape, dtype=bool)


def reference_offset(frame: ThermalFrame, reference_c, mask=None):
    """Common-mode sensor offset measured on the background wall."""
    bg = frame.background_mask if mask is None else mask
    if bg is None or not np.any(bg):
        raise ConfigError("background reference needs background pixels")
    return float(frame.temps[bg].mean() - reference_c)


def correct_frame(frame: ThermalFrame, face: FaceModel | None = None, model=None, method="linear", *,
                  crop_origin=None, reference_c=None, n_bins=N_BINS) -> CorrectionResult:
    """Remove the estimated solar-loading field from one frame.

    With ``reference_c`` (the known wall temperature) the background mean is
    used as a pseudo-reference and its offset is removed from the face first.
    Background pixels are never modified.
    """
    temps = frame.temps
    if method == "linear":
        if face is None:
            raise ConfigError("linear correction needs the face normals")
        if face.normal_map.shape[:2] != temps.shape:
            raise ConfigError("face and frame sizes differ")
    elif method == "learned":
        if model is None:
            raise ConfigError("learned correction needs a trained model")
    else:
        raise ConfigError(f"unknown correction method {method!r}")

    fg = _foreground(frame, face)
    offset = 0.0
    if reference_c is not None:
        bg = face.background_mask if face is not None else frame.background_mask
        offset = reference_offset(frame, reference_c, bg)
    face_temps = temps[fg] - offset
    corrected = temps.copy()

    if method == "linear":
        cos = face.cos_map[fg]
        obs, counts = binned_observations(face_temps, cos, n_bins)
        sol = solve_two_point(obs, counts)
        field = sol.beta_f * cos
        corrected[fg] = face_temps - field
        return CorrectionResult(corrected=corrected, beta_f=sol.beta_f, facial_bias=float(field.mean()),
                                mean_before=float(temps[fg].mean()), mean_after=float(corrected[fg].mean()),
                                method=method, t_bar=sol.t_bar, offset=offset, clamped=sol.clamped)

    from .regressor import regressor_forward

    size = model.input_size
    if crop_origin is None:
        rows, cols = np.nonzero(fg)
        top = int(np.clip(round(rows.mean()) - size // 2, 0, temps.shape[0] - size))
        left = int(np.clip(round(cols.mean()) - size // 2, 0, temps.shape[1] - size))
        crop_origin = (top, left)
    shifted = temps.copy()
    shifted[fg] -= offset
    beta = regressor_forward(model, crop(shifted, *crop_origin, size))
    corrected[fg] = face_temps - beta
    return CorrectionResult(corrected=corrected, beta_f=beta, facial_bias=beta,
                            mean_before=float(temps[fg].mean()), mean_after=float(corrected[fg].mean()),
                            method=method, offset=offset)

"""Synthetic faces and thermal frame sequences with known ground truth.

Per foreground pixel the rendered skin temperature is

    T(x, t) = baseline(x) + peak_bias(melanin(x)) * f(t) * max(0, l . n(x))

where ``peak_bias`` and the heating/cooling rates inside ``f`` come from the
bio-heat column (see :func:`solarload.bioheat.solar_response`).  Each frame is
pushed through the radiometric chain, perturbed by sensor noise in the
intensity domain and inverted again, the way a camera ISP reports
temperature.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import bioheat, radiometry
from .mesh import load_obj, rasterize_normals
from .radiometry import KELVIN, CoreMap, RadiometricScene

PRESETS = ("ellipsoid", "mesh")
DEFAULT_LIGHT = (0.3, 0.5, 0.8)
SKIN_BOUNDS_C = (27.0, 43.0)


class ConfigError(ValueError):
    """Invalid scene or render configuration."""


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigError("direction vector must be non-zero")
    return v / n


@dataclass
class FaceModel:
    normal_map: np.ndarray          # (h, w, 3) unit vectors
    melanin_map: np.ndarray         # (h, w) 1/m, 0 on background
    baseline_temp_map: np.ndarray   # (h, w) degC; ambient on background
    background_mask: np.ndarray     # (h, w) bool
    light_dir: np.ndarray           # (3,) unit vector towards the sun
    core_temp: float                # degC
    ambient_c: float = 22.0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        fg = ~self.background_mask
        lengths = np.linalg.norm(self.normal_map[fg], axis=-1)
        if lengths.size and np.max(np.abs(lengths - 1.0)) > 1e-6:
            raise ConfigError("normal map must hold unit vectors")
        if np.any(self.melanin_map < 0):
            raise ConfigError("melanin must be non-negative")
        skin = self.baseline_temp_map[fg]
        if skin.size and (skin.min() < SKIN_BOUNDS_C[0] or skin.max() > SKIN_BOUNDS_C[1]):
            raise ConfigError("baseline skin temperature outside 27-43 degC")

    @property
    def height(self):
        return self.normal_map.shape[0]

    @property
    def width(self):
        return self.normal_map.shape[1]

    @property
    def foreground(self):
        return ~self.background_mask

    @property
    def cos_map(self):
        """``max(0, l . n)`` per pixel, 0 on the background."""
        c = np.maximum(self.normal_map @ self.light_dir, 0.0)
        c[self.background_mask] = 0.0
        return c

    @property
    def centre(self):
        rows, cols = np.nonzero(self.foreground)
        return int(round(rows.mean())), int(round(cols.mean()))


def make_face(preset="ellipsoid", melanin_mu=1500.0, core_temp=37.0, seed=0, *,
              width=160, height=120, light_dir=DEFAULT_LIGHT, heterogeneity_c=0.2,
              ambient_c=22.0, face_scale=0.8, mesh_path=None,
              core_mapping: CoreMap = radiometry.DEFAULT_CORE_MAP) -> FaceModel:
    """Procedural face.

    The baseline skin map is ``core_mapping.inverse(core_temp)`` plus a smooth
    seeded perfusion texture with standard deviation ``heterogeneity_c``.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown face preset {preset!r}; expected one of {PRESETS}")
    if width < 8 or height < 8:
        raise ConfigError("face image must be at least 8x8")
    config = dict(preset=preset, melanin_mu=float(melanin_mu), core_temp=float(core_temp), seed=int(seed),
                  width=int(width), height=int(height), light_dir=[float(x) for x in light_dir],
                  heterogeneity_c=float(heterogeneity_c), ambient_c=float(ambient_c),
                  face_scale=float(face_scale), mesh_path=None if mesh_path is None else str(mesh_path),
                  core_mapping=[core_mapping.b0, core_mapping.b1])

    if preset == "ellipsoid":
        normals, mask = _ellipsoid(width, height, face_scale)
    else:
        if mesh_path is None:
            raise ConfigError("mesh preset needs mesh_path")
        v, n, f, fn = load_obj(mesh_path)
        normals, mask = rasterize_normals(v, n, f, fn, width, height, margin=(1 - face_scale) / 2)

    rng = np.random.default_rng(seed)
    texture = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=0.08 * min(width, height))
    if mask.any():
        fg_tex = texture[mask]
        texture = (texture - fg_tex.mean()) / (fg_tex.std() or 1.0)
    centre = float(core_mapping.inverse(core_temp))
    if not SKIN_BOUNDS_C[0] <= centre <= SKIN_BOUNDS_C[1]:
        raise ConfigError(f"core temperature {core_temp} degC maps to skin {centre:.2f} degC, outside 27-43")
    baseline = centre + heterogeneity_c * texture
    baseline = np.clip(baseline, *SKIN_BOUNDS_C)
    baseline[~mask] = ambient_c
    melanin = np.where(mask, float(melanin_mu), 0.0)
    return FaceModel(normal_map=normals, melanin_map=melanin, baseline_temp_map=baseline,
                     background_mask=~mask, light_dir=_unit(light_dir), core_temp=float(core_temp),
                     ambient_c=float(ambient_c), config=config)


def face_from_config(config: dict) -> FaceModel:
    cfg = dict(config)
    b0, b1 = cfg.pop("core_mapping", (radiometry.DEFAULT_CORE_MAP.b0, radiometry.DEFAULT_CORE_MAP.b1))
    return make_face(core_mapping=CoreMap(b0, b1), **cfg)


def _ellipsoid(width, height, face_scale):
    """Analytic normals of a head-like ellipsoid viewed along +z."""
    b = face_scale * height / 2
    a = 0.75 * b
    c = a
    cy, cx = height // 2, width // 2
    rows, cols = np.mgrid[0:height, 0:width]
    x = (cols - cx).astype(float)
    y = (cy - rows).astype(float)
    rho2 = (x / a) ** 2 + (y / b) ** 2
    mask = rho2 < 1.0
    z = c * np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    n = np.stack((x / a**2, y / b**2, z / c**2), axis=-1)
    length = np.linalg.norm(n, axis=-1)
    normals = np.zeros((height, width, 3))
    normals[..., 2] = 1.0
    normals[mask] = n[mask] / length[mask][:, None]
    return normals, mask


@dataclass(frozen=True)
class SensorNoise:
    """Read noise + random-walk offset drift + periodic flat-field recalibration.

    A recalibration every ``recalib_period`` frames zeroes the drift and adds
    a common offset spike of ``recalib_spike`` degC that decays with time
    constant ``spike_decay_frames``.
    """

    read_sigma: float = 0.1
    drift_step_sigma: float = 0.01
    recalib_period: int = 120
    recalib_spike: float = 1.0
    seed: int = 0
    spike_decay_frames: float = 2.0

    def __post_init__(self):
        if self.read_sigma < 0 or self.drift_step_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")
        if self.recalib_period < 1:
            raise ConfigError("recalib_period must be at least one frame")

    @classmethod
    def off(cls, seed=0):
        return cls(0.0, 0.0, 1 << 30, 0.0, seed)

    def offsets(self, count):
        """Common-mode offset (drift + spike) per frame and the event flags."""
        drift = np.zeros(count)
        spike = np.zeros(count)
        events = np.zeros(count, dtype=bool)
        level, last_event = 0.0, None
        for k in range(count):
            if k > 0 and k % self.recalib_period == 0:
                events[k] = True
                level, last_event = 0.0, k
            elif k > 0:
                level += self._rng(k, 0).normal(0.0, self.drift_step_sigma) if self.drift_step_sigma else 0.0
            drift[k] = level
            if last_event is not None and self.recalib_spike:
                spike[k] = self.recalib_spike * np.exp(-(k - last_event) / self.spike_decay_frames)
        return drift + spike, events

    def read(self, k, shape):
        if not self.read_sigma:
            return np.zeros(shape)
        return self._rng(k, 1).normal(0.0, self.read_sigma, shape)

    def _rng(self, frame, stream):
        # one independent stream per (frame, purpose) so frames render in any order
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(frame, stream)))


@dataclass(frozen=True)
class Schedule:
    load_s: float = 300.0
    cool_s: float = 300.0
    steady_s: float = 0.0
    fps: float = 1.0

    def __post_init__(self):
        if self.load_s < 0 or self.cool_s < 0 or self.steady_s < 0 or self.fps <= 0:
            raise ConfigError("schedule durations must be non-negative and fps positive")

    @property
    def count(self):
        return int(round((self.steady_s + self.load_s + self.cool_s) * self.fps))

    @property
    def times(self):
        return np.arange(self.count) / self.fps

    def phases(self):
        t = self.times
        return np.where(t < self.steady_s, "steady",
                        np.where(t < self.steady_s + self.load_s, "loading", "cooling"))


@dataclass(frozen=True)
class SunConfig:
    irradiance: float = 1000.0

    def __post_init__(self):
        if self.irradiance < 0:
            raise ConfigError("irradiance must be non-negative")


@dataclass
class ThermalFrame:
    temps: np.ndarray               # (h, w) degC as reported
    timestamp: float
    calib_event: bool = False
    background_mask: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.temps)):
            raise ConfigError("frame temperatures must be finite")

    @property
    def height(self):
        return self.temps.shape[0]

    @property
    def width(self):
        return self.temps.shape[1]


@dataclass
class GroundTruth:
    baseline: np.ndarray       # (h, w) degC
    bias: np.ndarray           # (n, h, w) degC, solar loading per frame
    fraction: np.ndarray       # (n,) f(t) in [0, 1]
    peak_map: np.ndarray       # (h, w) peak bias at normal incidence
    beta_f: np.ndarray         # (n,) scalar label: mean facial peak bias * f(t)
    response: bioheat.SolarResponse | None = None


@dataclass
class Sequence:
    temps: np.ndarray          # (n, h, w) degC as reported
    times: np.ndarray          # (n,) s
    calib_events: np.ndarray   # (n,) bool
    phases: np.ndarray         # (n,) str
    background_mask: np.ndarray

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> ThermalFrame:
        return ThermalFrame(self.temps[k], float(self.times[k]), bool(self.calib_events[k]),
                            self.background_mask)

    def __iter__(self):
        return (self[k] for k in range(len(self)))


def loading_fraction(times, schedule: Schedule, heating_rate, cooling_rate):
    """f(t): 0 before loading, normalised exponential rise to 1, exponential decay."""
    t = np.asarray(times, dtype=float)
    rh = np.asarray(heating_rate, dtype=float)
    rc = np.asarray(cooling_rate, dtype=float)
    start, end = schedule.steady_s, schedule.steady_s + schedule.load_s
    if schedule.load_s == 0:
        return np.zeros(np.broadcast(t, rh, rc).shape)
    dt = np.clip(t - start, 0, None)
    with np.errstate(invalid="ignore", divide="ignore"):
        rise = np.expm1(-rh * dt) / np.expm1(-rh * schedule.load_s)
    # zero heating rate: the normalised rise tends to a linear ramp
    rise = np.where(rh > 0, rise, dt / schedule.load_s)
    fall = np.exp(-rc * np.clip(t - end, 0, None))
    return np.where(t < start, 0.0, np.where(t < end, rise, fall))


def render_sequence(face: FaceModel, sun: SunConfig = SunConfig(), noise: SensorNoise | None = None,
                    schedule: Schedule = Schedule(), *, scene: RadiometricScene | None = None,
                    isp_scene: RadiometricScene | None = None,
                    params: bioheat.TissueParams | None = None):
    """Render a frame sequence and its ground truth.

    ``scene`` is the true radiometric setting; ``isp_scene`` is what the
    camera assumes when inverting (defaults to the truth).
    """
    noise = SensorNoise.off() if noise is None else noise
    scene = RadiometricScene.from_celsius(face.ambient_c) if scene is None else scene
    isp_scene = scene if isp_scene is None else isp_scene
    params = bioheat.default_params() if params is None else params
    fg = face.foreground

    peak = np.zeros(face.melanin_map.shape)
    rh = np.ones_like(peak)
    rc = np.ones_like(peak)
    response = None
    if schedule.load_s > 0:
        for mu in np.unique(face.melanin_map[fg]):
            response = bioheat.solar_response(mu, sun.irradiance, schedule.load_s,
                                              max(schedule.cool_s, 1.0), params)
            sel = fg & (face.melanin_map == mu)
            peak[sel] = response.peak_bias
            rh[sel] = response.heating_rate
            rc[sel] = response.cooling_rate
    cos = face.cos_map

    times = schedule.times
    n = len(times)
    offsets, events = noise.offsets(n)
    temps = np.empty((n,) + peak.shape)
    bias = np.empty_like(temps)
    fractions = np.empty(n)
    beta_f = np.empty(n)
    mean_peak = float(peak[fg].mean()) if fg.any() else 0.0
    for k, t in enumerate(times):
        f = loading_fraction(t, schedule, rh, rc)
        b = peak * f * cos
        bias[k] = b
        true_k = face.baseline_temp_map + b + KELVIN
        intensity = radiometry.forward_chain(true_k, scene)
        err = offsets[k] + noise.read(k, peak.shape)
        if np.any(err):
            intensity = intensity + radiometry.chain_slope(true_k, scene) * err
        temps[k] = radiometry.invert_chain(intensity, isp_scene) - KELVIN
        f_face = f[fg].mean() if fg.any() else 0.0
        fractions[k] = f_face
        beta_f[k] = float((peak * f)[fg].mean()) if fg.any() else 0.0

    seq = Sequence(temps=temps, times=times, calib_events=events, phases=schedule.phases(),
                   background_mask=face.background_mask.copy())
    truth = GroundTruth(baseline=face.baseline_temp_map.copy(), bias=bias, fraction=fractions,
                        peak_map=peak, beta_f=beta_f, response=response)
    return seq, truth


def inject_fever(frame: ThermalFrame, offset=1.6, background_mask=None) -> ThermalFrame:
    """Shift foreground temperatures by ``offset`` degC (simulated fever)."""
    mask = frame.background_mask if background_mask is None else background_mask
    temps = frame.temps.copy()
    if mask is None:
        temps += offset
    else:
        temps[~mask] += offset
    return dataclasses.replace(frame, temps=temps)


def detect_calibration_weights(frames, background_mask=None, threshold_mads=5.0, settle_frames=30,
                               window=15, floor=1e-6):
    """Per-frame weight in [0, 1] from spikes in the background pseudo-reference.

    A frame whose background mean departs from the trailing running median by
    more than ``threshold_mads`` robust deviations of the frame-to-frame
    differences gets weight 0; later frames ramp linearly back to 1 over
    ``settle_frames``.
    """
    if isinstance(frames, Sequence):
        background_mask = frames.background_mask if background_mask is None else background_mask
        stack = frames.temps
    elif isinstance(frames, np.ndarray):
        stack = frames
    else:
        frames = list(frames)
        if background_mask is None and frames:
            background_mask = frames[0].background_mask
        stack = np.stack([f.temps for f in frames])
    if background_mask is None or not np.any(background_mask):
        raise ConfigError("calibration detection needs a non-empty background mask")
    bg = stack[:, background_mask].mean(axis=1)
    n = len(bg)
    weights = np.ones(n)
    if n < 2:
        return weights
    d = np.diff(bg)
    mad = 1.4826 * np.median(np.abs(d - np.median(d)))
    limit = threshold_mads * max(mad, floor)
    last = None
    for k in range(n):
        if k > 0:
            ref = np.median(bg[max(0, k - window):k])
            if abs(bg[k] - ref) > limit:
                last = k
        if last is not None:
            weights[k] = min(1.0, (k - last) / settle_frames)
    return weights


def crop(temps, top, left, size=50):
    temps = np.asarray(temps)
    if top < 0 or left < 0 or top + size > temps.shape[-2] or left + size > temps.shape[-1]:
        raise ConfigError(f"crop {size}x{size} at ({top}, {left}) leaves the frame {temps.shape[-2:]}")
    return temps[..., top:top + size, left:left + size]


def centred_crop_origin(face: FaceModel, size=50):
    r, c = face.centre
    top = int(np.clip(r - size // 2, 0, face.height - size))
    left = int(np.clip(c - size // 2, 0, face.width - size))
    return top, left


def forehead_pixel(face: FaceModel):
    """Pixel halfway between the face centre and the top of the face."""
    rows, cols = np.nonzero(face.foreground)
    r, c = face.centre
    top = rows.min()
    return int(round(r - 0.5 * (r - top))), c

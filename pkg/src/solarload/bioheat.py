"""1-D Pennes bio-heat solver with a melanin-dependent solar source.

The tissue column is discretised into cells of width ``depth_step``; cell 0
touches the air, the last cell sits on the body core and is held at blood
temperature.  Time stepping is forward Euler on the finite-volume balance

    rho c dx dT/dt = conduction in - conduction out
                     + rho_b c_b w dx (T_blood - T)
                     + absorbed solar flux in the cell
                     [+ h (T_air - T) on the surface cell]

which conserves energy exactly when both ends are insulated.  Radiative
losses at the surface are folded into the convection coefficient.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .radiometry import KELVIN, CoreMap

BOUNDARIES = ("convective", "dirichlet", "insulated")


class StabilityError(ValueError):
    """Time step exceeds the explicit scheme's positivity bound."""


class FitError(RuntimeError):
    """Exponential surrogate fit failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (rms residual {residual:.4g})")
        self.residual = residual


@dataclass(frozen=True)
class Layer:
    name: str
    thickness: float
    conductivity: float
    density: float
    specific_heat: float
    perfusion: float = 0.0


@dataclass(frozen=True)
class TissueParams:
    """Column description plus environment; loadable from JSON."""

    layers: tuple
    depth_step: float = 1e-4
    blood_temp_c: float = 37.0
    blood_density: float = 1060.0
    blood_specific_heat: float = 3770.0
    convection_coeff: float = 10.0
    air_temp_c: float = 22.0
    irradiance: float = 1000.0
    melanin_mu: float = 1500.0
    dermis_mu: float = 1000.0

    @classmethod
    def from_dict(cls, d):
        layers = tuple(
            Layer(name=l["name"], thickness=l["thickness_m"], conductivity=l["conductivity_w_mk"],
                  density=l["density_kg_m3"], specific_heat=l["specific_heat_j_kgk"],
                  perfusion=l.get("perfusion_1_s", 0.0))
            for l in d["layers"])
        return cls(
            layers=layers,
            depth_step=d.get("depth_step_m", 1e-4),
            blood_temp_c=d.get("blood_temp_c", 37.0),
            blood_density=d.get("blood_density_kg_m3", 1060.0),
            blood_specific_heat=d.get("blood_specific_heat_j_kgk", 3770.0),
            convection_coeff=d.get("convection_coeff_w_m2k", 10.0),
            air_temp_c=d.get("air_temp_c", 22.0),
            irradiance=d.get("irradiance_w_m2", 1000.0),
            melanin_mu=d.get("melanin_mu_1_m", 1500.0),
            dermis_mu=d.get("dermis_mu_1_m", 1000.0),
        )

    def to_dict(self):
        return {
            "depth_step_m": self.depth_step,
            "layers": [{"name": l.name, "thickness_m": l.thickness, "conductivity_w_mk": l.conductivity,
                        "density_kg_m3": l.density, "specific_heat_j_kgk": l.specific_heat,
                        "perfusion_1_s": l.perfusion} for l in self.layers],
            "blood_temp_c": self.blood_temp_c,
            "blood_density_kg_m3": self.blood_density,
            "blood_specific_heat_j_kgk": self.blood_specific_heat,
            "convection_coeff_w_m2k": self.convection_coeff,
            "air_temp_c": self.air_temp_c,
            "irradiance_w_m2": self.irradiance,
            "melanin_mu_1_m": self.melanin_mu,
            "dermis_mu_1_m": self.dermis_mu,
        }

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_params(path=None) -> TissueParams:
    """Read a tissue parameter file; ``None`` gives the packaged defaults."""
    if path is None:
        text = resources.files("solarload").joinpath("data/tissue_default.json").read_text()
    else:
        text = Path(path).read_text()
    return TissueParams.from_dict(json.loads(text))


def save_params(params: TissueParams, path):
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


@lru_cache(maxsize=1)
def default_params() -> TissueParams:
    return load_params()


@dataclass
class TissueGrid:
    """Discretised tissue column.  Temperatures in kelvin, surface first."""

    depth_step: float
    node_temps: np.ndarray
    conductivity: np.ndarray
    density: np.ndarray
    specific_heat: np.ndarray
    perfusion_rate: np.ndarray
    blood_temp: float
    melanin_mu: float
    # optical attenuation used to spread absorbed sunlight over depth;
    # epidermal cells use melanin_mu, dermal cells dermis_mu, others 0
    epidermis: np.ndarray = field(default=None)
    attenuation: np.ndarray = field(default=None)
    blood_rho_c: float = 1060.0 * 3770.0
    surface_bc: str = "convective"
    core_bc: str = "dirichlet"

    def __post_init__(self):
        n = len(self.node_temps)
        self.node_temps = np.asarray(self.node_temps, dtype=float)
        for name in ("conductivity", "density", "specific_heat", "perfusion_rate"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            setattr(self, name, arr)
        if self.epidermis is None:
            self.epidermis = np.zeros(n, dtype=bool)
            self.epidermis[0] = True
        if self.attenuation is None:
            self.attenuation = np.where(self.epidermis, self.melanin_mu, 0.0)
        if n < 3:
            raise ValueError("tissue grid needs at least three cells")
        if self.depth_step <= 0:
            raise ValueError("depth_step must be positive")
        if np.any(self.conductivity <= 0) or np.any(self.density <= 0) or np.any(self.specific_heat <= 0):
            raise ValueError("conductivity, density and specific heat must be positive")
        if np.any(self.perfusion_rate < 0) or self.melanin_mu < 0:
            raise ValueError("perfusion and melanin coefficients must be non-negative")
        if self.surface_bc not in BOUNDARIES or self.core_bc not in ("dirichlet", "insulated"):
            raise ValueError(f"unknown boundary condition {self.surface_bc!r}/{self.core_bc!r}")

    @property
    def n(self):
        return len(self.node_temps)

    @property
    def depths(self):
        """Cell-centre depths in metres."""
        return (np.arange(self.n) + 0.5) * self.depth_step

    def copy(self, **changes):
        fields = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for k, v in fields.items():
            if isinstance(v, np.ndarray):
                fields[k] = v.copy()
        fields.update(changes)
        if "melanin_mu" in changes and "attenuation" not in changes:
            fields["attenuation"] = np.where(fields["epidermis"], changes["melanin_mu"], self.attenuation)
        return TissueGrid(**fields)

    def thermal_energy(self):
        """Sum of rho c T dx over cells, J m^-2 (relative to 0 K)."""
        return float(np.sum(self.density * self.specific_heat * self.node_temps) * self.depth_step)


@dataclass(frozen=True)
class SolarSource:
    irradiance: float = 1000.0
    cos_incidence: float = 1.0
    absorbed_fraction: float = 0.0

    def __post_init__(self):
        if self.irradiance < 0:
            raise ValueError("irradiance must be non-negative")
        if not 0.0 <= self.absorbed_fraction <= 1.0:
            raise ValueError("absorbed fraction must lie in [0, 1]")

    @property
    def absorbed_flux(self):
        """Absorbed solar power per unit skin area, W m^-2."""
        return self.absorbed_fraction * self.irradiance * max(0.0, self.cos_incidence)


NO_SUN = SolarSource(0.0, 0.0, 0.0)


def absorbed_fraction(melanin_mu, epidermis_thickness=1e-4):
    """Fraction of incident sunlight absorbed by the epidermis (Beer-Lambert)."""
    mu = np.asarray(melanin_mu, dtype=float)
    if np.any(mu < 0) or epidermis_thickness < 0:
        raise ValueError("melanin coefficient and thickness must be non-negative")
    out = -np.expm1(-mu * epidermis_thickness)
    return out if out.ndim else float(out)


def build_grid(params: TissueParams | None = None, melanin_mu=None, *,
               blood_temp_c=None, steady=True) -> TissueGrid:
    """Grid from layer table, optionally initialised at the sunless steady state."""
    params = default_params() if params is None else params
    mu = params.melanin_mu if melanin_mu is None else melanin_mu
    dx = params.depth_step
    k, rho, c, w, epi, att = [], [], [], [], [], []
    for layer in params.layers:
        cells = int(round(layer.thickness / dx))
        if cells < 1:
            raise ValueError(f"layer {layer.name!r} thinner than one depth step")
        k += [layer.conductivity] * cells
        rho += [layer.density] * cells
        c += [layer.specific_heat] * cells
        w += [layer.perfusion] * cells
        epi += [layer.name == "epidermis"] * cells
        if layer.name == "epidermis":
            att += [mu] * cells
        elif layer.name == "dermis":
            att += [params.dermis_mu] * cells
        else:
            att += [0.0] * cells
    if not any(epi):
        epi[0] = True
        att[0] = mu
    blood = (params.blood_temp_c if blood_temp_c is None else blood_temp_c) + KELVIN
    grid = TissueGrid(
        depth_step=dx, node_temps=np.full(len(k), blood), conductivity=np.array(k),
        density=np.array(rho), specific_heat=np.array(c), perfusion_rate=np.array(w),
        blood_temp=blood, melanin_mu=mu, epidermis=np.array(epi), attenuation=np.array(att),
        blood_rho_c=params.blood_density * params.blood_specific_heat)
    if steady:
        grid = steady_state(grid, params.convection_coeff, params.air_temp_c + KELVIN)
    return grid


def epidermis_thickness(grid: TissueGrid):
    return float(np.count_nonzero(grid.epidermis)) * grid.depth_step


def source_for(grid: TissueGrid, irradiance, cos_incidence=1.0) -> SolarSource:
    return SolarSource(irradiance, cos_incidence, absorbed_fraction(grid.melanin_mu, epidermis_thickness(grid)))


def deposition_weights(grid: TissueGrid):
    """Share of the absorbed solar flux landing in each cell (sums to 1)."""
    att = grid.attenuation
    if not np.any(att > 0):
        w = np.zeros(grid.n)
        w[0] = 1.0
        return w
    transmitted = np.exp(-np.cumsum(att * grid.depth_step))
    incoming = np.concatenate(([1.0], transmitted[:-1]))
    absorbed = incoming - transmitted
    return absorbed / absorbed.sum()


class _Operator:
    """Precomputed coefficients of the explicit update for one grid."""

    def __init__(self, grid: TissueGrid, convection_coeff, air_temp):
        dx = grid.depth_step
        k = grid.conductivity
        self.grid = grid
        self.h = float(convection_coeff) if grid.surface_bc == "convective" else 0.0
        self.air_temp = float(air_temp)
        self.cap = grid.density * grid.specific_heat * dx          # J m^-2 K^-1
        self.cond = 2.0 * k[:-1] * k[1:] / (k[:-1] + k[1:]) / dx   # interface conductance
        self.perf = grid.blood_rho_c * grid.perfusion_rate * dx
        self.weights = deposition_weights(grid)
        self.free = np.ones(grid.n, dtype=bool)
        if grid.surface_bc == "dirichlet":
            self.free[0] = False
        if grid.core_bc == "dirichlet":
            self.free[-1] = False

    def dt_limit(self):
        """Largest dt keeping every update a convex combination (max principle)."""
        outflow = self.perf.copy()
        outflow[:-1] += self.cond
        outflow[1:] += self.cond
        outflow[0] += self.h
        ratio = self.cap[self.free] / np.maximum(outflow[self.free], 1e-300)
        return float(ratio.min())

    def rate(self, t, deposited):
        g = self.grid
        flux = self.cond * (t[1:] - t[:-1])
        net = self.perf * (g.blood_temp - t)
        net[:-1] += flux
        net[1:] -= flux
        net[0] += self.h * (self.air_temp - t[0])
        if deposited:
            net += deposited * self.weights
        net[~self.free] = 0.0
        return net / self.cap

    def check(self, dt):
        limit = self.dt_limit()
        if dt > limit * (1 + 1e-12):
            raise StabilityError(f"dt={dt:g} s exceeds explicit stability limit {limit:g} s")


def stability_limit(grid: TissueGrid, convection_coeff=10.0):
    return _Operator(grid, convection_coeff, grid.blood_temp).dt_limit()


def step(grid: TissueGrid, source: SolarSource, convection_coeff, air_temp, dt) -> TissueGrid:
    """Advance one explicit step; returns a new grid (``air_temp`` in kelvin)."""
    op = _Operator(grid, convection_coeff, air_temp)
    op.check(dt)
    t = grid.node_temps + dt * op.rate(grid.node_temps, source.absorbed_flux)
    return grid.copy(node_temps=t)


def steady_state(grid: TissueGrid, convection_coeff, air_temp, source: SolarSource = NO_SUN) -> TissueGrid:
    """Time-independent solution under a constant source (direct banded solve)."""
    if grid.surface_bc == "insulated" and grid.core_bc == "insulated" and not np.any(grid.perfusion_rate):
        raise ValueError("fully insulated column without perfusion has no unique steady state")
    op = _Operator(grid, convection_coeff, air_temp)
    n = grid.n
    diag = op.perf.copy()
    diag[:-1] += op.cond
    diag[1:] += op.cond
    diag[0] += op.h
    upper = np.concatenate(([0.0], -op.cond))
    lower = np.concatenate((-op.cond, [0.0]))
    rhs = op.perf * grid.blood_temp + source.absorbed_flux * op.weights
    rhs[0] += op.h * op.air_temp
    for i in np.flatnonzero(~op.free):
        diag[i] = 1.0
        rhs[i] = grid.node_temps[i] if i == 0 else grid.blood_temp
        if i + 1 < n:
            upper[i + 1] = 0.0
        if i > 0:
            lower[i - 1] = 0.0
    ab = np.vstack((upper, diag, lower))
    t = linalg.solve_banded((1, 1), ab, rhs)
    return grid.copy(node_temps=t)


@dataclass
class CycleResult:
    """Surface temperature history of one load/cool cycle."""

    times: np.ndarray          # s
    surface_c: np.ndarray      # degC
    load_duration: float
    peak_profile: np.ndarray   # K, at the end of loading
    final_profile: np.ndarray  # K
    deep_c: np.ndarray         # degC, deepest free cell over time
    depths: np.ndarray         # m

    @property
    def baseline_c(self):
        return float(self.surface_c[0])

    @property
    def peak_bias(self):
        return float(self.surface_c.max() - self.surface_c[0])

    @property
    def load_end(self):
        return int(np.argmin(np.abs(self.times - self.load_duration)))

    def heating(self):
        i = self.load_end
        return self.times[:i + 1], self.surface_c[:i + 1]

    def cooling(self):
        i = self.load_end
        return self.times[i:] - self.times[i], self.surface_c[i:]


def default_dt(grid: TissueGrid, convection_coeff=10.0, safety=0.9):
    return safety * stability_limit(grid, convection_coeff)


def simulate_cycle(grid: TissueGrid, source: SolarSource, load_duration, cool_duration, dt=None,
                   convection_coeff=10.0, air_temp=22.0 + KELVIN) -> CycleResult:
    """Sun on for ``load_duration`` seconds, then off for ``cool_duration``."""
    if load_duration <= 0 or cool_duration <= 0:
        raise ValueError("durations must be positive")
    op = _Operator(grid, convection_coeff, air_temp)
    dt = default_dt(grid, convection_coeff) if dt is None else dt
    op.check(dt)
    n_load = int(np.ceil(load_duration / dt - 1e-9))
    n_cool = int(np.ceil(cool_duration / dt - 1e-9))
    dt_load = load_duration / n_load
    dt_cool = cool_duration / n_cool
    deep = grid.n - 2 if grid.core_bc == "dirichlet" else grid.n - 1

    t = grid.node_temps.copy()
    surface = np.empty(n_load + n_cool + 1)
    deep_series = np.empty_like(surface)
    surface[0], deep_series[0] = t[0], t[deep]
    flux = source.absorbed_flux
    for i in range(1, n_load + 1):
        t += dt_load * op.rate(t, flux)
        surface[i], deep_series[i] = t[0], t[deep]
    peak = t.copy()
    for i in range(n_load + 1, n_load + n_cool + 1):
        t += dt_cool * op.rate(t, 0.0)
        surface[i], deep_series[i] = t[0], t[deep]
    times = np.concatenate((np.arange(n_load + 1) * dt_load,
                            load_duration + np.arange(1, n_cool + 1) * dt_cool))
    return CycleResult(times=times, surface_c=surface - KELVIN, load_duration=float(load_duration),
                       peak_profile=peak, final_profile=t, deep_c=deep_series - KELVIN,
                       depths=grid.depths)


@dataclass(frozen=True)
class SurrogateFit:
    amplitude: float
    rate: float
    asymptote: float
    branch: str
    max_deviation: float
    rms: float

    def predict(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.branch == "cooling":
            return self.asymptote + self.amplitude * np.exp(-self.rate * tau)
        return self.asymptote - self.amplitude * np.exp(-self.rate * tau)


def _basis(tau, rate):
    return np.exp(-rate * tau)


def _profile_linear(tau, y, rate):
    """Best (asymptote, coefficient) for fixed rate; returns (params, sse)."""
    a = np.column_stack((np.ones_like(tau), _basis(tau, rate)))
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    r = a @ coef - y
    return coef, float(r @ r)


def fit_exponential_surrogate(times, temps_c, branch="cooling", rate_bounds=(1e-5, 1.0)) -> SurrogateFit:
    """Least-squares ``C + A exp(-r tau)`` fit, tau measured from the first sample.

    For ``branch="heating"`` the same curve is reported as a rise of
    ``amplitude`` towards ``asymptote``.
    """
    tau = np.asarray(times, dtype=float)
    tau = tau - tau[0]
    y = np.asarray(temps_c, dtype=float)
    if len(y) < 3 or len(tau) != len(y):
        raise FitError("need at least three samples of equal length")
    if branch not in ("cooling", "heating"):
        raise ValueError(f"unknown branch {branch!r}")
    span = np.ptp(y)
    if span == 0:
        return SurrogateFit(0.0, 0.0, float(y[0]), branch, 0.0, 0.0)

    lo, hi = np.log(rate_bounds[0]), np.log(rate_bounds[1])
    grid = np.linspace(lo, hi, 121)
    sse = [_profile_linear(tau, y, np.exp(g))[1] for g in grid]
    j = int(np.argmin(sse))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda g: _profile_linear(tau, y, np.exp(g))[1],
                                   bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    rate = float(np.exp(res.x))
    (c, amp), _ = _profile_linear(tau, y, rate)

    def resid(p):
        return p[0] + p[1] * np.exp(-p[2] * tau) - y

    ls = optimize.least_squares(resid, [c, amp, rate], xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                method="lm", max_nfev=2000)
    if not ls.success or not np.all(np.isfinite(ls.x)):
        rms = float(np.sqrt(np.mean(resid([c, amp, rate]) ** 2)))
        raise FitError("exponential surrogate did not converge", rms)
    c, amp, rate = (float(v) for v in ls.x)
    dev = resid(ls.x)
    if branch == "heating":
        c, amp = c, -amp
    return SurrogateFit(amplitude=amp, rate=rate, asymptote=c, branch=branch,
                        max_deviation=float(np.max(np.abs(dev))), rms=float(np.sqrt(np.mean(dev**2))))


@dataclass(frozen=True)
class SolarResponse:
    """Per-melanin summary used by the scene renderer."""

    melanin_mu: float
    peak_bias: float     # degC at normal incidence, end of loading
    heating_rate: float  # 1/s
    cooling_rate: float  # 1/s
    heating_fit: SurrogateFit
    cooling_fit: SurrogateFit


@lru_cache(maxsize=256)
def _solar_response_cached(melanin_mu, irradiance, load_duration, cool_duration, params):
    grid = build_grid(params, melanin_mu)
    cyc = simulate_cycle(grid, source_for(grid, irradiance), load_duration, cool_duration,
                         convection_coeff=params.convection_coeff, air_temp=params.air_temp_c + KELVIN)
    heat = fit_exponential_surrogate(*cyc.heating(), branch="heating")
    cool = fit_exponential_surrogate(*cyc.cooling(), branch="cooling")
    return SolarResponse(melanin_mu=melanin_mu, peak_bias=cyc.surface_c[cyc.load_end] - cyc.baseline_c,
                         heating_rate=heat.rate, cooling_rate=cool.rate,
                         heating_fit=heat, cooling_fit=cool)


def solar_response(melanin_mu, irradiance=1000.0, load_duration=300.0, cool_duration=300.0,
                   params: TissueParams | None = None) -> SolarResponse:
    params = default_params() if params is None else params
    return _solar_response_cached(float(melanin_mu), float(irradiance), float(load_duration),
                                  float(cool_duration), params)


def fit_core_map(params: TissueParams | None = None, core_temps_c=np.linspace(36.0, 40.0, 9)) -> CoreMap:
    """Linear map from sunless steady surface temperature to blood temperature."""
    params = default_params() if params is None else params
    skin = np.array([build_grid(params, blood_temp_c=tc).node_temps[0] - KELVIN for tc in core_temps_c])
    b1, b0 = np.polyfit(skin, np.asarray(core_temps_c, dtype=float), 1)
    return CoreMap(b0=float(b0), b1=float(b1))

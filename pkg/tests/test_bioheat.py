import numpy as np
import pytest
from hypothesis import given, strategies as st

from solarload import bioheat
from solarload.bioheat import (NO_SUN, SolarSource, StabilityError, TissueGrid, absorbed_fraction, build_grid,
                               fit_exponential_surrogate, simulate_cycle, source_for, stability_limit, step,
                               steady_state)
from solarload.radiometry import KELVIN

DX = 1e-4


def uniform_grid(n=20, temps=None, **kw):
    temps = np.full(n, 310.15) if temps is None else np.asarray(temps, dtype=float)
    base = dict(depth_step=DX, node_temps=temps, conductivity=0.4, density=1050.0, specific_heat=3500.0,
                perfusion_rate=0.0, blood_temp=310.15, melanin_mu=0.0)
    base.update(kw)
    return TissueGrid(**base)


# ---------------------------------------------------------------- absorbed fraction

def test_absorbed_fraction_limits():
    assert absorbed_fraction(0.0) == 0.0
    assert absorbed_fraction(1e9) == 1.0
    assert absorbed_fraction(1500.0, 1e-4) == pytest.approx(1 - np.exp(-0.15), rel=1e-14)
    with pytest.raises(ValueError):
        absorbed_fraction(-1.0)


@given(mu=st.floats(0.0, 1e5))
def test_absorbed_fraction_monotone(mu):
    a, b = absorbed_fraction(mu), absorbed_fraction(2 * mu)
    assert 0.0 <= a <= b <= 1.0


# ---------------------------------------------------------------- params and grid

def test_default_params_layers():
    p = bioheat.default_params()
    assert [l.name for l in p.layers] == ["epidermis", "dermis", "fat", "muscle"]
    assert [l.thickness for l in p.layers] == pytest.approx([1e-4, 1.5e-3, 4.4e-3, 24e-3])
    assert all(0.2 <= l.conductivity <= 0.5 for l in p.layers)
    assert all(0.0 <= l.perfusion <= 0.002 for l in p.layers)
    assert p.depth_step == 1e-4 and p.convection_coeff == 10.0 and p.irradiance == 1000.0


def test_params_json_round_trip(tmp_path):
    p = bioheat.default_params().replace(irradiance=1900.0)
    path = tmp_path / "tissue.json"
    bioheat.save_params(p, path)
    assert bioheat.load_params(path) == p


def test_build_grid_shape_and_boundaries():
    g = build_grid()
    assert g.n == 300
    assert g.node_temps[-1] == pytest.approx(37.0 + KELVIN)
    assert 27.0 < g.node_temps[0] - KELVIN < 37.0
    assert np.count_nonzero(g.epidermis) == 1


def test_grid_validation():
    with pytest.raises(ValueError):
        uniform_grid(conductivity=0.0)
    with pytest.raises(ValueError):
        uniform_grid(perfusion_rate=-1.0)
    with pytest.raises(ValueError):
        uniform_grid(surface_bc="radiative")


def test_deposition_weights_sum_to_one_and_decay():
    g = build_grid()
    w = bioheat.deposition_weights(g)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(w[:16]) <= 0) and np.all(w[16:] == 0)


# ---------------------------------------------------------------- stepping

def test_linear_steady_profile_preserved():
    temps = np.linspace(300.0, 310.0, 30)
    g = uniform_grid(30, temps, surface_bc="dirichlet")
    dt = 0.9 * stability_limit(g)
    for _ in range(100):
        new = step(g, NO_SUN, 10.0, 295.0, dt)
        assert np.max(np.abs(new.node_temps - g.node_temps)) < 1e-9
        g = new


def test_equilibrium_unchanged():
    g = build_grid(steady=False)
    g = g.copy(node_temps=np.full(g.n, g.blood_temp))
    new = step(g, NO_SUN, 10.0, g.blood_temp, 0.9 * stability_limit(g))
    assert np.max(np.abs(new.node_temps - g.node_temps)) < 1e-12


def test_single_step_surface_oracle():
    # two-material column so the harmonic interface conductance matters
    n = 10
    k = np.array([0.21] + [0.37] * (n - 1))
    rho = np.array([1100.0] * n)
    c = np.array([3600.0] + [3300.0] * (n - 1))
    omega = np.array([0.0] + [0.0012] * (n - 1))
    temps = np.linspace(306.0, 310.15, n)
    epi = np.zeros(n, bool)
    epi[0] = True
    att = np.where(epi, 1500.0, 0.0)
    g = TissueGrid(DX, temps, k, rho, c, omega, 310.15, 1500.0, epidermis=epi, attenuation=att,
                   blood_rho_c=1060.0 * 3770.0)
    src = SolarSource(1000.0, 0.8, absorbed_fraction(1500.0, DX))
    h, air, dt = 10.0, 295.15, 0.01
    new = step(g, src, h, air, dt)

    k01 = 2 * 0.21 * 0.37 / (0.21 + 0.37) / DX
    deposited = (1 - np.exp(-1500.0 * DX)) * 1000.0 * 0.8
    flux = deposited + h * (air - temps[0]) + k01 * (temps[1] - temps[0])
    expected = temps[0] + dt / (1100.0 * 3600.0 * DX) * flux
    assert new.node_temps[0] == pytest.approx(expected, abs=1e-12)
    assert new.node_temps[-1] == temps[-1]


def test_stability_limit_pure_conduction_and_error():
    g = uniform_grid(20, surface_bc="insulated", core_bc="insulated")
    assert stability_limit(g) == pytest.approx(1050.0 * 3500.0 * DX**2 / (2 * 0.4), rel=1e-12)
    with pytest.raises(StabilityError):
        step(g, NO_SUN, 10.0, 300.0, 1.01 * stability_limit(g))
    # the default column: limit below the pure-conduction value because of perfusion and h
    d = build_grid()
    assert stability_limit(d) < min(d.density * d.specific_heat * DX**2 / (2 * d.conductivity))


def test_insulated_energy_conserved_over_many_steps(rng):
    g = uniform_grid(25, 300.0 + 10 * rng.random(25), surface_bc="insulated", core_bc="insulated",
                     conductivity=0.2 + 0.3 * rng.random(25))
    e0 = g.thermal_energy()
    op = bioheat._Operator(g, 0.0, 300.0)
    dt = 0.9 * op.dt_limit()
    t = g.node_temps.copy()
    for _ in range(10_000):
        t += dt * op.rate(t, 0.0)
    assert abs(g.copy(node_temps=t).thermal_energy() - e0) / e0 < 1e-9


@given(seed=st.integers(0, 10_000), air=st.floats(280.0, 320.0))
def test_maximum_principle(seed, air):
    r = np.random.default_rng(seed)
    temps = 295.0 + 20.0 * r.random(15)
    g = uniform_grid(15, temps, perfusion_rate=0.001 * r.random(15), blood_temp=305.0)
    lo = min(temps.min(), air, 305.0)
    hi = max(temps.max(), air, 305.0)
    dt = stability_limit(g, 25.0)
    for _ in range(200):
        g = step(g, NO_SUN, 25.0, air, dt)
        assert g.node_temps.min() >= lo - 1e-9 and g.node_temps.max() <= hi + 1e-9


def test_irradiance_scaling_of_first_step():
    g = build_grid()
    dt = bioheat.default_dt(g)
    s1 = step(g, source_for(g, 1000.0), 10.0, 22.0 + KELVIN, dt).node_temps[0] - g.node_temps[0]
    s2 = step(g, source_for(g, 2000.0), 10.0, 22.0 + KELVIN, dt).node_temps[0] - g.node_temps[0]
    assert s2 / s1 == pytest.approx(2.0, rel=1e-2)


def test_steady_state_is_fixed_point():
    g = build_grid()
    new = step(g, NO_SUN, 10.0, 22.0 + KELVIN, bioheat.default_dt(g))
    assert np.max(np.abs(new.node_temps - g.node_temps)) < 1e-9


# ---------------------------------------------------------------- cycles

def test_zero_irradiance_cycle_is_flat():
    g = build_grid()
    cyc = simulate_cycle(g, source_for(g, 0.0), 60.0, 60.0)
    assert np.ptp(cyc.surface_c) < 1e-9


def test_peak_increases_with_melanin_and_core_is_invariant():
    peaks = []
    for mu in (500.0, 1500.0, 4000.0):
        g = build_grid(melanin_mu=mu)
        cyc = simulate_cycle(g, source_for(g, 1000.0), 300.0, 300.0)
        peaks.append(cyc.peak_bias)
        assert np.ptp(cyc.deep_c) < 0.1
    assert peaks[0] < peaks[1] < peaks[2]


def test_cycle_validation():
    g = build_grid()
    with pytest.raises(ValueError):
        simulate_cycle(g, NO_SUN, 0.0, 10.0)
    with pytest.raises(StabilityError):
        simulate_cycle(g, NO_SUN, 10.0, 10.0, dt=1.0)


# ---------------------------------------------------------------- surrogate

def test_surrogate_exact_recovery():
    t = np.linspace(0, 300, 301)
    fit = fit_exponential_surrogate(t, 33.0 + 2.5 * np.exp(-0.008 * t))
    assert fit.amplitude == pytest.approx(2.5, abs=1e-6)
    assert fit.rate == pytest.approx(0.008, abs=1e-6)
    assert fit.asymptote == pytest.approx(33.0, abs=1e-6)
    heat = fit_exponential_surrogate(t, 35.5 - 2.5 * np.exp(-0.008 * t), branch="heating")
    assert (heat.amplitude, heat.rate, heat.asymptote) == pytest.approx((2.5, 0.008, 35.5), abs=1e-6)


def test_surrogate_constant_series():
    fit = fit_exponential_surrogate(np.arange(10.0), np.full(10, 34.0))
    assert fit.amplitude == 0.0 and fit.asymptote == 34.0


def test_surrogate_on_pde_cooling_curve():
    resp = bioheat.solar_response(bioheat.default_params().melanin_mu)
    assert resp.cooling_fit.max_deviation < 0.2
    assert resp.heating_fit.max_deviation < 0.2
    assert resp.peak_bias == pytest.approx(2.11, abs=0.01)

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from solarload import radiometry as rad
from solarload.radiometry import (CoreMap, InfeasibleInversion, RadiometricScene, RadiometryError,
                                  forward_chain, invert_chain)

# Reference values evaluated independently with mpmath at 30 significant digits.
SB_310_098 = 514.1576200016728
CHAIN_307_295 = 503.1568071459953          # 0.98 * s * 307.15^4 + 0.02 * s * 295.15^4
PLANCK_10UM_310 = 36299600.37749789        # W m^-2 per m at 10 um, 310.15 K


def test_planck_reference_value():
    assert rad.planck_exitance(10e-6, 310.15) == pytest.approx(PLANCK_10UM_310, rel=1e-12)


def test_planck_vanishes_at_low_temperature():
    assert rad.planck_exitance(10e-6, 1e-3) == 0.0
    assert rad.planck_exitance(10e-6, 5.0) < 1e-100


def test_planck_monotone_in_temperature():
    assert rad.planck_exitance(10e-6, 320.0) > rad.planck_exitance(10e-6, 300.0)


@pytest.mark.parametrize("lam, t", [(0.0, 300.0), (-1e-6, 300.0), (1e-5, 0.0), (1e-5, -3.0)])
def test_planck_domain_errors(lam, t):
    with pytest.raises(RadiometryError):
        rad.planck_exitance(lam, t)


@pytest.mark.parametrize("t", [250.0, 300.0, 350.0, 400.0])
def test_planck_integral_matches_stefan_boltzmann(t):
    # log-spaced pieces keep quad accurate over four decades of wavelength
    edges = np.geomspace(0.1e-6, 1000e-6, 41)
    total = sum(integrate.quad(rad.planck_exitance, a, b, args=(t,), epsrel=1e-10)[0]
                for a, b in zip(edges[:-1], edges[1:]))
    assert total == pytest.approx(rad.stefan_boltzmann(t), rel=5e-3)


def test_stefan_boltzmann_values():
    assert rad.stefan_boltzmann(0.0) == 0.0
    assert rad.stefan_boltzmann(310.15, 0.98) == pytest.approx(SB_310_098, rel=1e-13)
    assert rad.stefan_boltzmann(310.15, 0.98) == pytest.approx(514.2, abs=0.05)
    with pytest.raises(RadiometryError):
        rad.stefan_boltzmann(-1.0)


def test_stefan_boltzmann_fourth_root_round_trip():
    t = 310.15
    assert rad.stefan_boltzmann_inverse(rad.stefan_boltzmann(t, 0.98), 0.98) == pytest.approx(t, rel=1e-12)


def test_forward_chain_degenerate_and_reference():
    black = RadiometricScene(emissivity=1.0, tau_atm=1.0)
    assert forward_chain(307.15, black) == pytest.approx(rad.SIGMA * 307.15**4, rel=1e-14)
    scene = RadiometricScene(0.98, 1.0, 295.15, 295.15)
    assert forward_chain(307.15, scene) == pytest.approx(CHAIN_307_295, rel=1e-13)


@pytest.mark.parametrize("eps, tau", [(0.98, 1.0), (0.5, 0.7), (1.0, 0.2)])
def test_isothermal_cavity(eps, tau):
    t = 301.0
    scene = RadiometricScene(eps, tau, t, t)
    assert forward_chain(t, scene) == pytest.approx(rad.SIGMA * t**4, rel=1e-13)


def test_invert_examples():
    scene = RadiometricScene(0.98, 1.0, 295.15, 295.15)
    assert invert_chain(forward_chain(307.15, scene), scene) == pytest.approx(307.15, rel=1e-12)
    assert invert_chain(rad.SIGMA * 295.15**4, scene) == pytest.approx(295.15, rel=1e-12)
    with pytest.raises(InfeasibleInversion):
        invert_chain(0.9 * rad.SIGMA * 0.02 * 295.15**4, scene)


def test_invert_tau_one_uses_simplified_formula():
    scene = RadiometricScene(0.98, 1.0, 290.0, 250.0)   # t_atm must not matter when tau = 1
    i = 480.0
    expected = ((i / rad.SIGMA - 0.02 * 290.0**4) / 0.98) ** 0.25
    assert invert_chain(i, scene) == expected


def test_scene_validation():
    for kwargs in ({"emissivity": 0.0}, {"emissivity": 1.1}, {"tau_atm": 0.0}, {"t_amb": 0.0}, {"t_atm": -1.0}):
        with pytest.raises(RadiometryError):
            RadiometricScene(**kwargs)


def test_core_map_examples():
    assert rad.core_map(34.0, CoreMap(0.0, 1.0)) == 34.0
    assert rad.core_map(34.0, CoreMap(3.0, 1.0)) == 37.0
    with pytest.raises(RadiometryError):
        CoreMap(0.0, 0.0)


def test_default_core_map_reproduces_simulator_core():
    from solarload import bioheat
    for core in (36.0, 37.0, 38.5):
        skin = bioheat.build_grid(blood_temp_c=core).node_temps[0] - rad.KELVIN
        assert rad.core_map(skin) == pytest.approx(core, abs=0.05)


def test_default_core_map_is_the_fitted_one():
    from solarload import bioheat
    fit = bioheat.fit_core_map()
    assert fit.b0 == pytest.approx(rad.DEFAULT_CORE_MAP.b0, abs=1e-8)
    assert fit.b1 == pytest.approx(rad.DEFAULT_CORE_MAP.b1, abs=1e-10)


def test_melanin_index_examples():
    assert rad.melanin_index(1.0) == 0.0
    assert rad.melanin_index(0.1) == pytest.approx(100.0, abs=1e-12)
    assert rad.melanin_index(0.01) == pytest.approx(200.0, abs=1e-12)
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(RadiometryError):
            rad.melanin_index(bad)


def test_simulated_melanin_range_spans_dataset_range():
    # the synthetic red-reflectance model maps the simulator's melanin range onto MI ~35..80
    assert rad.melanin_index_from_mu(800.0) == pytest.approx(35.1, abs=0.2)
    assert rad.melanin_index_from_mu(8000.0) == pytest.approx(80.1, abs=0.2)


scenes = st.builds(RadiometricScene, emissivity=st.floats(0.5, 1.0), tau_atm=st.floats(0.3, 1.0),
                   t_amb=st.floats(250.0, 320.0), t_atm=st.floats(250.0, 320.0))


@given(t=st.floats(250.0, 400.0), scene=scenes)
def test_round_trip_property(t, scene):
    assert invert_chain(forward_chain(t, scene), scene) == pytest.approx(t, rel=1e-9)


@given(t=st.floats(250.0, 399.0), dt=st.floats(0.01, 1.0), scene=scenes)
def test_forward_chain_strictly_increasing(t, dt, scene):
    assert forward_chain(t + dt, scene) > forward_chain(t, scene)


@given(a=st.floats(1e-6, 1.0), b=st.floats(1e-6, 1.0))
def test_melanin_index_additive(a, b):
    assert rad.melanin_index(a * b) == pytest.approx(rad.melanin_index(a) + rad.melanin_index(b), abs=1e-12)


@given(a=st.floats(1e-6, 0.99), d=st.floats(1e-4, 0.01))
def test_melanin_index_strictly_decreasing(a, d):
    assert rad.melanin_index(a) > rad.melanin_index(min(1.0, a + d))

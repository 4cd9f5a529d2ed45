"""Thermal radiometric chain: temperature to sensor intensity and back.

Temperatures are kelvin unless a name says ``_c``.  The Planck constants are
the rounded values commonly quoted alongside the law (h = 6.63e-34 J s,
k = 1.38e-23 J/K, c = 3e8 m/s); ``SIGMA`` is the usual 5.67e-8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

H_PLANCK = 6.63e-34
K_BOLTZMANN = 1.38e-23
C_LIGHT = 3e8
SIGMA = 5.67e-8
KELVIN = 273.15

SKIN_EMISSIVITY = 0.98


class RadiometryError(ValueError):
    """Input outside the domain of a radiometric formula."""


class InfeasibleInversion(RadiometryError):
    """Sensor intensity too low to be explained by any skin temperature."""


def c_to_k(t_c):
    return np.asarray(t_c, dtype=float) + KELVIN if np.ndim(t_c) else float(t_c) + KELVIN


def k_to_c(t_k):
    return np.asarray(t_k, dtype=float) - KELVIN if np.ndim(t_k) else float(t_k) - KELVIN


@dataclass(frozen=True)
class RadiometricScene:
    """Scene constants of the three-path chain.

    ``t_amb`` is the temperature of whatever the skin reflects, ``t_atm`` the
    temperature of the air column between skin and sensor.
    """

    emissivity: float = SKIN_EMISSIVITY
    tau_atm: float = 1.0
    t_amb: float = 22.0 + KELVIN
    t_atm: float = 22.0 + KELVIN

    def __post_init__(self):
        if not 0.0 < self.emissivity <= 1.0:
            raise RadiometryError(f"emissivity must be in (0, 1], got {self.emissivity}")
        if not 0.0 < self.tau_atm <= 1.0:
            raise RadiometryError(f"tau_atm must be in (0, 1], got {self.tau_atm}")
        if self.t_amb <= 0 or self.t_atm <= 0:
            raise RadiometryError("ambient and atmospheric temperatures must be positive kelvin")

    @classmethod
    def from_celsius(cls, ambient_c=22.0, atmosphere_c=None, emissivity=SKIN_EMISSIVITY, tau_atm=1.0):
        atmosphere_c = ambient_c if atmosphere_c is None else atmosphere_c
        return cls(emissivity=emissivity, tau_atm=tau_atm,
                   t_amb=ambient_c + KELVIN, t_atm=atmosphere_c + KELVIN)


@dataclass(frozen=True)
class CoreMap:
    """Linear skin-to-core map ``core = b0 + b1 * skin`` (both in degC)."""

    b0: float
    b1: float

    def __post_init__(self):
        if not self.b1 > 0:
            raise RadiometryError(f"core map slope must be positive, got {self.b1}")

    def inverse(self, t_core_c):
        return (np.asarray(t_core_c, dtype=float) - self.b0) / self.b1


IDENTITY_CORE_MAP = CoreMap(0.0, 1.0)

# Least-squares fit of (steady surface, core) pairs from the default tissue
# column in bioheat (core 36-40 degC, air 22 degC).  Synthetic, not a
# manufacturer calibration; regenerate with bioheat.fit_core_map().
DEFAULT_CORE_MAP = CoreMap(b0=-7.6193886131533, b1=1.3463358460254777)


def planck_exitance(wavelength, temperature, emissivity=1.0):
    """Spectral radiant exitance in W m^-2 per metre of wavelength."""
    lam = np.asarray(wavelength, dtype=float)
    t = np.asarray(temperature, dtype=float)
    if np.any(lam <= 0):
        raise RadiometryError("wavelength must be positive")
    if np.any(t <= 0):
        raise RadiometryError("temperature must be positive")
    x = H_PLANCK * C_LIGHT / (lam * K_BOLTZMANN * t)
    # expm1 keeps precision at long wavelengths; overflow to inf gives 0 exitance
    with np.errstate(over="ignore"):
        bose = 1.0 / np.expm1(x)
    out = 2.0 * np.pi * emissivity * H_PLANCK * C_LIGHT**2 / lam**5 * bose
    return out if out.ndim else float(out)


def stefan_boltzmann(temperature, emissivity=1.0):
    t = np.asarray(temperature, dtype=float)
    if np.any(t < 0):
        raise RadiometryError("temperature must be non-negative")
    out = emissivity * SIGMA * t**4
    return out if out.ndim else float(out)


def stefan_boltzmann_inverse(intensity, emissivity=1.0):
    i = np.asarray(intensity, dtype=float)
    if np.any(i < 0):
        raise RadiometryError("intensity must be non-negative")
    out = (i / (emissivity * SIGMA)) ** 0.25
    return out if out.ndim else float(out)


def forward_chain(t_skin, scene: RadiometricScene):
    """Sensor intensity for skin at ``t_skin`` kelvin (emission + reflection + air)."""
    t = np.asarray(t_skin, dtype=float)
    eps, tau = scene.emissivity, scene.tau_atm
    out = (SIGMA * tau * (eps * t**4 + (1.0 - eps) * scene.t_amb**4)
           + SIGMA * (1.0 - tau) * scene.t_atm**4)
    return out if out.ndim else float(out)


def invert_chain(i_sensor, scene: RadiometricScene):
    """Skin temperature (kelvin) that produces ``i_sensor`` under ``scene``."""
    i = np.asarray(i_sensor, dtype=float)
    eps, tau = scene.emissivity, scene.tau_atm
    if tau == 1.0:
        radicand = (i / SIGMA - (1.0 - eps) * scene.t_amb**4) / eps
    else:
        radicand = (i / SIGMA - tau * (1.0 - eps) * scene.t_amb**4
                    - (1.0 - tau) * scene.t_atm**4) / (tau * eps)
    if np.any(radicand < 0):
        raise InfeasibleInversion(
            "sensor intensity is below the reflected/atmospheric floor; no skin temperature fits")
    out = radicand**0.25
    return out if out.ndim else float(out)


def chain_slope(t_skin, scene: RadiometricScene):
    """d(intensity)/d(t_skin), used to express temperature noise as intensity noise."""
    t = np.asarray(t_skin, dtype=float)
    return 4.0 * SIGMA * scene.tau_atm * scene.emissivity * t**3


def core_map(t_skin_c, mapping: CoreMap = DEFAULT_CORE_MAP):
    out = mapping.b0 + mapping.b1 * np.asarray(t_skin_c, dtype=float)
    return out if out.ndim else float(out)


def melanin_index(i_r):
    """Melanin index ``100 * log10(1 / I_r)`` from reflected red fraction."""
    r = np.asarray(i_r, dtype=float)
    if np.any((r <= 0) | (r > 1)):
        raise RadiometryError("reflected red fraction must lie in (0, 1]")
    out = -100.0 * np.log10(r)
    return out if out.ndim else float(out)


# Red reflectance model used to attach a melanin index to simulated subjects:
# I_r = R0 * exp(-2 * K_RED * mu * L_epi), a double pass through the epidermis
# with the solar-averaged melanin coefficient scaled to red light.
RED_BASE_REFLECTANCE = 0.50
RED_MELANIN_SCALE = 0.72
EPIDERMIS_THICKNESS = 1e-4


def red_reflectance(melanin_mu, epidermis_thickness=EPIDERMIS_THICKNESS):
    mu = np.asarray(melanin_mu, dtype=float)
    out = RED_BASE_REFLECTANCE * np.exp(-2.0 * RED_MELANIN_SCALE * mu * epidermis_thickness)
    return out if out.ndim else float(out)


def melanin_index_from_mu(melanin_mu, epidermis_thickness=EPIDERMIS_THICKNESS):
    return melanin_index(red_reflectance(melanin_mu, epidermis_thickness))

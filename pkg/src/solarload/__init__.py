"""Simulation and correction of solar-loading bias in thermal skin-temperature imaging.

Modules: ``radiometry`` (sensor chain), ``bioheat`` (1-D Pennes column),
``scene`` (synthetic faces and frame sequences), ``transient`` (the
cooling-curve fit), ``spatial`` and ``regressor`` (single-shot
correction), ``stats`` (metrics and equity tests), ``io`` and ``cli``.
"""

__version__ = "0.1.0"

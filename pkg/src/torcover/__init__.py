"""Random walk cover times on the discrete torus and random interlacements.

Modules
-------
walk
    Moving modes, torus geometry and the continuous-time walk simulator.
oracle
    Exact absorbing-chain expectations for small instances.
potential
    Green's function, equilibrium measures and capacities on Z^d.
interlacements
    Exact sampler of the interlacement trace on a finite window.
quasistationary
    The walk killed on obstacle boxes and its quasistationary law.
cover
    Gumbel tests for cover times and the uncovered-set experiments.
coupling
    Vacancy sandwich between torus walk and interlacements.
cli
    Configuration-driven experiment runner.
"""

__version__ = "0.1.0"

from .errors import TorcoverError
from .walk import MovingMode, TorusGeometry, load_mode_file, named_mode, parse_mode_text

__all__ = ["__version__", "TorcoverError", "MovingMode", "TorusGeometry", "load_mode_file", "named_mode",
           "parse_mode_text"]

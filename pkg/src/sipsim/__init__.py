"""Condensing particle system on the discrete torus: simulation, exact
small-system solves, coalescing circle diffusions, and the statistical
checks tying them together."""

__version__ = "0.1.0"

from .model import Configuration, ModelParams  # noqa: F401

"""Energy-variational solutions of hyperbolic conservation laws on the torus."""

__version__ = "0.1.0"

"""Loss statistics for finite-buffer queues.

Two views of the same system: an exactly solvable bounded random walk in
discrete time and its continuum diffusion limit with zero-flux walls,
together with a packet-level event simulator and the estimators needed to
cross-validate every closed form against Monte Carlo at desk scale.
"""

from . import discrete, fokker_planck, numerics, simulate, stats

__version__ = "0.1.0"

__all__ = ["discrete", "fokker_planck", "numerics", "simulate", "stats", "__version__"]

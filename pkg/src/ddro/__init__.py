"""Decision-dependent Wasserstein DRO: ambiguity sets from offline data, solvers, and experiments."""

__version__ = "0.1.0"

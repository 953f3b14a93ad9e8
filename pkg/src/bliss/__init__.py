"""Option nets: learned stochastic generators of candidate solutions for
families of optimization problems, with classical baselines to compare
against and warm-start."""

__version__ = "0.1.0"

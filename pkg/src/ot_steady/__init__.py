"""Steady states of stochastic particle timesteppers.

Two routes are provided: first-order Wasserstein--Adam descent on particle
ensembles, and matrix-free Newton--Krylov on smooth distributional states
(quantile functions in 1D, gridded CDFs in 2D).
"""
__version__ = "0.1.0"

"""Centralized numeric tolerances.

Every module takes its thresholds from a single :class:`Tolerances` record so
that tests can tighten or relax them in one place instead of chasing magic
numbers through the code base.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    #: allowed deviation of each transition row sum from 1
    prob_row_sum: float = 1e-12
    #: max residual ||d^T M - d^T||_inf accepted for a stationary distribution
    stationary_residual: float = 1e-10
    #: stationary entries at or below this are treated as zero (reducibility)
    stationary_min_entry: float = 1e-12
    #: relative residual bound for linear solves, scaled by (1 + ||b||)
    linear_solve_residual: float = 1e-10
    #: distance (with unit normals) below which a point counts as on a boundary
    boundary_proximity: float = 1e-9
    #: confinement bound |w^T theta| enforced along sliding segments
    sliding_confinement: float = 1e-8
    #: max norm of the witnessed zero convex combination at an equilibrium
    equilibrium_residual: float = 1e-8
    #: bisection width for boundary-equilibrium roots in the mixing weight
    bisection: float = 1e-12
    #: one-sided probe distance used when classifying boundary equilibria
    stability_probe: float = 1e-6
    #: norm bound beyond which a stochastic run is declared divergent
    divergence_guard: float = 1e9


DEFAULT_TOLERANCES = Tolerances()

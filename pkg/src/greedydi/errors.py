"""Exception types shared across the library."""
from __future__ import annotations


class GreedyDiError(Exception):
    """Base class for all library-specific errors."""


class NotErgodic(GreedyDiError):
    """The induced state chain does not have a unique, strictly positive
    stationary distribution (reducible chain, or a state with vanishing
    stationary mass)."""


class UnsupportedDimension(GreedyDiError):
    """An operation was requested in a feature dimension it does not support
    (e.g. exact planar region enumeration with d != 2)."""


class NotAdjacent(GreedyDiError):
    """The two greedy regions do not share a (d-1)-dimensional boundary."""


class StepFailure(GreedyDiError):
    """The inclusion integrator could not continue (e.g. a corner where three
    or more regions meet, or sliding requested outside the planar case).

    Carries the failure location so callers can report it.
    """

    def __init__(self, message: str, location=None, time: float | None = None):
        super().__init__(message)
        self.location = location
        self.time = time


class NonFinite(GreedyDiError):
    """A stochastic run left the finite-float range (divergence guard).

    Carries the iteration index at which the guard tripped.
    """

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class FixtureError(GreedyDiError):
    """A fixture file could not be parsed or failed dimension checks."""

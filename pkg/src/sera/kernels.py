"""Radial kernels and Gram matrix assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

FAMILIES = ("gaussian", "matern0", "wendland2")


class DomainError(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


# Profiles take ownership of ``er`` and work in place to limit N^2 temporaries.
def _gaussian(er):
    np.square(er, out=er)
    np.negative(er, out=er)
    return np.exp(er, out=er)


def _matern0(er):
    np.negative(er, out=er)
    return np.exp(er, out=er)


def _wendland2(er):
    t = np.subtract(1.0, er, out=np.empty_like(er))
    np.maximum(t, 0.0, out=t)
    np.square(t, out=t)
    np.square(t, out=t)
    er *= 4.0
    er += 1.0
    t *= er
    return t


_PROFILES = {"gaussian": _gaussian, "matern0": _matern0, "wendland2": _wendland2}


@dataclass(frozen=True)
class RadialKernel:
    """A radial function ``phi_eps(r)`` from one of three families.

    Parameters
    ----------
    family : {"gaussian", "matern0", "wendland2"}
        ``exp(-(eps r)^2)``, ``exp(-eps r)`` and ``(1 - eps r)_+^4 (4 eps r + 1)``.
    epsilon : float
        Positive shape parameter.
    """

    family: str
    epsilon: float

    def __post_init__(self):
        if self.family not in _PROFILES:
            raise ValueError(
                f"unknown kernel family {self.family!r}; expected one of {FAMILIES}"
            )
        if not self.epsilon > 0 or not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.size and r.min() < 0:
            raise DomainError("kernel evaluated at a negative distance")
        er = np.multiply(self.epsilon, r, out=np.empty_like(r))
        return _PROFILES[self.family](er)[()]

    def with_epsilon(self, epsilon: float) -> "RadialKernel":
        return RadialKernel(self.family, epsilon)


def evaluate(kernel: RadialKernel, r):
    return kernel(r)


def _points(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (N, d) array")
    return x


def distance_matrix(x, y=None) -> np.ndarray:
    """Euclidean distances; with ``y`` omitted the result is exactly symmetric
    with a zero diagonal."""
    x = _points(x, "X")
    if y is None:
        return squareform(pdist(x))
    y = _points(y, "Y")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"point dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    return cdist(x, y)


def gram_matrix(kernel: RadialKernel, x, y=None) -> np.ndarray:
    """Kernel matrix ``phi(||x_i - y_j||)``.

    Passing ``y=None`` (or the same array object as ``x``) builds the square
    matrix from each pair once, so it is symmetric with unit diagonal.
    """
    if y is x:
        y = None
    return kernel(distance_matrix(x, y))


@dataclass(frozen=True)
class EpsilonGrid:
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not (0 < self.lo < self.hi):
            raise ValueError(f"need 0 < lo < hi, got lo={self.lo}, hi={self.hi}")
        if self.count < 2:
            raise ValueError("an epsilon grid needs at least 2 values")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    @classmethod
    def parse(cls, text: str) -> "EpsilonGrid":
        """Parse ``lo:hi:count``."""
        try:
            lo, hi, count = text.split(":")
            return cls(float(lo), float(hi), int(count))
        except ValueError as exc:
            raise ValueError(f"bad epsilon grid {text!r} (expected lo:hi:count): {exc}") from None

    def __str__(self):
        return f"{self.lo:g}:{self.hi:g}:{self.count}"

"""Fitting and evaluating the kernel interpolant ``S(x) = sum_i c_i phi(||x - x_i||)``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import DimensionMismatch, RadialKernel, distance_matrix, gram_matrix
from .linalg import NO_REGULARIZATION, Regularization


@dataclass(frozen=True)
class FittedInterpolant:
    kernel: RadialKernel
    centers: np.ndarray
    coefficients: np.ndarray
    regularization: Regularization = NO_REGULARIZATION

    def __post_init__(self):
        if self.centers.shape[0] != self.coefficients.shape[0]:
            raise ValueError("one coefficient per center is required")

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
        if y.shape[1] != self.centers.shape[1]:
            raise DimensionMismatch(
                f"evaluation points are {y.shape[1]}-D, centers are {self.centers.shape[1]}-D"
            )
        return self.kernel(distance_matrix(y, self.centers)) @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.family,
            "epsilon": self.kernel.epsilon,
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
            "regularization": self.regularization.to_dict(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "FittedInterpolant":
        reg = data.get("regularization") or {}
        return cls(
            RadialKernel(data["kernel"], float(data["epsilon"])),
            np.asarray(data["centers"], dtype=np.float64),
            np.asarray(data["coefficients"], dtype=np.float64),
            Regularization(reg.get("kind", "none"), reg.get("param")),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedInterpolant":
        return cls.from_dict(json.loads(text))


def fit(
    kernel: RadialKernel,
    centers,
    values,
    regularization: Regularization = NO_REGULARIZATION,
) -> FittedInterpolant:
    """Solve ``K c = f`` (shifted or QR-truncated per ``regularization``).

    Raises ``SingularMatrix`` for a numerically singular unregularized system.
    """
    centers = np.asarray(centers, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (centers.shape[0],):
        raise ValueError(f"expected {centers.shape[0]} values, got shape {values.shape}")
    k = gram_matrix(kernel, centers)
    c = regularization.solve(k, values)
    return FittedInterpolant(kernel, centers, c, regularization)


def evaluate(model: FittedInterpolant, y) -> np.ndarray:
    return model(y)


def error_norm(
    model: FittedInterpolant,
    y,
    reference: Callable | np.ndarray,
    rmse: bool = False,
) -> float:
    """Euclidean norm of ``S(y_j) - f(y_j)`` over ``y``; ``rmse`` divides by ``sqrt(M)``.

    ``reference`` is either a callable on ``(M, d)`` arrays or the values themselves.
    """
    y = np.asarray(y, dtype=np.float64)
    ref = reference(y) if callable(reference) else np.asarray(reference, dtype=np.float64)
    resid = model(y) - ref
    norm = float(np.linalg.norm(resid))
    return norm / np.sqrt(resid.size) if rmse else norm

"""Dense linear algebra used by the kernel and cross-validation code.

Every factorization and conditioning decision lives here: LU-based solves and
inverses with an explicit singularity threshold, an SVD pseudoinverse with
relative truncation, a rank-revealing QR solver used as a regularizer, and
the Tikhonov shift.  Matrices are plain ``numpy.ndarray`` of ``float64``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

EPS = np.finfo(np.float64).eps


class SingularMatrix(np.linalg.LinAlgError):
    """Raised when an LU factorization meets a pivot below the threshold."""


class SvdFactors(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a 2-D finite float64 array, raising ``ValueError`` otherwise."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _square(a, name="A") -> np.ndarray:
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def default_tol(a: np.ndarray) -> float:
    return EPS * max(a.shape)


def _lu(a: np.ndarray, overwrite: bool = False):
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularMatrix
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, overwrite_a=overwrite, check_finite=False)
    pivots = np.abs(np.diag(lu))
    biggest = pivots.max()
    if biggest == 0.0 or pivots.min() <= EPS * a.shape[0] * biggest:
        raise SingularMatrix(
            f"matrix is numerically singular (min pivot {pivots.min():.3e}, "
            f"max pivot {biggest:.3e})"
        )
    return lu, piv


def solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by LU with partial pivoting.

    A 1-D ``b`` gives a 1-D result.
    """
    a = _square(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: A is {a.shape}, B is {b.shape}")
    lu, piv = _lu(a)
    return sla.lu_solve((lu, piv), b, check_finite=False)


def inverse(a, overwrite: bool = False) -> np.ndarray:
    """Explicit inverse via LU; ``overwrite=True`` lets the factorization reuse ``a``."""
    a = _square(a)
    lu, piv = _lu(a, overwrite)
    lwork, _ = sla.lapack.dgetri_lwork(a.shape[0])
    inv, info = sla.lapack.dgetri(lu, piv, lwork=int(lwork))
    if info != 0:
        raise SingularMatrix(f"dgetri failed with info={info}")
    return inv


def svd(a) -> SvdFactors:
    """Thin SVD; tall inputs are reduced by a QR factorization first."""
    a = as_matrix(a)
    rows, cols = a.shape
    if rows > cols:
        q, r = sla.qr(a, mode="economic", check_finite=False)
        ur, s, vt = sla.svd(r, check_finite=False)
        return SvdFactors(q @ ur, s, vt)
    u, s, vt = sla.svd(a, full_matrices=False, check_finite=False)
    return SvdFactors(u, s, vt)


def pseudoinverse_factors(a, truncation_tol: float | None = None) -> tuple:
    """Factors ``(m, q)`` with ``pinv(a) == m @ q.T`` and orthonormal ``q``.

    For tall ``a`` (economy QR ``a = q r``), ``m = V_r S^+ U_r^T`` from the SVD
    of ``r``; otherwise ``q`` holds the kept left singular vectors.  Keeping
    the factors lets callers avoid forming the full pseudoinverse.
    """
    a = as_matrix(a)
    tol = default_tol(a) if truncation_tol is None else truncation_tol
    if tol < 0:
        raise ValueError("truncation_tol must be nonnegative")
    rows, cols = a.shape
    if rows > cols:
        q, r = sla.qr(a, mode="economic", check_finite=False)
        ur, s, vt = sla.svd(r, check_finite=False)
    else:
        q, s, vt = sla.svd(a, full_matrices=False, check_finite=False)
        ur = None
    keep = s > tol * s[0] if s[0] > 0 else np.zeros(s.shape, dtype=bool)
    m = vt[keep].T / s[keep]
    if ur is None:
        return m, q[:, keep]
    return m @ ur[:, keep].T, q


def pseudoinverse(a, truncation_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose inverse via SVD.

    Reciprocals of singular values ``<= truncation_tol * s_max`` are zeroed.
    The default tolerance is ``eps * max(rows, cols)``.
    """
    m, q = pseudoinverse_factors(a, truncation_tol)
    return m @ q.T


def qr_solve(a, b, truncation_tol: float | None = None) -> np.ndarray:
    """Regularized solve of ``a @ x = b`` by column-pivoted QR.

    Diagonal entries of R with ``|r_ii| <= truncation_tol * |r_11|`` mark the
    numerical rank; the remaining columns are eliminated with a complete
    orthogonal decomposition so the result is the minimum-norm solution of the
    truncated problem.
    """
    a = _square(a)
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: A is {a.shape}, B is {b.shape}")
    tol = default_tol(a) if truncation_tol is None else truncation_tol
    if tol < 0:
        raise ValueError("truncation_tol must be nonnegative")

    n = a.shape[1]
    q, r, perm = sla.qr(a, pivoting=True, mode="economic", check_finite=False)
    diag = np.abs(np.diag(r))
    rank = int(np.count_nonzero(diag > tol * diag[0])) if diag[0] > 0 else 0
    x = np.zeros((n, b.shape[1]))
    if rank == 0:
        return x[:, 0] if vector else x
    rhs = q[:, :rank].T @ b
    r_top = r[:rank]
    if rank == n:
        y = sla.solve_triangular(r_top, rhs, check_finite=False)
    else:
        # R_top^T = Z T  =>  R_top = T^T Z^T, minimum-norm y = Z T^-T rhs
        z, t = np.linalg.qr(r_top.T)
        y = z @ sla.solve_triangular(t, rhs, trans="T", check_finite=False)
    x[perm] = y
    return x[:, 0] if vector else x


def tikhonov_system(a, lam: float, overwrite: bool = False) -> np.ndarray:
    """Return the shifted matrix ``a + lam * I``, as a new array unless ``overwrite``."""
    a = _square(a)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    out = a if overwrite else a.copy()
    out[np.diag_indices_from(out)] += lam
    return out


@dataclass(frozen=True)
class Regularization:
    """How kernel systems are inverted.

    ``kind`` is ``"none"`` (plain LU), ``"tikhonov"`` (``param`` is the shift)
    or ``"qr"`` (``param`` is the QR truncation tolerance, ``None`` for the
    default).
    """

    kind: str = "none"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "tikhonov", "qr"):
            raise ValueError(f"unknown regularization {self.kind!r}")
        if self.kind == "tikhonov" and (self.param is None or self.param < 0):
            raise ValueError("tikhonov regularization needs lambda >= 0")
        if self.kind == "qr" and self.param is not None and self.param < 0:
            raise ValueError("qr truncation tolerance must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "Regularization":
        """Parse ``none``, ``tikhonov:LAMBDA`` or ``qr[:TOL]``."""
        kind, _, value = text.strip().partition(":")
        kind = kind.lower()
        if kind == "none":
            return cls()
        if kind == "tikhonov":
            return cls("tikhonov", float(value))
        if kind == "qr":
            return cls("qr", float(value) if value else None)
        raise ValueError(f"unknown regularization {text!r}")

    def __str__(self):
        if self.kind == "none":
            return "none"
        if self.param is None:
            return self.kind
        return f"{self.kind}:{self.param!r}"

    def system(self, k: np.ndarray, overwrite: bool = False) -> np.ndarray:
        """The matrix that is actually factorized."""
        if self.kind == "tikhonov":
            return tikhonov_system(k, self.param, overwrite)
        return k

    def inverse(self, k: np.ndarray, overwrite: bool = False) -> np.ndarray:
        """Inverse of ``system(k)``; ``overwrite=True`` may destroy ``k``."""
        if self.kind == "qr":
            return qr_solve(k, np.eye(k.shape[0]), self.param)
        return inverse(self.system(k, overwrite), overwrite)

    def solve(self, k: np.ndarray, b, shifted: bool = False) -> np.ndarray:
        """Solve ``system(k) @ x = b``; ``shifted=True`` means ``k`` already is the system."""
        if self.kind == "qr":
            return qr_solve(k, b, self.param)
        return solve(k if shifted else self.system(k), b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


NO_REGULARIZATION = Regularization()

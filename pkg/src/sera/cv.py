"""Leave-p-out cross-validation of the shape parameter.

``era_error_vector`` evaluates all fold residuals from one inverse of the
kernel matrix: for each validation fold ``v`` the held-out residuals solve

    Kinv[v, v] @ e_v = c[v],      c = Kinv @ f,

which costs ``O(n p^2)`` once ``Kinv`` is known.  With singleton folds this is
Rippa's ``e_i = c_i / Kinv[i, i]``.

``sera_error_vector`` replaces ``Kinv`` with the rank-``s`` randomized
approximation ``V = W (K W)^+`` built from a Gaussian sketch ``W``
(``sketch_inverse``), which costs ``O(s n^2 + s^2 n)``.  Only the diagonal
blocks of ``V`` and ``V @ f`` enter the fold solves, so by default ``V`` is kept
as ``Z @ Q.T`` (``LowRankInverse``) and never formed; ``SketchConfig.dense``
forms the full matrix instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .kernels import EpsilonGrid, RadialKernel, distance_matrix
from .linalg import NO_REGULARIZATION, Regularization, SingularMatrix


class InvalidFoldSize(ValueError):
    pass


class SingularSubblock(np.linalg.LinAlgError):
    def __init__(self, fold: int, message: str = ""):
        self.fold = fold
        super().__init__(message or f"validation subblock of fold {fold} is singular")


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint validation folds covering ``range(n)`` (0-based indices)."""

    n: int
    p: int
    folds: tuple

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def order(self) -> np.ndarray:
        """Point indices in the order their errors appear in the error vector."""
        return np.concatenate(self.folds)

    def to_lists(self) -> list[list[int]]:
        return [f.tolist() for f in self.folds]


def make_folds(n: int, p: int, shuffle_seed: int | None = None) -> FoldPlan:
    """Slice ``0..n-1`` into consecutive folds of size ``p``; the last may be smaller.

    With ``shuffle_seed`` the indices are permuted (seeded) before slicing.
    """
    if not 1 <= p <= n:
        raise InvalidFoldSize(f"fold size p={p} must satisfy 1 <= p <= n={n}")
    idx = np.arange(n)
    if shuffle_seed is not None:
        idx = np.random.default_rng(shuffle_seed).permutation(n)
    folds = tuple(idx[i : i + p].copy() for i in range(0, n, p))
    for f in folds:
        f.setflags(write=False)
    return FoldPlan(n, p, folds)


@dataclass(frozen=True)
class CvErrorVector:
    errors: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.errors))


def _grouped(plan: FoldPlan):
    groups: dict[int, list[int]] = {}
    for j, f in enumerate(plan.folds):
        groups.setdefault(len(f), []).append(j)
    for size, ids in groups.items():
        yield size, ids, np.stack([plan.folds[j] for j in ids])


@dataclass(frozen=True)
class LowRankInverse:
    """An ``n x n`` matrix ``left @ right.T`` held in factored form."""

    left: np.ndarray
    right: np.ndarray

    @property
    def shape(self) -> tuple:
        return (self.left.shape[0], self.right.shape[0])

    def dense(self) -> np.ndarray:
        return self.left @ self.right.T

    def __matmul__(self, x):
        return self.left @ (self.right.T @ x)

    def blocks(self, idx: np.ndarray) -> np.ndarray:
        return self.left[idx] @ self.right[idx].transpose(0, 2, 1)

    def diagonal(self, idx: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.left[idx], self.right[idx])


def era_error_vector(
    kinv,
    c,
    plan: FoldPlan,
    regularization: Regularization = NO_REGULARIZATION,
) -> CvErrorVector:
    """Validation residuals of every fold from the (approximate) inverse.

    ``kinv`` is a dense array or a ``LowRankInverse``.  Subblocks are solved
    with the regularizing QR solver when ``regularization.kind == "qr"`` and
    with plain LU otherwise.
    """
    if isinstance(kinv, LowRankInverse):
        get_blocks, get_diag = kinv.blocks, kinv.diagonal
    else:
        kinv = np.asarray(kinv, dtype=np.float64)

        def get_blocks(idx):
            return kinv[idx[:, :, None], idx[:, None, :]]

        def get_diag(idx):
            return kinv[idx, idx]

    c = np.asarray(c, dtype=np.float64)
    n = plan.n
    if kinv.shape != (n, n) or c.shape != (n,):
        raise ValueError(
            f"expected {n}x{n} inverse and length-{n} coefficients, "
            f"got {kinv.shape} and {c.shape}"
        )
    by_point = np.empty(n)
    use_qr = regularization.kind == "qr"
    for size, ids, idx in _grouped(plan):
        if size == 1:
            d = get_diag(idx[:, 0])
            if np.any(d == 0.0):
                raise SingularSubblock(ids[int(np.flatnonzero(d == 0.0)[0])])
            by_point[idx[:, 0]] = c[idx[:, 0]] / d
            continue
        blocks = get_blocks(idx)
        rhs = c[idx]
        if use_qr:
            for row in range(len(ids)):
                by_point[idx[row]] = linalg.qr_solve(blocks[row], rhs[row], regularization.param)
            continue
        sv = np.linalg.svd(blocks, compute_uv=False)
        bad = (sv[:, 0] == 0.0) | (sv[:, -1] <= linalg.EPS * size * sv[:, 0])
        if np.any(bad):
            raise SingularSubblock(ids[int(np.flatnonzero(bad)[0])])
        by_point[idx] = np.linalg.solve(blocks, rhs[..., None])[..., 0]
    return CvErrorVector(by_point[plan.order])


@dataclass(frozen=True)
class SketchConfig:
    """Randomized inverse settings.

    ``s`` is the sketch rank (``0 < s < n``).  ``redraw_per_epsilon`` draws a
    fresh Gaussian sketch for every shape parameter instead of one per sweep.
    ``exact_coefficients`` computes ``c`` by an exact solve instead of
    ``V @ f``.  ``dense`` forms the full ``n x n`` approximate inverse
    (``O(s n^2)`` extra work) instead of keeping it factored.
    """

    s: int
    seed: int | None = None
    redraw_per_epsilon: bool = False
    exact_coefficients: bool = False
    dense: bool = False

    def check(self, n: int) -> None:
        if not 0 < self.s < n:
            raise ValueError(f"sketch rank s={self.s} must satisfy 0 < s < n={n}")


def draw_sketch(n: int, s: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, s))


def sketch_inverse_from(k, w, truncation_tol: float | None = None, dense: bool = True):
    """``V = W (K W)^+`` for a given sketch ``W``.

    With ``dense=False`` the result is a ``LowRankInverse`` equal to ``V``.
    """
    u = k @ w
    if dense:
        return w @ linalg.pseudoinverse(u, truncation_tol)
    m, q = linalg.pseudoinverse_factors(u, truncation_tol)
    return LowRankInverse(w @ m, q)


def sketch_inverse(k, cfg: SketchConfig, rng: np.random.Generator) -> np.ndarray:
    """Rank-``s`` randomized approximation of ``inv(k)``."""
    k = np.asarray(k, dtype=np.float64)
    cfg.check(k.shape[0])
    w = draw_sketch(k.shape[0], cfg.s, rng)
    return sketch_inverse_from(k, w)


def sera_error_vector(
    k,
    f,
    cfg: SketchConfig,
    plan: FoldPlan,
    rng: np.random.Generator,
    regularization: Regularization = NO_REGULARIZATION,
) -> CvErrorVector:
    k = np.asarray(k, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    cfg.check(k.shape[0])
    w = draw_sketch(k.shape[0], cfg.s, rng)
    v = sketch_inverse_from(regularization.system(k), w, dense=cfg.dense)
    c = regularization.solve(k, f) if cfg.exact_coefficients else v @ f
    return era_error_vector(v, c, plan, regularization)


@dataclass(frozen=True)
class GramSystem:
    k: np.ndarray
    f: np.ndarray


def gram_builder(family: str, points, values) -> Callable[[float], GramSystem]:
    """Map ``eps -> GramSystem`` sharing one precomputed distance matrix."""
    dist = distance_matrix(points)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (dist.shape[0],):
        raise ValueError(f"expected {dist.shape[0]} sample values, got shape {values.shape}")

    def build(eps: float) -> GramSystem:
        # each call returns a fresh matrix that the caller may overwrite
        return GramSystem(RadialKernel(family, eps)(dist), values)

    build.n = dist.shape[0]
    return build


@dataclass
class SweepResult:
    epsilons: np.ndarray
    norms: np.ndarray
    epsilon_star: float | None
    duration: float
    method: str
    seed: int | None = None
    s: int | None = None
    workers: int = 1
    failures: dict = field(default_factory=dict)

    @property
    def cv_norm(self) -> float:
        return float(np.min(self.norms)) if len(self.norms) else float("inf")

    @property
    def failed(self) -> bool:
        return self.epsilon_star is None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "epsilons": self.epsilons.tolist(),
            "norms": [float(x) for x in self.norms],
            "epsilon_star": self.epsilon_star,
            "cv_norm": self.cv_norm,
            "duration_s": self.duration,
            "seed": self.seed,
            "s": self.s,
            "workers": self.workers,
        }


def select_epsilon(epsilons, norms) -> float | None:
    """Grid argmin of the CV norm; ties go to the smallest epsilon."""
    epsilons = np.asarray(epsilons, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    finite = np.isfinite(norms)
    if not finite.any():
        return None
    best = norms[finite].min()
    return float(epsilons[(norms == best)].min())


def sweep(
    builder: Callable[[float], GramSystem],
    grid: EpsilonGrid | Sequence[float],
    plan: FoldPlan,
    sketch: SketchConfig | None = None,
    regularization: Regularization = NO_REGULARIZATION,
) -> SweepResult:
    """Score every shape parameter of ``grid`` and pick the minimizer.

    ``sketch=None`` runs the exact algorithm.  Shape parameters whose systems
    are numerically singular score ``inf``.  ``duration`` covers the whole loop:
    Gram assembly, inversion or sketching, fold solves and the argmin.
    ``builder`` must return a new matrix on every call; the sweep overwrites it.
    """
    eps_values = grid.values if isinstance(grid, EpsilonGrid) else np.asarray(grid, dtype=float)
    if eps_values.size == 0:
        raise ValueError("empty epsilon grid")
    norms = np.full(eps_values.size, np.inf)
    failures = {}
    start = time.perf_counter()
    w = rng = None
    if sketch is not None:
        sketch.check(plan.n)
        rng = np.random.default_rng(sketch.seed)
        if not sketch.redraw_per_epsilon:
            w = draw_sketch(plan.n, sketch.s, rng)
    for i, eps in enumerate(eps_values):
        system = builder(float(eps))
        k = system.k
        try:
            # k is private to this iteration, so shifts and factorizations reuse it
            if sketch is None:
                kinv = regularization.inverse(k, overwrite=True)
                c = kinv @ system.f
            else:
                ww = draw_sketch(plan.n, sketch.s, rng) if w is None else w
                k = regularization.system(k, overwrite=True)
                kinv = sketch_inverse_from(k, ww, dense=sketch.dense)
                if sketch.exact_coefficients:
                    c = regularization.solve(k, system.f, shifted=True)
                else:
                    c = kinv @ system.f
            err = era_error_vector(kinv, c, plan, regularization)
            norm = err.norm
        except (SingularMatrix, SingularSubblock, np.linalg.LinAlgError) as exc:
            failures[float(eps)] = str(exc)
            continue
        if np.isfinite(norm):
            norms[i] = norm
    eps_star = select_epsilon(eps_values, norms)
    duration = time.perf_counter() - start
    return SweepResult(
        epsilons=eps_values,
        norms=norms,
        epsilon_star=eps_star,
        duration=duration,
        method="era" if sketch is None else "sera",
        seed=None if sketch is None else sketch.seed,
        s=None if sketch is None else sketch.s,
        failures=failures,
    )

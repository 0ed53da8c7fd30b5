import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sera import cv
from sera.cv import (
    InvalidFoldSize,
    SingularSubblock,
    SketchConfig,
    era_error_vector,
    make_folds,
    sera_error_vector,
    sketch_inverse,
    sweep,
)
from sera.kernels import FAMILIES, EpsilonGrid, RadialKernel, gram_matrix
from sera.linalg import Regularization

from .conftest import naive_refit_errors


def test_sequential_folds():
    assert make_folds(6, 2).to_lists() == [[0, 1], [2, 3], [4, 5]]
    assert make_folds(7, 3).to_lists() == [[0, 1, 2], [3, 4, 5], [6]]
    assert make_folds(6, 1).to_lists() == [[i] for i in range(6)]


@pytest.mark.parametrize("p", [0, 8])
def test_invalid_fold_size(p):
    with pytest.raises(InvalidFoldSize):
        make_folds(7, p)


@given(n=st.integers(1, 200), data=st.data())
def test_fold_partition(n, data):
    p = data.draw(st.integers(1, n))
    seed = data.draw(st.one_of(st.none(), st.integers(0, 10**6)))
    plan = make_folds(n, p, seed)
    assert plan.k == -(-n // p)
    assert sorted(plan.order.tolist()) == list(range(n))
    sizes = [len(f) for f in plan.folds]
    assert all(s == p for s in sizes[:-1])
    assert sizes[-1] == (n % p or p)
    assert make_folds(n, p, seed).to_lists() == plan.to_lists()


def test_era_diagonal_example():
    plan = make_folds(2, 2)
    e = era_error_vector(np.diag([2.0, 4.0]), np.array([2.0, 8.0]), plan)
    np.testing.assert_allclose(e.errors, [1.0, 2.0])
    assert e.norm == pytest.approx(np.sqrt(5.0))


def test_era_rippa_reduction(rng):
    x = rng.uniform(-1, 1, (15, 2))
    k = gram_matrix(RadialKernel("gaussian", 2.0), x)
    kinv = np.linalg.inv(k)
    c = kinv @ np.cos(x[:, 0])
    e = era_error_vector(kinv, c, make_folds(15, 1))
    np.testing.assert_allclose(e.errors, c / np.diag(kinv), rtol=1e-14, atol=0)


def test_era_matches_naive_refit(rng):
    x = rng.uniform(-1, 1, (12, 2))
    kernel = RadialKernel("gaussian", 1.0)
    f = np.exp(x[:, 0]) * x[:, 1]
    k = gram_matrix(kernel, x)
    kinv = np.linalg.inv(k)
    plan = make_folds(12, 3)
    got = era_error_vector(kinv, kinv @ f, plan).errors
    expected = naive_refit_errors(kernel, x, f, plan.folds)
    np.testing.assert_allclose(got, expected, rtol=1e-8, atol=1e-8 * np.abs(expected).max())


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(6, 30),
    p=st.sampled_from([1, 2, 3, 5]),
    family=st.sampled_from(FAMILIES),
    seed=st.integers(0, 2**32 - 1),
)
def test_era_oracle_property(n, p, family, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 2))
    eps = {"gaussian": 3.0, "matern0": 1.0, "wendland2": 0.5}[family]
    kernel = RadialKernel(family, eps)
    k = gram_matrix(kernel, x)
    if np.linalg.cond(k) > 1e8:
        return
    f = np.sin(2 * x[:, 0]) + x[:, 1]
    plan = make_folds(n, p, seed)
    kinv = np.linalg.inv(k)
    got = era_error_vector(kinv, kinv @ f, plan).errors
    expected = naive_refit_errors(kernel, x, f, plan.folds)
    np.testing.assert_allclose(got, expected, rtol=1e-8, atol=1e-8 * np.abs(expected).max())


def test_era_singular_subblock_reports_fold():
    kinv = np.eye(4)
    kinv[2:, 2:] = 1.0
    with pytest.raises(SingularSubblock) as info:
        era_error_vector(kinv, np.ones(4), make_folds(4, 2))
    assert info.value.fold == 1


def test_era_shape_checks():
    with pytest.raises(ValueError):
        era_error_vector(np.eye(3), np.ones(4), make_folds(4, 2))


def test_sketch_identity_gives_projector(rng):
    v = sketch_inverse(np.eye(10), SketchConfig(4), rng)
    np.testing.assert_allclose(v @ v, v, atol=1e-12)
    np.testing.assert_allclose(v, v.T, atol=1e-12)
    assert np.linalg.matrix_rank(v) == 4


def test_sketch_matches_explicit_formula():
    k = gram_matrix(RadialKernel("gaussian", 4.0), np.random.default_rng(3).uniform(-1, 1, (15, 2)))
    v = sketch_inverse(k, SketchConfig(6), np.random.default_rng(11))
    w = np.random.default_rng(11).standard_normal((15, 6))
    u = k @ w
    np.testing.assert_allclose(v, w @ np.linalg.solve(u.T @ u, u.T), rtol=1e-8, atol=1e-10)


def test_sketch_rank_contract():
    with pytest.raises(ValueError):
        sketch_inverse(np.eye(5), SketchConfig(5), np.random.default_rng(0))
    with pytest.raises(ValueError):
        sketch_inverse(np.eye(5), SketchConfig(0), np.random.default_rng(0))


@pytest.mark.parametrize("s", [1, 5, 13, 19])
def test_sketch_rank_at_most_s(s, rng):
    x = rng.uniform(-1, 1, (20, 2))
    k = gram_matrix(RadialKernel("matern0", 1.0), x)
    v = sketch_inverse(k, SketchConfig(s), rng)
    sv = np.linalg.svd(v, compute_uv=False)
    assert np.count_nonzero(sv > np.finfo(float).eps * sv[0] * 20) <= s


def test_sketch_projector_identity(rng):
    x = rng.uniform(-1, 1, (25, 2))
    k = gram_matrix(RadialKernel("gaussian", 5.0), x)
    assert np.linalg.cond(k) < 1e6
    w = rng.standard_normal((25, 9))
    u = k @ w
    proj = u @ np.linalg.pinv(u)
    assert np.linalg.norm(proj @ proj - proj) <= 1e-10 * np.linalg.norm(proj)
    assert np.linalg.norm(proj - proj.T) <= 1e-10
    v = cv.sketch_inverse_from(k, w)
    kinv = np.linalg.inv(k)
    assert np.linalg.norm(v - kinv @ proj) <= 1e-8 * np.linalg.norm(kinv)


def test_sketch_accuracy_improves_with_rank():
    # Monte-Carlo over 200 seeds on a well-conditioned 20x20 Gram matrix
    x = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    k = gram_matrix(RadialKernel("gaussian", 10.0), x)
    assert np.linalg.cond(k) < 10
    probe = np.random.default_rng(7).standard_normal(20)
    medians = []
    for s in (4, 8, 12, 16, 19):
        rel = [
            np.linalg.norm(sketch_inverse(k, SketchConfig(s), np.random.default_rng(t)) @ k @ probe - probe)
            / np.linalg.norm(probe)
            for t in range(200)
        ]
        medians.append(np.median(rel))
    assert all(a > b for a, b in zip(medians, medians[1:]))


def test_sera_close_to_era_for_large_sketch():
    x = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    k = gram_matrix(RadialKernel("gaussian", 3.0), x)
    f = np.sin(x[:, 0]) + x[:, 1] ** 2
    plan = make_folds(20, 2)
    kinv = np.linalg.inv(k)
    exact = era_error_vector(kinv, kinv @ f, plan).norm
    ratios = np.array(
        [sera_error_vector(k, f, SketchConfig(19), plan, np.random.default_rng(s)).norm / exact for s in range(200)]
    )
    assert abs(np.median(ratios) - 1.0) <= 0.1


def test_sera_deterministic_and_homogeneous(rng):
    x = rng.uniform(-1, 1, (18, 2))
    k = gram_matrix(RadialKernel("matern0", 2.0), x)
    plan = make_folds(18, 3)
    f = x[:, 0]
    a = sera_error_vector(k, f, SketchConfig(7), plan, np.random.default_rng(5)).errors
    b = sera_error_vector(k, f, SketchConfig(7), plan, np.random.default_rng(5)).errors
    assert np.array_equal(a, b)
    zero = sera_error_vector(k, np.zeros(18), SketchConfig(7), plan, np.random.default_rng(5))
    assert zero.norm == 0.0


def test_sera_exact_coefficients_flag(rng):
    x = rng.uniform(-1, 1, (16, 2))
    k = gram_matrix(RadialKernel("gaussian", 4.0), x)
    f = np.cos(x[:, 1])
    plan = make_folds(16, 2)
    cfg = SketchConfig(8, exact_coefficients=True)
    got = sera_error_vector(k, f, cfg, plan, np.random.default_rng(1)).errors
    v = sketch_inverse(k, SketchConfig(8), np.random.default_rng(1))
    np.testing.assert_allclose(got, era_error_vector(v, np.linalg.solve(k, f), plan).errors, rtol=1e-10)


def _builder(rng, family="gaussian", n=20):
    x = rng.uniform(-1, 1, (n, 2))
    return cv.gram_builder(family, x, np.sin(x[:, 0]) * x[:, 1]), x


def test_sweep_single_epsilon(rng):
    build, _ = _builder(rng)
    res = sweep(build, [2.5], make_folds(20, 2))
    assert res.epsilon_star == 2.5 and res.method == "era"
    assert np.isfinite(res.cv_norm) and res.duration > 0


def test_sweep_scores_singular_as_inf():
    x = np.linspace(-1, 1, 40)[:, None]
    build = cv.gram_builder("gaussian", x, np.sin(3 * x[:, 0]))
    res = sweep(build, [0.01, 5.0], make_folds(40, 2))
    assert np.isinf(res.norms[0]) and np.isfinite(res.norms[1])
    assert res.epsilon_star == 5.0
    assert 0.01 in res.failures


def test_sweep_all_singular_fails():
    x = np.linspace(-1, 1, 40)[:, None]
    build = cv.gram_builder("gaussian", x, np.ones(40))
    res = sweep(build, [0.001, 0.01], make_folds(40, 2))
    assert res.failed and res.epsilon_star is None


def test_sweep_matches_manual_loop(rng):
    build, x = _builder(rng, "matern0")
    plan = make_folds(20, 3)
    grid = EpsilonGrid(0.5, 3.0, 6)
    res = sweep(build, grid, plan)
    for eps, norm in zip(grid.values, res.norms):
        k = build(eps).k
        kinv = np.linalg.inv(k)
        expected = era_error_vector(kinv, kinv @ build(eps).f, plan).norm
        assert norm == pytest.approx(expected, rel=1e-9)
    assert res.epsilon_star == grid.values[np.argmin(res.norms)]


def test_tie_break_prefers_smallest_epsilon():
    assert cv.select_epsilon([0.5, 1.0, 2.0, 3.0], [2.0, 1.0, 3.0, 1.0]) == 1.0
    assert cv.select_epsilon([3.0, 2.0, 1.0], [1.0, 5.0, 1.0]) == 1.0
    assert cv.select_epsilon([1.0, 2.0], [np.inf, np.inf]) is None


def test_sweep_tie_break_symmetric_case():
    # kernel values depend only on eps * r, so a builder symmetric in log(eps)
    # around 1 gives identical norms at eps and 1/eps
    x = np.random.default_rng(0).uniform(-1, 1, (12, 2))
    base = cv.gram_builder("gaussian", x, x[:, 0])

    def build(eps):
        return base(max(eps, 1.0 / eps) + 1.0)

    res = sweep(build, [0.5, 2.0], make_folds(12, 2))
    assert res.norms[0] == res.norms[1]
    assert res.epsilon_star == 0.5


def test_sweep_sera_deterministic(rng):
    build, _ = _builder(rng, "wendland2", 30)
    plan = make_folds(30, 3)
    grid = EpsilonGrid(0.2, 1.5, 8)
    cfg = SketchConfig(10, seed=123)
    a = sweep(build, grid, plan, cfg, Regularization("tikhonov", 1e-10))
    b = sweep(build, grid, plan, cfg, Regularization("tikhonov", 1e-10))
    assert np.array_equal(a.norms, b.norms) and a.epsilon_star == b.epsilon_star
    assert (a.method, a.seed, a.s) == ("sera", 123, 10)


def test_sweep_sera_fixed_sketch_matches_sera_error_vector(rng):
    build, _ = _builder(rng, "gaussian", 24)
    plan = make_folds(24, 2)
    cfg = SketchConfig(9, seed=4)
    res = sweep(build, [2.0, 3.0, 4.0], plan, cfg)
    for eps, norm in zip([2.0, 3.0, 4.0], res.norms):
        sys_ = build(eps)
        again = sera_error_vector(sys_.k, sys_.f, cfg, plan, np.random.default_rng(4))
        assert norm == pytest.approx(again.norm, rel=1e-12)


def test_sweep_redraw_changes_sketch(rng):
    build, _ = _builder(rng, "gaussian", 24)
    plan = make_folds(24, 2)
    fixed = sweep(build, [3.0, 3.0], plan, SketchConfig(9, seed=4))
    redraw = sweep(build, [3.0, 3.0], plan, SketchConfig(9, seed=4, redraw_per_epsilon=True))
    assert fixed.norms[0] == fixed.norms[1]
    assert redraw.norms[0] == fixed.norms[0]
    assert redraw.norms[1] != redraw.norms[0]


def test_sweep_qr_regularization_survives_ill_conditioning():
    x = np.random.default_rng(2).uniform(-1, 1, (60, 2))
    build = cv.gram_builder("gaussian", x, np.sin(x[:, 0]))
    plan = make_folds(60, 5)
    plain = sweep(build, [0.1, 3.0], plan)
    qr = sweep(build, [0.1, 3.0], plan, regularization=Regularization("qr"))
    assert np.isinf(plain.norms[0])
    assert np.all(np.isfinite(qr.norms))
    sera_qr = sweep(build, [0.1, 3.0], plan, SketchConfig(20, seed=1), Regularization("qr"))
    assert np.all(np.isfinite(sera_qr.norms))


@pytest.mark.parametrize("p", [1, 3])
def test_factored_sketch_matches_dense(rng, p):
    x = rng.uniform(-1, 1, (40, 2))
    k = gram_matrix(RadialKernel("matern0", 1.5), x)
    f = np.cos(x[:, 0] + x[:, 1])
    w = rng.standard_normal((40, 12))
    dense = cv.sketch_inverse_from(k, w)
    low = cv.sketch_inverse_from(k, w, dense=False)
    np.testing.assert_allclose(low.dense(), dense, rtol=0, atol=1e-10 * np.abs(dense).max())
    np.testing.assert_allclose(low @ f, dense @ f, rtol=1e-9)
    plan = make_folds(40, p)
    a = era_error_vector(dense, dense @ f, plan).errors
    b = era_error_vector(low, low @ f, plan).errors
    np.testing.assert_allclose(b, a, rtol=1e-8)


def test_sweep_dense_flag_agrees(rng):
    build, _ = _builder(rng)
    plan = make_folds(20, 2)
    grid = EpsilonGrid(1.0, 4.0, 4)
    a = sweep(build, grid, plan, SketchConfig(8, seed=2))
    b = sweep(build, grid, plan, SketchConfig(8, seed=2, dense=True))
    np.testing.assert_allclose(a.norms, b.norms, rtol=1e-8)
    assert a.epsilon_star == b.epsilon_star

import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def naive_refit_errors(kernel_fn, x, f, folds, refine=3):
    """Held-out residuals by refitting on the complement of every fold.

    Independent of the library: builds each reduced Gram matrix with explicit
    loops and solves it with numpy.  The solve is polished by ``refine`` steps
    of iterative refinement with extended-precision residuals, so the oracle
    stays accurate on ill-conditioned systems.
    """
    n = len(x)
    ext = np.longdouble

    def k(a, b):
        return kernel_fn(np.sqrt(np.sum((a - b) ** 2)))

    out = []
    for fold in folds:
        train = np.setdiff1d(np.arange(n), fold)
        kt = np.array([[k(x[i], x[j]) for j in train] for i in train])
        coef = np.linalg.solve(kt, f[train]).astype(ext)
        for _ in range(refine):
            resid = f[train].astype(ext) - kt.astype(ext) @ coef
            coef += np.linalg.solve(kt, resid.astype(np.float64))
        for v in fold:
            row = np.array([k(x[v], x[j]) for j in train], dtype=ext)
            out.append(float(ext(f[v]) - row @ coef))
    return np.array(out)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

"""Experiment harness: exact vs. randomized shape-parameter tuning.

An experiment tunes epsilon once with the exact algorithm and ``reps`` times
with the sketched one for each reduction ratio ``q`` (sketch rank
``s = floor(q N)``), refits the interpolant at the selected epsilon and
measures the error on an evaluation grid.  Repetition ``r`` of ratio ``i`` in
experiment ``j`` uses the child seed derived from ``(base_seed, j, i, r)``, so
results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from contextlib import nullcontext
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import cv, pointsets
from .interpolant import error_norm, fit
from .kernels import FAMILIES, EpsilonGrid, RadialKernel
from .linalg import NO_REGULARIZATION, Regularization, SingularMatrix


class ConfigError(ValueError):
    pass


class EmptySample(ValueError):
    pass


def f_marchetti(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x1, x2 = x[:, 0], x[:, 1]
    return np.sin(x1) / (x1**2 + 1) * np.cos(x2) / (x2**2 + 1)


def g_mixed(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x1, x2 = x[:, 0], x[:, 1]
    return x1**2 - x2**4 + np.exp(-((x1 + x2) ** 2))


TEST_FUNCTIONS = {"f_marchetti": f_marchetti, "g_mixed": g_mixed}
FUNCTION_ALIASES = {"f": "f_marchetti", "g": "g_mixed"}

QUARTILE_METHOD = "linear"  # numpy's default, the "type 7" convention


@dataclass(frozen=True)
class BoxplotStats:
    median: float
    q25: float
    q75: float
    whisker_low: float
    whisker_high: float
    outliers: tuple = ()
    count: int = 0
    nonfinite: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outliers"] = list(self.outliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoxplotStats":
        d = dict(d)
        d["outliers"] = tuple(d.get("outliers", ()))
        return cls(**d)


def boxplot_stats(samples) -> BoxplotStats:
    """Median, quartiles, 1.5 IQR whiskers and outliers of ``samples``.

    Quartiles interpolate linearly between order statistics.  Non-finite
    samples are counted in ``nonfinite`` and left out of the statistics.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptySample("boxplot statistics need at least one sample")
    finite = x[np.isfinite(x)]
    nonfinite = int(x.size - finite.size)
    if finite.size == 0:
        nan = float("nan")
        return BoxplotStats(nan, nan, nan, nan, nan, (), int(x.size), nonfinite)
    q25, median, q75 = np.percentile(finite, [25, 50, 75], method=QUARTILE_METHOD)
    iqr = q75 - q25
    lo_fence, hi_fence = q25 - 1.5 * iqr, q75 + 1.5 * iqr
    inside = finite[(finite >= lo_fence) & (finite <= hi_fence)]
    outliers = np.sort(finite[(finite < lo_fence) | (finite > hi_fence)])
    return BoxplotStats(
        median=float(median),
        q25=float(q25),
        q75=float(q75),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=tuple(float(v) for v in outliers),
        count=int(x.size),
        nonfinite=nonfinite,
    )


@dataclass
class ExperimentConfig:
    name: str
    kernel: str
    points: str
    eval_grid: str
    function: str
    p: int
    epsilons: EpsilonGrid
    ratios: tuple = ()
    methods: tuple = ("era", "sera")
    reps: int = 100
    seed: int = 0
    regularization: Regularization = NO_REGULARIZATION
    fit_regularization: Regularization = NO_REGULARIZATION
    redraw_per_epsilon: bool = False
    exact_coefficients: bool = False
    fold_seed: int | None = None

    def validate(self, n_points: int | None = None) -> None:
        if self.kernel not in FAMILIES:
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if FUNCTION_ALIASES.get(self.function, self.function) not in TEST_FUNCTIONS:
            raise ConfigError(f"unknown test function {self.function!r}")
        if not set(self.methods) <= {"era", "sera"} or not self.methods:
            raise ConfigError(f"methods must be a subset of era, sera: {self.methods}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.p < 1:
            raise ConfigError("p must be >= 1")
        if "sera" in self.methods and not self.ratios:
            raise ConfigError("sera needs at least one reduction ratio")
        for q in self.ratios:
            if not 0 < q < 1:
                raise ConfigError(f"reduction ratio {q} outside (0, 1)")
        if n_points is not None:
            if self.p > n_points:
                raise ConfigError(f"p={self.p} exceeds the point count {n_points}")
            for q in self.ratios:
                s = sketch_rank(q, n_points)
                if not 0 < s < n_points:
                    raise ConfigError(f"q={q} gives s={s}, need 0 < s < {n_points}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["epsilons"] = str(self.epsilons)
        d["ratios"] = list(self.ratios)
        d["methods"] = list(self.methods)
        d["regularization"] = str(self.regularization)
        d["fit_regularization"] = str(self.fit_regularization)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            eps = d["epsilons"]
            d["epsilons"] = (
                EpsilonGrid.parse(eps) if isinstance(eps, str) else EpsilonGrid(**eps)
            )
            for key in ("regularization", "fit_regularization"):
                if key in d:
                    d[key] = Regularization.parse(str(d[key]))
            d["ratios"] = tuple(float(q) for q in d.get("ratios", ()))
            d["methods"] = tuple(d.get("methods", ("era", "sera")))
            cfg = cls(**d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None
        cfg.validate()
        return cfg


def sketch_rank(q: float, n_points: int) -> int:
    # guard against q * N landing a hair below an integer
    return int(math.floor(q * n_points + 1e-9))


def ratio_grid(lo=0.05, hi=0.5, count=16) -> tuple:
    return tuple(float(q) for q in np.round(np.linspace(lo, hi, count), 12))


def preset(name: str, reps: int = 100, seed: int = 0, q: float = 0.2, sides=None) -> list:
    """Preconfigured experiments ``test1a``, ``test1b`` and ``test2``."""
    if name == "test1a":
        return [
            ExperimentConfig(
                name="test1a",
                kernel="matern0",
                points="grid:20",
                eval_grid="grid:30",
                function="f_marchetti",
                p=2,
                epsilons=EpsilonGrid(0.01, 1.0, 101),
                ratios=ratio_grid(),
                reps=reps,
                seed=seed,
            )
        ]
    if name == "test1b":
        # the final Gaussian fit uses a small Tikhonov shift in place of a greedy construction
        return [
            ExperimentConfig(
                name="test1b",
                kernel="gaussian",
                points="halton:289",
                eval_grid="grid:30",
                function="f_marchetti",
                p=5,
                epsilons=EpsilonGrid(0.1, 10.0, 101),
                ratios=ratio_grid(),
                reps=reps,
                seed=seed,
                regularization=Regularization("qr"),
                fit_regularization=Regularization("tikhonov", 1e-10),
            )
        ]
    if name == "test2":
        sides = sides or (20, 25, 30, 35, 40, 45, 50)
        return [
            ExperimentConfig(
                name=f"test2/n{n}",
                kernel="wendland2",
                points=f"halton:{n * n}",
                eval_grid=f"grid:{n}",
                function="g_mixed",
                p=3,
                epsilons=EpsilonGrid(0.01, 2.0, 101),
                ratios=(q,),
                reps=reps,
                seed=seed,
                regularization=Regularization("tikhonov", 1e-10),
                fit_regularization=Regularization("tikhonov", 1e-10),
            )
            for n in sides
        ]
    raise ConfigError(f"unknown preset {name!r} (test1a | test1b | test2)")


@dataclass
class RunRecord:
    run_id: str
    method: str
    kernel: str
    N: int
    p: int
    q: float | None
    s: int | None
    seed: int | None
    epsilon_star: float | None
    cv_norm: float
    tune_time_ms: float
    test_error: float


CSV_COLUMNS = [f.name for f in fields(RunRecord)]


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list
    stats: dict = field(default_factory=dict)
    reference_norm: float = float("nan")
    workers: int = 1

    def era(self) -> RunRecord | None:
        return next((r for r in self.records if r.method == "era"), None)

    def sera(self, q: float) -> list:
        return [r for r in self.records if r.method == "sera" and r.q == q]


def child_seed(base_seed: int, experiment: int, ratio: int, rep: int) -> int:
    seq = np.random.SeedSequence(base_seed, spawn_key=(experiment, ratio, rep))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class _Problem:
    """Everything one tuning run needs, rebuilt cheaply inside workers."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        cfg.validate()
        try:
            self.x = pointsets.from_spec(cfg.points)
            self.y = pointsets.from_spec(cfg.eval_grid)
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate(len(self.x))
        func = TEST_FUNCTIONS[FUNCTION_ALIASES.get(cfg.function, cfg.function)]
        self.fx = func(self.x)
        self.fy = func(self.y)
        self.plan = cv.make_folds(len(self.x), cfg.p, cfg.fold_seed)
        self.builder = cv.gram_builder(cfg.kernel, self.x, self.fx)

    def run(self, sketch: cv.SketchConfig | None, single_thread: bool = True):
        limits = threadpool_limits(limits=1) if single_thread else nullcontext()
        with limits:
            result = cv.sweep(
                self.builder, self.cfg.epsilons, self.plan, sketch, self.cfg.regularization
            )
        return result, self.test_error(result.epsilon_star)

    def test_error(self, eps: float | None) -> float:
        if eps is None:
            return float("inf")
        try:
            model = fit(RadialKernel(self.cfg.kernel, eps), self.x, self.fx, self.cfg.fit_regularization)
        except (SingularMatrix, np.linalg.LinAlgError):
            return float("inf")
        return error_norm(model, self.y, self.fy)


_WORKER_PROBLEM: _Problem | None = None


def _worker_init(cfg_dict):
    global _WORKER_PROBLEM
    _WORKER_PROBLEM = _Problem(ExperimentConfig.from_dict(cfg_dict))


def _worker_run(task):
    sketch = cv.SketchConfig(**task)
    result, err = _WORKER_PROBLEM.run(sketch)
    return result.epsilon_star, result.cv_norm, result.duration, err


def _record(cfg, n, run_id, method, q, s, seed, eps, norm, duration, err) -> RunRecord:
    return RunRecord(
        run_id=run_id,
        method=method,
        kernel=cfg.kernel,
        N=n,
        p=cfg.p,
        q=q,
        s=s,
        seed=seed,
        epsilon_star=eps,
        cv_norm=norm,
        tune_time_ms=duration * 1e3,
        test_error=err,
    )


def run_experiment(cfg: ExperimentConfig, index: int = 0, workers: int = 1, progress=None) -> ExperimentReport:
    """Run the exact tuning once and the sketched tuning ``reps`` times per ratio.

    With ``workers > 1`` repetitions run in a process pool; each sweep is
    still timed with single-threaded BLAS and the worker count is reported.
    """
    problem = _Problem(cfg)
    n = len(problem.x)
    records = []
    if "era" in cfg.methods:
        result, err = problem.run(None)
        records.append(
            _record(cfg, n, f"{cfg.name}:era", "era", None, None, None,
                    result.epsilon_star, result.cv_norm, result.duration, err)
        )
        if progress:
            progress(f"{cfg.name} era eps*={result.epsilon_star} time={result.duration:.3f}s")
    if "sera" in cfg.methods:
        tasks = []
        for qi, q in enumerate(cfg.ratios):
            s = sketch_rank(q, n)
            for rep in range(cfg.reps):
                seed = child_seed(cfg.seed, index, qi, rep)
                tasks.append((qi, q, s, rep, seed))
        sketch_args = [
            dict(s=s, seed=seed, redraw_per_epsilon=cfg.redraw_per_epsilon,
                 exact_coefficients=cfg.exact_coefficients)
            for _, _, s, _, seed in tasks
        ]
        if workers > 1:
            with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(cfg.to_dict(),)) as pool:
                outcomes = list(pool.map(_worker_run, sketch_args, chunksize=max(1, len(tasks) // (4 * workers))))
        else:
            outcomes = []
            for args in sketch_args:
                result, err = problem.run(cv.SketchConfig(**args))
                outcomes.append((result.epsilon_star, result.cv_norm, result.duration, err))
        for (qi, q, s, rep, seed), (eps, norm, duration, err) in zip(tasks, outcomes):
            records.append(
                _record(cfg, n, f"{cfg.name}:sera:q{qi}:r{rep}", "sera", q, s, seed,
                        eps, norm, duration, err)
            )
        if progress:
            progress(f"{cfg.name} sera: {len(tasks)} runs done")
    report = ExperimentReport(cfg, records, reference_norm=float(np.linalg.norm(problem.fy)), workers=workers)
    report.stats = summarize(report)
    return report


def summarize(report: ExperimentReport) -> dict:
    """Boxplot statistics per (method, ratio) for epsilon*, time and test error."""
    groups: dict = {}
    for r in report.records:
        key = "era" if r.method == "era" else f"sera:q={r.q!r}"
        groups.setdefault(key, []).append(r)
    out = {}
    for key, recs in groups.items():
        out[key] = {
            name: boxplot_stats([np.inf if getattr(r, name) is None else getattr(r, name) for r in recs])
            for name in ("epsilon_star", "tune_time_ms", "test_error")
        }
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        for r in rep.records:
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def summary_dict(reports) -> dict:
    return {
        "quartile_method": "linear interpolation between order statistics (type 7)",
        "whisker_rule": "1.5 IQR",
        "timing_scope": "tuning sweep only: Gram assembly, inversion or sketch, fold solves, argmin",
        "blas_threads_per_sweep": 1,
        "experiments": [
            {
                "config": rep.config.to_dict(),
                "workers": rep.workers,
                "reference_norm_on_eval_grid": rep.reference_norm,
                "stats": {
                    key: {name: st.to_dict() for name, st in quantities.items()}
                    for key, quantities in rep.stats.items()
                },
            }
            for rep in reports
        ],
    }


def serialize_report(reports, out_dir, metadata: dict | None = None) -> tuple:
    """Write ``results.csv`` and ``summary.json`` into ``out_dir``; return their paths."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    out_dir = Path(out_dir)
    csv_path = out_dir / "results.csv"
    json_path = out_dir / "summary.json"
    summary = summary_dict(reports)
    if metadata:
        summary["metadata"] = metadata
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(records_csv(reports))
        json_path.write_text(json.dumps(summary, indent=2))
    except OSError as exc:
        raise OSError(f"cannot write report to {exc.filename or out_dir}: {exc.strerror}") from exc
    return csv_path, json_path


def load_stats(json_path) -> list:
    """Read back the boxplot blocks of a ``summary.json``."""
    data = json.loads(Path(json_path).read_text())
    return [
        {key: {name: BoxplotStats.from_dict(st) for name, st in q.items()} for key, q in exp["stats"].items()}
        for exp in data["experiments"]
    ]


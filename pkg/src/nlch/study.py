"""Parameter studies: eps -> 0, lambda -> 0, continuous dependence and regularity tracking.

Each study is a deterministic function of its StudySpec. Parameter points run
concurrently on a thread pool; results are merged in parameter order so the
CSV output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import RunSummary, SolverConfig, regularize_initial, run, truncate_velocity
from .errors import NLCHError
from .kernel import build_kernel, build_symbol, resolution_floor
from .potential import GraphKind, PotentialSplit
from .torus import ScalarField, TorusGrid, VelocityField

STUDY_KINDS = ("eps_to_zero", "lambda_to_zero", "continuous_dependence", "regularity")


@dataclass(frozen=True, eq=False)
class StudySpec:
    kind: str
    params: tuple[float, ...]
    solver: SolverConfig
    potential: PotentialSplit
    initial: ScalarField
    beta: VelocityField | None = None
    eps: float = 0.2
    family: str = "smooth_bump"
    symbol_method: str = "radial"
    normalization: str = "bbm"
    initial_perturbation: ScalarField | None = None
    velocity_perturbation: VelocityField | None = None
    workers: int | None = None

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        p = list(self.params)
        if any(b >= a for a, b in zip(p, p[1:])):
            raise ValueError(f"study parameters must be strictly decreasing, got {p}")

    @property
    def grid(self) -> TorusGrid:
        return self.initial.grid

    def symbol(self, eps: float | None = None):
        eps = self.eps if eps is None else eps
        kern = build_kernel(self.family, eps, self.grid.dim, self.grid.L, self.normalization)
        return build_symbol(kern, self.grid, self.symbol_method)


@dataclass
class StudyReport:
    kind: str
    columns: list[str]
    rows: list[tuple]
    verdicts: dict[str, bool] = field(default_factory=dict)
    observations: dict[str, float] = field(default_factory=dict)
    incomplete: str | None = None
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return self.incomplete is None and all(self.verdicts.values())

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"study: {self.kind}", f"rows: {len(self.rows)}"]
        if self.incomplete:
            lines.append(f"INCOMPLETE: {self.incomplete}")
        for name, ok in self.verdicts.items():
            lines.append(f"verdict {name}: {'PASS' if ok else 'FAIL'}")
        for name, val in self.observations.items():
            lines.append(f"observed {name}: {_fmt(val)}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(report: StudyReport, directory, stamp: str | None = None) -> Path:
    """Write ``{kind}_{timestamp}.csv`` plus a ``_summary.txt`` sibling; returns the CSV path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stamp = stamp or time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    base = f"{report.kind}_{stamp}"
    path = directory / f"{base}.csv"
    i = 1
    while path.exists():
        path = directory / f"{base}_{i}.csv"
        i += 1
    path.write_text(report.to_csv())
    path.with_name(path.stem + "_summary.txt").write_text(report.summary())
    return path


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    try:
        cap = int(os.environ.get("NLCH_THREADS", ""))
    except ValueError:
        cap = None
    if cap is not None:
        n = min(n, max(1, cap))
    return max(1, n)


def _map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _guarded(fn):
    def inner(arg):
        try:
            return fn(arg)
        except NLCHError as exc:
            return exc

    return inner


def _l2(grid: TorusGrid, diff: np.ndarray) -> np.ndarray:
    """L2 norms of a stack of fields along axis 0."""
    axes = tuple(range(1, diff.ndim))
    return np.sqrt(grid.cell_volume * np.sum(diff**2, axis=axes))


def _h1_sq(grid: TorusGrid, diff: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, diff.ndim))
    spec = np.fft.fftn(diff, axes=axes)
    p = np.abs(spec) ** 2 * grid.volume / float(grid.n**grid.dim) ** 2
    return np.sum(p * (1.0 + grid.ksq()), axis=axes)


def trajectory_distances(grid: TorusGrid, a: RunSummary, b: RunSummary, dt: float):
    """sup_t L2 distance and L2(0,T;H1) distance of two stored trajectories."""
    diff = a.trajectory - b.trajectory
    sup_l2 = float(_l2(grid, diff).max())
    h1 = _h1_sq(grid, diff)
    l2h1 = math.sqrt(dt * float(h1[1:].sum()))
    return sup_l2, l2h1


def _loglog_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    coef, res, *_ = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1, full=True)
    resid = math.sqrt(float(res[0]) / ok.sum()) if len(res) else 0.0
    return float(coef[0]), resid


def _strictly_decreasing(vals) -> bool:
    vals = list(vals)
    return all(b < a for a, b in zip(vals, vals[1:]))


def study_eps(spec: StudySpec) -> StudyReport:
    """Nonlocal runs along the eps sequence against one local reference run."""
    start = time.perf_counter()
    cfg = spec.solver
    grid = spec.grid
    floor = resolution_floor(grid, spec.symbol_method)
    jobs = [("local", None)] + [("nonlocal", eps) for eps in spec.params]

    def job(item):
        kind, eps = item
        model = "local" if kind == "local" else spec.symbol(eps)
        return run(spec.initial, model, spec.potential, spec.beta, cfg, keep_trajectory=True)

    results = _map(_guarded(job), jobs, worker_count(spec.workers))
    cols = ["eps", "sup_l2", "l2_h1", "lyapunov_gap", "resolved"]
    report = StudyReport("eps_to_zero", cols, [])
    if isinstance(results[0], Exception):
        report.incomplete = f"local reference failed: {results[0]}"
        return report
    ref = results[0]
    for eps, res in zip(spec.params, results[1:]):
        if isinstance(res, Exception):
            report.incomplete = f"eps={eps!r} failed: {res}"
            break
        sup_l2, l2h1 = trajectory_distances(grid, res, ref, cfg.dt)
        gap = float(np.max(np.abs(res.column("lyapunov") - ref.column("lyapunov"))))
        report.rows.append((float(eps), sup_l2, l2h1, gap, bool(eps >= floor)))
    resolved = [r for r in report.rows if r[4]]
    sup = [r[1] for r in resolved]
    report.verdicts["monotone_sup_l2"] = len(sup) >= 2 and _strictly_decreasing(sup)
    if sup:
        report.observations["final_over_initial_sup_l2"] = sup[-1] / sup[0] if sup[0] > 0 else 0.0
        slope, resid = _loglog_slope([r[0] for r in resolved], sup)
        report.observations["loglog_slope_sup_l2"] = slope
        report.observations["loglog_slope_residual"] = resid
    report.wall_time = time.perf_counter() - start
    return report


def constraint_violation(traj: np.ndarray) -> float:
    """max over the run of (|u| - 1)^+."""
    return float(np.max(np.maximum(np.abs(traj) - 1.0, 0.0)))


def study_lambda(spec: StudySpec) -> StudyReport:
    """Runs at fixed eps along the lambda sequence; consecutive C0(L2) Cauchy distances."""
    start = time.perf_counter()
    grid = spec.grid
    symbol = spec.symbol()

    def job(lam):
        cfg = dataclasses.replace(spec.solver, lam=float(lam), lam_yosida=None)
        return run(spec.initial, symbol, spec.potential, spec.beta, cfg, keep_trajectory=True)

    results = _map(_guarded(job), spec.params, worker_count(spec.workers))
    cols = ["lambda", "lambda_next", "cauchy_sup_l2", "decay_per_decade", "constraint_violation", "dt_times_S"]
    report = StudyReport("lambda_to_zero", cols, [])
    for lam, res in zip(spec.params, results):
        if isinstance(res, Exception):
            report.incomplete = f"lambda={lam!r} failed: {res}"
            return report
    dists = []
    for i in range(len(spec.params) - 1):
        a, b = results[i], results[i + 1]
        d = float(_l2(grid, a.trajectory - b.trajectory).max())
        # decay of the Cauchy distance per decade of lambda, relative to the previous pair
        decades = math.log10(spec.params[i - 1] / spec.params[i]) if i > 0 else 0.0
        factor = (dists[-1] / d) ** (1.0 / decades) if dists and d > 0 else float("nan")
        dists.append(d)
        report.rows.append(
            (float(spec.params[i]), float(spec.params[i + 1]), d, factor, constraint_violation(a.trajectory), a.dt_times_S)
        )
    report.verdicts["cauchy_decreasing"] = _strictly_decreasing(dists)
    factors = [r[3] for r in report.rows[1:]]
    report.verdicts["cauchy_factor3_per_decade"] = all(f >= 3.0 for f in factors)
    viol = [constraint_violation(r.trajectory) for r in results]
    report.observations["constraint_violation_smallest_lambda"] = viol[-1]
    if spec.potential.kind is GraphKind.OBSTACLE:
        report.verdicts["constraint_violation_decreasing"] = all(b <= a for a, b in zip(viol, viol[1:]))
    if dists:
        slope, resid = _loglog_slope(spec.params[:-1], dists)
        report.observations["loglog_slope_cauchy"] = slope
        report.observations["loglog_slope_residual"] = resid
    report.wall_time = time.perf_counter() - start
    return report


def beta_l2_l3(a: VelocityField, b: VelocityField, grid: TorusGrid, cfg: SolverConfig) -> float:
    """||a - b||_{L2(0,T;L3)} with rectangle rules in space and at the step end times."""
    total = 0.0
    for n in range(1, cfg.n_steps + 1):
        t = n * cfg.dt
        d = a.sample(t, grid) - b.sample(t, grid)
        l3 = (grid.cell_volume * float(np.sum(np.sqrt((d**2).sum(axis=0)) ** 3))) ** (1.0 / 3.0)
        total += cfg.dt * l3**2
    return math.sqrt(total)


def _add_velocity(base: VelocityField | None, pert: VelocityField, scale: float, dim: int) -> VelocityField:
    def evaluator(t, coords):
        p = pert.evaluator(t, coords)
        if base is None:
            return [scale * c for c in p]
        return [bc + scale * pc for bc, pc in zip(base.evaluator(t, coords), p)]

    bound = (base.bound if base is not None else 0.0) + abs(scale) * pert.bound
    div_free = (base is None or base.divergence_free) and pert.divergence_free
    const = (base is None or base.time_constant) and pert.time_constant
    return VelocityField(evaluator, bound, div_free, const, f"perturbed(s={scale!r})")


def _dual_sq(grid: TorusGrid, v: np.ndarray) -> float:
    spec = np.fft.fftn(v)
    p = np.abs(spec) ** 2 * grid.volume / float(grid.n**grid.dim) ** 2
    ksq = grid.ksq()
    inv = np.zeros_like(ksq)
    np.divide(1.0, ksq, out=inv, where=ksq > 0)
    return float(p.flat[0] + np.sum(p * inv))


def study_continuous_dependence(spec: StudySpec) -> StudyReport:
    """LHS/RHS ratios of the stability estimate for the scaled perturbations in ``params``."""
    start = time.perf_counter()
    grid = spec.grid
    cfg = spec.solver
    symbol = spec.symbol()
    if spec.initial_perturbation is None and spec.velocity_perturbation is None:
        raise ValueError("continuous-dependence study needs an initial or a velocity perturbation")
    if spec.initial_perturbation is not None:
        m = spec.initial_perturbation.mean()
        if abs(m) > cfg.mean_tol:
            raise ValueError(f"perturbed data must keep the mean: perturbation mean is {m:.3e}")

    def data(scale):
        u0 = spec.initial
        beta = spec.beta
        if scale is not None:
            if spec.initial_perturbation is not None:
                u0 = u0 + scale * spec.initial_perturbation
            if spec.velocity_perturbation is not None:
                beta = _add_velocity(beta, spec.velocity_perturbation, scale, grid.dim)
        return u0, beta

    def job(scale):
        u0, beta = data(scale)
        return run(u0, symbol, spec.potential, beta, cfg, keep_trajectory=True)

    items = [None] + list(spec.params)
    results = _map(_guarded(job), items, worker_count(spec.workers))
    cols = ["scale", "lhs", "rhs", "ratio", "sup_dual_sq", "int_energy"]
    report = StudyReport("continuous_dependence", cols, [])
    if isinstance(results[0], Exception):
        report.incomplete = f"base run failed: {results[0]}"
        return report
    base = results[0]
    base_u0, base_beta = data(None)
    for scale, res in zip(spec.params, results[1:]):
        if isinstance(res, Exception):
            report.incomplete = f"scale={scale!r} failed: {res}"
            break
        u0, beta = data(scale)
        if abs(u0.mean() - base_u0.mean()) > cfg.mean_tol:
            raise ValueError("initial data of the compared runs must have equal means")
        diff = res.trajectory - base.trajectory
        sup_dual = max(_dual_sq(grid, d) for d in diff)
        energies = [0.5 * float(np.sum(symbol.b_hat * np.abs(np.fft.fftn(d)) ** 2)) for d in diff[1:]]
        int_energy = cfg.dt * sum(energies) * grid.volume / float(grid.n**grid.dim) ** 2
        lhs = sup_dual + int_energy
        u0_diff = regularize_initial(u0, cfg.lam_visc).values - regularize_initial(base_u0, cfg.lam_visc).values
        rhs = _dual_sq(grid, u0_diff)
        if spec.velocity_perturbation is not None:
            lam = cfg.lam_visc
            b1 = truncate_velocity(beta, lam) if lam > 0 else beta
            b0 = base_beta if base_beta is not None else _add_velocity(None, spec.velocity_perturbation, 0.0, grid.dim)
            b0 = truncate_velocity(b0, lam) if lam > 0 else b0
            rhs += beta_l2_l3(b1, b0, grid, cfg) ** 2
        ratio = lhs / rhs if rhs > 0 else float("nan")
        report.rows.append((float(scale), lhs, rhs, ratio, sup_dual, int_energy))
    ratios = [r[3] for r in report.rows if np.isfinite(r[3])]
    if ratios:
        spread = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
        report.observations["ratio_spread"] = spread
        report.observations["fitted_M"] = max(ratios)
        report.verdicts["ratio_stable_factor3"] = spread <= 3.0
    report.wall_time = time.perf_counter() - start
    return report


REGULARITY_COLUMNS = [
    "eps",
    "sup_dual_dtu",
    "dtu_l2l2",
    "sup_mu_h1",
    "mu_l2h2",
    "sup_xi_l2",
    "growth_mu_h1",
    "growth_dtu_l2",
    "growth_mu_h2",
]


def _growth(times, vals, T):
    early = vals[times <= T / 10 + 1e-12]
    early_max = float(early.max()) if early.size else 0.0
    return float(vals.max()) / early_max if early_max > 0 else float("inf")


def study_regularity(spec: StudySpec) -> StudyReport:
    """Track the higher-order norms along the eps sequence."""
    start = time.perf_counter()
    cfg = spec.solver
    report = StudyReport("regularity", list(REGULARITY_COLUMNS), [])
    if cfg.n_steps == 0:
        return report

    def job(eps):
        return run(spec.initial, spec.symbol(eps), spec.potential, spec.beta, cfg)

    results = _map(_guarded(job), spec.params, worker_count(spec.workers))
    for eps, res in zip(spec.params, results):
        if isinstance(res, Exception):
            report.incomplete = f"eps={eps!r} failed: {res}"
            break
        t = res.column("t")
        dtu = res.column("dtu_l2")
        mu_h1 = res.column("mu_h1")
        mu_h2 = res.column("mu_h2")
        report.rows.append(
            (
                float(eps),
                float(res.column("dual_norm_dtu").max()),
                math.sqrt(cfg.dt * float(np.sum(dtu[1:] ** 2))),
                float(mu_h1.max()),
                math.sqrt(cfg.dt * float(np.sum(mu_h2[1:] ** 2))),
                float(res.column("xi_l2").max()),
                _growth(t, mu_h1, cfg.T),
                _growth(t[1:], dtu[1:], cfg.T),
                _growth(t, mu_h2, cfg.T),
            )
        )
    if report.rows and not report.incomplete:
        growth = [max(r[6], r[7], r[8]) for r in report.rows]
        report.verdicts["bounded_growth_2x"] = max(growth) <= 2.0
        for name in ("sup_mu_h1", "dtu_l2l2", "mu_l2h2"):
            col = report.column(name)
            var = (col.max() - col.min()) / col.min() if col.min() > 0 else float("inf")
            report.observations[f"eps_variation_{name}"] = float(var)
        worst = max(report.observations[f"eps_variation_{n}"] for n in ("sup_mu_h1", "dtu_l2l2", "mu_l2h2"))
        report.verdicts["eps_stable_50pct"] = worst < 0.5
    report.wall_time = time.perf_counter() - start
    return report


def run_study(spec: StudySpec) -> StudyReport:
    return {
        "eps_to_zero": study_eps,
        "lambda_to_zero": study_lambda,
        "continuous_dependence": study_continuous_dependence,
        "regularity": study_regularity,
    }[spec.kind](spec)

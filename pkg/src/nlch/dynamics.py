"""Time integration of the viscous nonlocal (and local) convective Cahn-Hilliard system.

One step of the stabilized IMEX scheme reads

    (u+ - u) / dt = Laplace(mu+) - div(beta_lam(t+) u*)
    mu+ = -lam Laplace(u+) + B u+ + S (u+ - u) + gamma_lam(u*) + Pi(u*)

where u* is the latest inner iterate. Every linear solve is diagonal in Fourier
with multiplier 1 + dt |k|^2 (lam |k|^2 + b(k) + S); the inner fixed-point loop
drives u* to u+. The zero mode is carried over untouched, so the mean of u is
conserved to rounding.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError, StepDiverged
from .kernel import NonlocalSymbol, laplacian_symbol
from .potential import GraphKind, PotentialSplit
from .torus import ScalarField, TorusGrid, VelocityField, irfft_real, write_snapshot, zero_velocity

log = logging.getLogger(__name__)

Model = Union[NonlocalSymbol, str]


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    T: float
    lam: float = 1e-2
    lam_yosida: float | None = None
    S: float | str = "auto"
    fp_tol: float = 1e-10
    max_iter: int = 200
    mean_tol: float = 1e-10
    snapshot_every: int = 0
    residual_every: int = 10
    scheme: str = "imex_stabilized"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("solver.dt", "must be positive")
        if not self.T >= 0:
            raise ConfigError("solver.T", "must be nonnegative")
        if self.lam < 0:
            raise ConfigError("potential.lambda", "must be nonnegative")
        if self.lam_yosida is not None and self.lam_yosida < 0:
            raise ConfigError("potential.lambda_yosida", "must be nonnegative")
        if not (self.S == "auto" or (isinstance(self.S, (int, float)) and self.S >= 0)):
            raise ConfigError("solver.S", "must be 'auto' or a nonnegative number")
        if self.scheme != "imex_stabilized":
            raise ConfigError("solver.scheme", f"unknown scheme {self.scheme!r}")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9 * max(1.0, self.T / self.dt):
            raise ConfigError("solver.T", f"T = {self.T} is not an integer multiple of dt = {self.dt}")

    @property
    def lam_visc(self) -> float:
        return self.lam

    @property
    def lam_gamma(self) -> float:
        return self.lam if self.lam_yosida is None else self.lam_yosida

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def outside_scheme(self) -> bool:
        """lam = 0 viscosity is not covered by the approximation scheme the solver mirrors."""
        return self.lam_visc == 0


@dataclass(frozen=True)
class SimState:
    t: float
    u: ScalarField
    mu: ScalarField
    step_index: int = 0


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    E_eps: float
    potential_energy: float
    lyapunov: float
    grad_mu_l2: float
    u_l2: float
    u_h1: float
    dual_norm_dtu: float
    mu_mean: float
    gamma_l1: float
    dtu_l2: float
    mu_h1: float
    mu_h2: float
    xi_l2: float


DIAGNOSTIC_COLUMNS = [f.name for f in dataclasses.fields(DiagnosticsRecord)]


def truncate_velocity(beta: VelocityField, lam: float) -> VelocityField:
    """Pointwise radial projection of beta onto the closed ball of radius 1/lam."""
    if not lam > 0:
        raise ValueError(f"velocity truncation needs lambda > 0, got {lam}")
    radius = 1.0 / lam

    def evaluator(t, coords):
        comps = np.stack(np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in beta.evaluator(t, coords)]))
        return list(_project(comps, radius))

    return VelocityField(
        evaluator,
        min(beta.bound, radius),
        divergence_free=beta.divergence_free and beta.bound <= radius,
        time_constant=beta.time_constant,
        name=f"{beta.name}|P_{lam:g}",
    )


def _project(vec, radius):
    mag = np.sqrt((vec**2).sum(axis=0))
    scale = np.where(mag > radius, radius / np.where(mag > 0, mag, 1.0), 1.0)
    return vec * scale


def regularize_initial(u0: ScalarField, lam: float) -> ScalarField:
    """Solve v - lam Laplace(v) = u0 spectrally."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        return u0
    grid = u0.grid
    vals = irfft_real(np.fft.rfftn(u0.values) / (1.0 + lam * grid.ksq(half=True)), grid.shape)
    return ScalarField(grid, vals)


def _half_weights(grid: TorusGrid) -> np.ndarray:
    """Multiplicities of rfftn entries in the full spectrum, times the unitary scaling."""
    w = np.full(grid.half_shape, 2.0)
    w[..., 0] = 1.0
    w[..., -1] = 1.0
    return w * grid.volume / float(grid.n**grid.dim) ** 2


class Stepper:
    """Precomputed spectral operators for repeated steps on one grid."""

    def __init__(self, symbol: NonlocalSymbol, split: PotentialSplit, beta: VelocityField | None, config: SolverConfig, S: float):
        grid = symbol.grid
        self.grid = grid
        self.symbol = symbol
        self.split = split
        self.config = config
        self.S = float(S)
        beta = beta if beta is not None else zero_velocity(grid.dim)
        self.beta = truncate_velocity(beta, config.lam_visc) if config.lam_visc > 0 else beta
        self.has_convection = beta.bound > 0
        self.ksq = grid.ksq(half=True)
        self.b = symbol.half
        self.deriv = grid.derivative_multipliers(half=True)
        self.mask = grid.dealias_mask(half=True)
        self.weights = _half_weights(grid)
        self._beta_cache: tuple[float, np.ndarray] | None = None
        self._set_operators()

    def _set_operators(self):
        dt = self.config.dt
        self.A = self.config.lam_visc * self.ksq + self.b + self.S
        self.denom = 1.0 + dt * self.ksq * self.A

    def raise_stabilization(self, S: float):
        self.S = float(S)
        self._set_operators()

    def linear_multiplier(self) -> np.ndarray:
        return self.denom

    def rfft(self, v):
        return np.fft.rfftn(v)

    def irfft(self, vh):
        return irfft_real(vh, self.grid.shape)

    def velocity(self, t: float) -> np.ndarray:
        if self._beta_cache is not None and (self._beta_cache[0] == t or self.beta.time_constant):
            return self._beta_cache[1]
        b = self.beta.sample(t, self.grid)
        self._beta_cache = (t, b)
        return b

    def convection_hat(self, u: np.ndarray, t: float):
        if not self.has_convection:
            return 0.0
        beta = self.velocity(t)
        acc = 0.0
        for j in range(self.grid.dim):
            acc = acc + self.deriv[j] * (self.rfft(beta[j] * u) * self.mask)
        return acc

    def chemical_potential(self, u: np.ndarray) -> np.ndarray:
        """mu = -lam Laplace(u) + B u + gamma_lam(u) + Pi(u), without the stabilization term."""
        lin = self.irfft((self.config.lam_visc * self.ksq + self.b) * self.rfft(u))
        return lin + self.split.nonlinearity(u, self.config.lam_gamma)

    def step(self, state: SimState) -> tuple[SimState, list[float]]:
        cfg = self.config
        dt = cfg.dt
        t1 = state.t + dt
        u = state.u.values
        uh = self.rfft(u)
        rhs = uh * (1.0 + dt * self.ksq * self.S)
        ustar = u
        history = []
        for _ in range(cfg.max_iter):
            nl_h = self.rfft(self.split.nonlinearity(ustar, cfg.lam_gamma))
            new_h = (rhs - dt * self.ksq * nl_h - dt * self.convection_hat(ustar, t1)) / self.denom
            new_h.flat[0] = uh.flat[0]
            unew = self.irfft(new_h)
            inc = np.linalg.norm(unew - ustar) / max(np.linalg.norm(unew), 1e-300)
            history.append(float(inc))
            ustar_used, ustar = ustar, unew
            if inc < cfg.fp_tol:
                break
        else:
            raise StepDiverged(
                f"fixed point did not reach {cfg.fp_tol:g} in {cfg.max_iter} iterations (S = {self.S:g}, dt = {dt:g})",
                history,
                state.step_index + 1,
            )
        nl_h = self.rfft(self.split.nonlinearity(ustar_used, cfg.lam_gamma))
        mu_h = self.A * new_h - self.S * uh + nl_h
        mu = self.irfft(mu_h)
        new_state = SimState(t1, ScalarField(self.grid, ustar), ScalarField(self.grid, mu), state.step_index + 1)
        return new_state, history

    # diagnostics helpers on rfft coefficients

    def power(self, vh) -> np.ndarray:
        return self.weights * np.abs(vh) ** 2

    def record(self, u: np.ndarray, mu: np.ndarray, t: float, u_prev: np.ndarray | None) -> DiagnosticsRecord:
        grid = self.grid
        cfg = self.config
        lam_g = cfg.lam_gamma
        uh = self.rfft(u)
        muh = self.rfft(mu)
        pu = self.power(uh)
        pmu = self.power(muh)
        ksq = self.ksq
        e_eps = 0.5 * float(np.sum(self.b * pu))
        grad_u_sq = float(np.sum(ksq * pu))
        pot = grid.cell_volume * float(np.sum(self.split.F_lambda(u, lam_g)))
        xi = self.split.xi(u, lam_g)
        if u_prev is None:
            dual_dtu = dtu_l2 = 0.0
        else:
            dth = (uh - self.rfft(u_prev)) / cfg.dt
            pd = self.power(dth)
            inv = np.zeros_like(ksq)
            np.divide(1.0, ksq, out=inv, where=ksq > 0)
            dual_dtu = math.sqrt(float(pd.flat[0] + np.sum(pd * inv)))
            dtu_l2 = math.sqrt(float(pd.sum()))
        return DiagnosticsRecord(
            t=float(t),
            mass=float(u.mean()),
            E_eps=e_eps,
            potential_energy=pot,
            lyapunov=e_eps + pot + 0.5 * cfg.lam_visc * grad_u_sq,
            grad_mu_l2=math.sqrt(float(np.sum(ksq * pmu))),
            u_l2=math.sqrt(float(pu.sum())),
            u_h1=math.sqrt(float(np.sum((1.0 + ksq) * pu))),
            dual_norm_dtu=dual_dtu,
            mu_mean=float(mu.mean()),
            gamma_l1=grid.cell_volume * float(np.sum(np.abs(xi))),
            dtu_l2=dtu_l2,
            mu_h1=math.sqrt(float(np.sum((1.0 + ksq) * pmu))),
            mu_h2=math.sqrt(float(np.sum((1.0 + ksq) ** 2 * pmu))),
            xi_l2=math.sqrt(grid.cell_volume * float(np.sum(xi**2))),
        )

    def weak_residual(self, u_prev: np.ndarray, new: SimState) -> float:
        """max over phi in {1, cos x1, sin x1} of the discrete weak-form defect."""
        grid = self.grid
        x1 = grid.coords()[0] * (2.0 * np.pi / grid.L)
        k1 = 2.0 * np.pi / grid.L
        dtu = (new.u.values - u_prev) / self.config.dt
        dmu = self.irfft(self.deriv[0] * self.rfft(new.mu.values))
        flux = self.velocity(new.t)[0] * new.u.values if self.has_convection else 0.0
        dv = grid.cell_volume
        worst = abs(dv * float(np.sum(dtu)))
        for phi, dphi in ((np.cos(x1), -k1 * np.sin(x1)), (np.sin(x1), k1 * np.cos(x1))):
            r = dv * float(np.sum(dtu * phi + dmu * dphi - flux * dphi))
            worst = max(worst, abs(r))
        return worst


def auto_stabilization(split: PotentialSplit, u: np.ndarray, lam: float) -> float:
    lo, hi = float(u.min()) - 0.1, float(u.max()) + 0.1
    return split.lipschitz_bound(lam, lo, hi)


def _resolve_symbol(model: Model, grid: TorusGrid) -> NonlocalSymbol:
    if isinstance(model, NonlocalSymbol):
        if model.grid != grid:
            raise ValueError("symbol grid does not match the field grid")
        return model
    if model == "local":
        return laplacian_symbol(grid)
    raise ValueError(f"model must be a NonlocalSymbol or 'local', got {model!r}")


def _check_config_for(split: PotentialSplit, config: SolverConfig):
    if config.lam_gamma == 0 and split.kind is not GraphKind.CUBIC:
        raise ConfigError("potential.lambda", f"the {split.kind.value} graph needs a positive Yosida parameter")


def _initial_S(config, split, u):
    if config.S == "auto":
        return auto_stabilization(split, u, config.lam_gamma)
    return float(config.S)


def initial_state(u0: ScalarField, stepper: Stepper) -> SimState:
    return SimState(0.0, u0, ScalarField(u0.grid, stepper.chemical_potential(u0.values)), 0)


def _step_with_retry(stepper: Stepper, state: SimState, allow_raise: bool = True):
    try:
        return stepper.step(state)
    except StepDiverged as exc:
        if not allow_raise:
            raise
        u = state.u.values
        raised = 2.0 * auto_stabilization(stepper.split, u, stepper.config.lam_gamma)
        if raised <= stepper.S:
            raise
        log.warning("step %d diverged; raising S from %g to %g", exc.step_index, stepper.S, raised)
        stepper.raise_stabilization(raised)
        return stepper.step(state)


def step_nonlocal(state: SimState, symbol: NonlocalSymbol, split: PotentialSplit, beta, config: SolverConfig) -> SimState:
    """One scheme step with the nonlocal operator given by ``symbol``."""
    _check_config_for(split, config)
    stepper = Stepper(symbol, split, beta, config, _initial_S(config, split, state.u.values))
    return _step_with_retry(stepper, state)[0]


def step_local(state: SimState, split: PotentialSplit, beta, config: SolverConfig) -> SimState:
    """Same scheme with B replaced by -Laplace (multiplier |k|^2)."""
    return step_nonlocal(state, laplacian_symbol(state.u.grid), split, beta, config)


class RunOutput:
    """Writes the diagnostics CSV and NLCHF1 snapshots of one run into ``directory``."""

    def __init__(self, directory, snapshot_every: int = 0, prefix: str = "run", snapshots: bool = True):
        self.directory = Path(directory)
        self.write_snapshots = snapshots
        self.directory.mkdir(parents=True, exist_ok=True)
        self.snapshot_every = snapshot_every
        self.prefix = prefix
        self.csv_path = self.directory / f"{prefix}_diagnostics.csv"
        self._fh = open(self.csv_path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(DIAGNOSTIC_COLUMNS)
        self.snapshots: list[Path] = []

    def record(self, rec: DiagnosticsRecord):
        self._writer.writerow([repr(v) for v in dataclasses.astuple(rec)])

    def snapshot(self, state: SimState, force: bool = False):
        if not self.write_snapshots:
            return
        if force or (self.snapshot_every > 0 and state.step_index % self.snapshot_every == 0):
            path = self.directory / f"{self.prefix}_u_{state.step_index:06d}.nlchf"
            write_snapshot(path, state.u, state.t)
            self.snapshots.append(path)

    def close(self):
        self._fh.flush()
        self._fh.close()


@dataclass
class RunSummary:
    diagnostics: list[DiagnosticsRecord]
    final: SimState
    S: float
    dt_times_S: float
    mass_drift: float
    max_weak_residual: float
    iterations: list[int]
    wall_time: float
    outside_scheme: bool
    times: np.ndarray | None = None
    trajectory: np.ndarray | None = None
    mu_trajectory: np.ndarray | None = None
    snapshots: list[Path] = field(default_factory=list)

    @property
    def final_lyapunov(self) -> float:
        return self.diagnostics[-1].lyapunov

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.diagnostics])


def run(
    initial: ScalarField,
    model: Model,
    split: PotentialSplit,
    beta: VelocityField | None,
    config: SolverConfig,
    sinks: RunOutput | None = None,
    keep_trajectory: bool = False,
    regularize: bool = True,
) -> RunSummary:
    """Regularize the initial datum, then step to T recording diagnostics every step."""
    _check_config_for(split, config)
    if config.outside_scheme:
        log.warning("lambda = 0 viscosity: run is outside the approximation scheme")
    grid = initial.grid
    symbol = _resolve_symbol(model, grid)
    u0 = regularize_initial(initial, config.lam_visc) if regularize else initial
    stepper = Stepper(symbol, split, beta, config, _initial_S(config, split, u0.values))
    state = initial_state(u0, stepper)
    start = time.perf_counter()
    records = [stepper.record(state.u.values, state.mu.values, 0.0, None)]
    traj = [state.u.values] if keep_trajectory else None
    mu_traj = [state.mu.values] if keep_trajectory else None
    iterations = []
    max_res = 0.0
    if sinks is not None:
        sinks.record(records[0])
        sinks.snapshot(state, force=True)
    try:
        for _ in range(config.n_steps):
            prev = state.u.values
            state, hist = _step_with_retry(stepper, state)
            iterations.append(len(hist))
            rec = stepper.record(state.u.values, state.mu.values, state.t, prev)
            records.append(rec)
            if config.residual_every and state.step_index % config.residual_every == 0:
                max_res = max(max_res, stepper.weak_residual(prev, state))
            if keep_trajectory:
                traj.append(state.u.values)
                mu_traj.append(state.mu.values)
            if sinks is not None:
                sinks.record(rec)
                sinks.snapshot(state)
    except StepDiverged:
        if sinks is not None:
            sinks.close()
        raise
    if sinks is not None:
        every = sinks.snapshot_every
        if state.step_index > 0 and (every <= 0 or state.step_index % every):
            sinks.snapshot(state, force=True)
        sinks.close()
    times = np.array([r.t for r in records])
    return RunSummary(
        diagnostics=records,
        final=state,
        S=stepper.S,
        dt_times_S=config.dt * stepper.S,
        mass_drift=max(abs(r.mass - records[0].mass) for r in records),
        max_weak_residual=max_res,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        outside_scheme=config.outside_scheme,
        times=times if keep_trajectory else None,
        trajectory=np.stack(traj) if keep_trajectory else None,
        mu_trajectory=np.stack(mu_traj) if keep_trajectory else None,
        snapshots=list(sinks.snapshots) if sinks is not None else [],
    )

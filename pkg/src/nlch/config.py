"""Run configuration: TOML schema, physical validation and object construction."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .dynamics import SolverConfig
from .errors import ConfigError
from .kernel import build_kernel, build_symbol, laplacian_symbol
from .potential import preset
from .recipes import initial_field, velocity_field
from .study import STUDY_KINDS, StudySpec
from .torus import TWO_PI, TorusGrid


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GridSection(_Section):
    dim: Literal[2, 3] = 2
    n: int = Field(64, ge=4)
    L: float = Field(TWO_PI, gt=0)


class KernelSection(_Section):
    family: Literal["smooth_bump", "step"] = "smooth_bump"
    eps: float = Field(0.2, gt=0)
    method: Literal["radial", "lattice"] = "radial"
    normalization: Literal["bbm", "half_moment"] = "bbm"


class PotentialSection(_Section):
    kind: Literal["cubic", "logarithmic", "obstacle"] = "cubic"
    theta: float = Field(0.3, gt=0)
    theta_c: float = Field(1.0, gt=0)
    c: Optional[float] = Field(None, gt=0)
    lambda_: float = Field(1e-2, ge=0, alias="lambda")
    lambda_yosida: Optional[float] = Field(None, ge=0)


class VelocitySection(_Section):
    recipe: Literal["zero", "shear", "pulsating", "white", "uniform"] = "zero"
    amplitude: float = 1.0
    mode: int = 1
    axis: int = Field(0, ge=0, le=2)
    modulation: float = 0.5
    period: float = Field(0.5, gt=0)
    tau: float = Field(1e-3, gt=0)
    components: Optional[list[float]] = None
    bound: Optional[float] = Field(None, ge=0)


class SolverSection(_Section):
    model: Literal["nonlocal", "local"] = "nonlocal"
    dt: float = 1e-3
    T: float = 0.5
    S: Union[float, Literal["auto"]] = "auto"
    fp_tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(200, ge=1)
    mean_tol: float = Field(1e-10, gt=0)
    snapshot_every: int = Field(0, ge=0)
    residual_every: int = Field(10, ge=0)


class ModeTerm(_Section):
    amplitude: float
    modes: list[int]
    shape: Literal["cos", "sin"] = "cos"


class InitialSection(_Section):
    recipe: Literal["modes", "random", "file"] = "modes"
    mean: float = 0.0
    terms: list[ModeTerm] = []
    amplitude: float = 0.01
    seed: int = 0
    path: Optional[str] = None


class OutputSection(_Section):
    directory: str = "out"
    formats: list[Literal["csv", "snapshot"]] = ["csv", "snapshot"]


class StudySection(_Section):
    eps: list[float] = [0.8, 0.4, 0.2, 0.1, 0.05]
    lambdas: list[float] = [1e-1, 1e-2, 1e-3]
    scales: list[float] = [1.0, 0.5, 0.25]
    perturbation: Literal["initial", "velocity"] = "initial"
    initial_perturbation: list[ModeTerm] = []
    velocity_perturbation: Optional[VelocitySection] = None
    workers: Optional[int] = Field(None, ge=1)


class BBMSection(_Section):
    eps: list[float] = [0.8, 0.4, 0.2, 0.1]
    threshold: float = Field(0.05, gt=0)


class RunConfig(_Section):
    grid: GridSection = GridSection()
    kernel: KernelSection = KernelSection()
    potential: PotentialSection = PotentialSection()
    velocity: VelocitySection = VelocitySection()
    solver: SolverSection = SolverSection()
    initial: InitialSection = InitialSection()
    output: OutputSection = OutputSection()
    study: StudySection = StudySection()
    bbm: BBMSection = BBMSection()


def _key(loc) -> str:
    return ".".join(str(p) for p in loc)


def parse_config(data: dict) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_key(err["loc"]) or "<root>", err["msg"]) from None
    check_physics(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"malformed TOML: {exc}") from None
    cfg = parse_config(data)
    if cfg.initial.recipe == "file" and cfg.initial.path and not Path(cfg.initial.path).is_absolute():
        cfg.initial.path = str((path.parent / cfg.initial.path).resolve())
    return cfg


def check_physics(cfg: RunConfig) -> None:
    """Cross-field constraints with the offending key in every message."""
    g, k, s = cfg.grid, cfg.kernel, cfg.solver
    if g.n % 2:
        raise ConfigError("grid.n", f"points per axis must be even, got {g.n}")
    if k.eps >= g.L / 2:
        raise ConfigError("kernel.eps", f"eps = {k.eps} must be smaller than L/2 = {g.L / 2:.6g}")
    if not s.dt > 0:
        raise ConfigError("solver.dt", "must be positive")
    if s.T < 0:
        raise ConfigError("solver.T", "must be nonnegative")
    if abs(s.T / s.dt - round(s.T / s.dt)) > 1e-9 * max(1.0, s.T / s.dt):
        raise ConfigError("solver.T", f"T = {s.T} is not an integer multiple of dt = {s.dt}")
    p = cfg.potential
    if p.kind != "cubic" and (p.lambda_yosida if p.lambda_yosida is not None else p.lambda_) == 0:
        raise ConfigError("potential.lambda", f"the {p.kind} potential needs a positive Yosida parameter")
    if isinstance(s.S, float) and s.S < 0:
        raise ConfigError("solver.S", "must be nonnegative")
    if "csv" not in cfg.output.formats:
        raise ConfigError("output.formats", "diagnostics CSV is always written; list must include 'csv'")
    if cfg.initial.recipe == "file" and not cfg.initial.path:
        raise ConfigError("initial.path", "file recipe needs a path")
    for term in cfg.initial.terms + cfg.study.initial_perturbation:
        if len(term.modes) != g.dim:
            raise ConfigError("initial.terms", f"mode vector {term.modes} needs {g.dim} entries")
    if cfg.velocity.axis >= g.dim:
        raise ConfigError("velocity.axis", f"axis must be < {g.dim}")
    for name in ("eps", "lambdas", "scales"):
        seq = getattr(cfg.study, name)
        if any(b >= a for a, b in zip(seq, seq[1:])) or any(v <= 0 for v in seq):
            raise ConfigError(f"study.{name}", f"must be positive and strictly decreasing, got {seq}")
    if any(e >= g.L / 2 for e in cfg.study.eps):
        raise ConfigError("study.eps", f"all eps must be smaller than L/2 = {g.L / 2:.6g}")
    if any(e >= g.L / 2 or e <= 0 for e in cfg.bbm.eps):
        raise ConfigError("bbm.eps", "all eps must lie in (0, L/2)")


def build_grid(cfg: RunConfig) -> TorusGrid:
    return TorusGrid(cfg.grid.dim, cfg.grid.n, cfg.grid.L)


def build_potential(cfg: RunConfig):
    p = cfg.potential
    return preset(p.kind, theta=p.theta, theta_c=p.theta_c, c=p.c)


def build_solver(cfg: RunConfig) -> SolverConfig:
    s, p = cfg.solver, cfg.potential
    return SolverConfig(
        dt=s.dt,
        T=s.T,
        lam=p.lambda_,
        lam_yosida=p.lambda_yosida,
        S=s.S,
        fp_tol=s.fp_tol,
        max_iter=s.max_iter,
        mean_tol=s.mean_tol,
        snapshot_every=s.snapshot_every,
        residual_every=s.residual_every,
    )


def build_initial(cfg: RunConfig, seed: int | None = None):
    grid = build_grid(cfg)
    i = cfg.initial
    field = initial_field(
        grid,
        i.recipe,
        seed=i.seed if seed is None else seed,
        mean=i.mean,
        terms=[t.model_dump() for t in i.terms],
        amplitude=i.amplitude,
        path=i.path,
    )
    m = field.mean()
    if cfg.potential.kind != "cubic" and not abs(m) < 1.0:
        raise ConfigError("initial.mean", f"mean {m:.6g} must lie inside (-1, 1) for the {cfg.potential.kind} potential")
    return field


def _velocity(section: VelocitySection, dim: int, L: float, seed: int, key: str):
    v = section
    params = v.model_dump(exclude={"recipe", "bound", "components"})
    if v.components is not None:
        params["components"] = v.components
    try:
        beta = velocity_field(dim, v.recipe, seed=seed, L=L, **params)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    if v.bound is not None:
        if v.bound < beta.bound:
            raise ConfigError(f"{key}.bound", f"certified bound {v.bound} is below the recipe's sup {beta.bound:.6g}")
        beta = type(beta)(beta.evaluator, v.bound, beta.divergence_free, beta.time_constant, beta.name)
    return beta


def build_velocity(cfg: RunConfig, seed: int | None = None):
    seed = cfg.initial.seed if seed is None else seed
    return _velocity(cfg.velocity, cfg.grid.dim, cfg.grid.L, seed, "velocity")


def build_model(cfg: RunConfig, eps: float | None = None):
    grid = build_grid(cfg)
    if cfg.solver.model == "local":
        return laplacian_symbol(grid)
    k = cfg.kernel
    kern = build_kernel(k.family, k.eps if eps is None else eps, grid.dim, grid.L, k.normalization)
    return build_symbol(kern, grid, k.method)


STUDY_COMMANDS = {
    "study-eps": "eps_to_zero",
    "study-lambda": "lambda_to_zero",
    "depcheck": "continuous_dependence",
    "study-regularity": "regularity",
}


def build_study_spec(cfg: RunConfig, kind: str, seed: int | None = None) -> StudySpec:
    kind = STUDY_COMMANDS.get(kind, kind)
    if kind not in STUDY_KINDS:
        raise ConfigError("study.kind", f"unknown study kind {kind!r}")
    st = cfg.study
    grid = build_grid(cfg)
    params = {
        "eps_to_zero": st.eps,
        "lambda_to_zero": st.lambdas,
        "continuous_dependence": st.scales,
        "regularity": st.eps,
    }[kind]
    init_pert = vel_pert = None
    if kind == "continuous_dependence":
        if st.perturbation == "initial":
            from .recipes import modes_field

            if not st.initial_perturbation:
                raise ConfigError("study.initial_perturbation", "needs at least one mode term")
            init_pert = modes_field(grid, 0.0, [t.model_dump() for t in st.initial_perturbation])
            if abs(init_pert.mean()) > cfg.solver.mean_tol:
                raise ConfigError("study.initial_perturbation", "perturbation must have mean zero (equal means required)")
        else:
            if st.velocity_perturbation is None:
                raise ConfigError("study.velocity_perturbation", "needs a velocity recipe")
            vel_pert = _velocity(st.velocity_perturbation, grid.dim, grid.L, cfg.initial.seed, "study.velocity_perturbation")
    return StudySpec(
        kind=kind,
        params=tuple(float(p) for p in params),
        solver=build_solver(cfg),
        potential=build_potential(cfg),
        initial=build_initial(cfg, seed),
        beta=build_velocity(cfg, seed),
        eps=cfg.kernel.eps,
        family=cfg.kernel.family,
        symbol_method=cfg.kernel.method,
        normalization=cfg.kernel.normalization,
        initial_perturbation=init_pert,
        velocity_perturbation=vel_pert,
        workers=st.workers,
    )


def resolved_dict(cfg: RunConfig, seed: int | None = None) -> dict:
    data = cfg.model_dump(by_alias=True)
    if seed is not None:
        data["initial"]["seed"] = seed
    return data

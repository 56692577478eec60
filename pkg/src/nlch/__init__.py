"""Pseudospectral simulator for the nonlocal convective Cahn-Hilliard equation on the flat torus."""

from .dynamics import DiagnosticsRecord, RunOutput, RunSummary, SimState, SolverConfig, run, step_local, step_nonlocal
from .errors import (
    ConfigError,
    ConvergenceFailure,
    DomainViolation,
    GridMismatch,
    KernelTooWide,
    MeanNotZero,
    NLCHError,
    StepDiverged,
    SymbolNegativity,
    UnderResolved,
)
from .kernel import MollifierFamily, MollifierKernel, NonlocalSymbol, bbm_check, build_kernel, build_symbol, laplacian_symbol
from .potential import GraphKind, MonotoneGraph, PotentialSplit, preset, resolvent, yosida, yosida_primitive
from .study import StudyReport, StudySpec, run_study
from .torus import ScalarField, TorusGrid, VelocityField, read_snapshot, write_snapshot

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""Periodic grids, scalar fields and spectral calculus on the flat torus [0, L)^d.

Spectral coefficients use the L2-unitary convention

    v_hat(k) = |Omega|^{-1/2} * integral of v(x) exp(-i k.x) dx,

so that ``sum |v_hat|^2 == ||v||_{L2}^2`` exactly (Parseval). With a
rectangle-rule quadrature this is ``sqrt(h^d) * fftn(v, norm="ortho")``.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import GridMismatch, MeanNotZero

TWO_PI = 2.0 * np.pi
SNAPSHOT_MAGIC = b"NLCHF1"
_SNAPSHOT_HEADER = struct.Struct("<6sIIdd")


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic lattice with ``n`` points per axis on a cubic torus of side ``L``."""

    dim: int
    n: int
    L: float = TWO_PI

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"points per axis must be even and >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"extent L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def half_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def volume(self) -> float:
        return self.L**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def coords(self) -> list[np.ndarray]:
        """Broadcastable physical coordinates, one array per axis."""
        x = np.arange(self.n) * self.h
        return [x.reshape(_axis_shape(ax, self.dim)) for ax in range(self.dim)]

    def mesh(self) -> np.ndarray:
        """Full coordinate array of shape (dim, n, ..., n)."""
        return np.stack(np.broadcast_arrays(*self.coords()))

    def wave_indices(self, half: bool = False) -> list[np.ndarray]:
        """Integer mode indices m in [-n/2, n/2) per axis, broadcastable."""
        return [_mode_index(self.n, half and ax == self.dim - 1, ax, self.dim) for ax in range(self.dim)]

    def wavevector(self, half: bool = False) -> list[np.ndarray]:
        scale = TWO_PI / self.L
        return [scale * m for m in self.wave_indices(half)]

    def ksq(self, half: bool = False) -> np.ndarray:
        return _ksq(self, half)

    def derivative_multipliers(self, half: bool = False) -> list[np.ndarray]:
        """i*k_j per axis with the Nyquist mode zeroed."""
        out = []
        for m, k in zip(self.wave_indices(half), self.wavevector(half)):
            out.append(np.where(m == -self.n // 2, 0.0, k) * 1j)
        return out

    def dealias_mask(self, half: bool = False) -> np.ndarray:
        """2/3-rule mask: keep modes with |m_j| < n/3 on every axis."""
        keep = np.ones((1,) * self.dim, dtype=bool)
        for m in self.wave_indices(half):
            keep = keep & (np.abs(m) < self.n / 3.0)
        return keep


def _axis_shape(ax, dim):
    shape = [1] * dim
    shape[ax] = -1
    return shape


def _mode_index(n, half, ax, dim):
    m = np.arange(n // 2 + 1) if half else np.fft.fftfreq(n, 1.0 / n)
    if half:
        # rfft keeps m = n/2 as the last entry; label it -n/2 like the full layout
        m = m.astype(float)
        m[-1] = -n // 2
    return np.asarray(m, dtype=float).reshape(_axis_shape(ax, dim))


@functools.lru_cache(maxsize=32)
def _ksq(grid: TorusGrid, half: bool) -> np.ndarray:
    ksq = sum(k**2 for k in grid.wavevector(half))
    ksq = np.broadcast_to(ksq, grid.half_shape if half else grid.shape).copy()
    ksq.setflags(write=False)
    return ksq


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real grid function. ``values`` is row-major over ``grid.shape``."""

    grid: TorusGrid
    values: np.ndarray
    _spectral: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridMismatch(f"values shape {values.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        vals = np.broadcast_to(fn(*grid.coords()), grid.shape)
        return cls(grid, np.array(vals, dtype=float))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_spectral(cls, grid: TorusGrid, coeffs: np.ndarray) -> "ScalarField":
        coeffs = np.asarray(coeffs, dtype=complex)
        vals = np.fft.ifftn(coeffs, norm="ortho").real / np.sqrt(grid.cell_volume)
        return cls(grid, vals)

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            _check_finite(self.values)
            coeffs = np.sqrt(self.grid.cell_volume) * np.fft.fftn(self.values, norm="ortho")
            object.__setattr__(self, "_spectral", coeffs)
        return self._spectral

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other, self.grid))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other, self.grid))

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * _vals(c, self.grid))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def _vals(other, grid):
    if isinstance(other, ScalarField):
        if other.grid != grid:
            raise GridMismatch("fields live on different grids")
        return other.values
    return other


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite values")


def transform(field: ScalarField | np.ndarray, direction: str = "forward", grid: TorusGrid | None = None):
    """Forward: field -> unitary coefficients. Inverse: coefficients (with ``grid``) -> field."""
    if direction == "forward":
        return field.spectral
    if direction == "inverse":
        if grid is None:
            raise ValueError("inverse transform needs the target grid")
        _check_finite(np.asarray(field))
        return ScalarField.from_spectral(grid, field)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def irfft_real(coeffs: np.ndarray, shape) -> np.ndarray:
    """Inverse of ``np.fft.rfftn`` over all axes of ``shape``."""
    return np.fft.irfftn(coeffs, s=shape, axes=tuple(range(len(shape))))


def _apply_multiplier(field: ScalarField, mult) -> ScalarField:
    vals = irfft_real(np.fft.rfftn(field.values) * mult, field.grid.shape)
    return ScalarField(field.grid, vals)


def gradient(field: ScalarField) -> list[ScalarField]:
    _check_finite(field.values)
    spec = np.fft.rfftn(field.values)
    return [
        ScalarField(field.grid, irfft_real(spec * d, field.grid.shape))
        for d in field.grid.derivative_multipliers(half=True)
    ]


def divergence(components: list[ScalarField]) -> ScalarField:
    grid = components[0].grid
    if len(components) != grid.dim:
        raise GridMismatch(f"expected {grid.dim} components, got {len(components)}")
    acc = 0
    for c, d in zip(components, grid.derivative_multipliers(half=True)):
        acc = acc + np.fft.rfftn(_vals(c, grid)) * d
    return ScalarField(grid, irfft_real(acc, grid.shape))


def laplacian(field: ScalarField) -> ScalarField:
    _check_finite(field.values)
    return _apply_multiplier(field, -field.grid.ksq(half=True))


def inverse_laplacian(field: ScalarField, mean_tol: float = 1e-10) -> ScalarField:
    """Mean-zero solution w of -Laplace(w) = field."""
    m = field.mean()
    if abs(m) > mean_tol:
        raise MeanNotZero(f"inverse Laplacian needs a mean-zero field, mean = {m:.3e}")
    ksq = field.grid.ksq(half=True)
    inv = np.zeros_like(ksq)
    np.divide(1.0, ksq, out=inv, where=ksq > 0)
    return _apply_multiplier(field, inv)


class Norms(NamedTuple):
    l2: float
    h1_semi: float
    mean: float
    dual: float


def norms(field: ScalarField) -> Norms:
    """L2, H1 seminorm, mean and the spectral dual norm

    dual^2 = |Omega| mean^2 + sum_{k != 0} |v_hat_k|^2 / |k|^2.
    """
    p = np.abs(field.spectral) ** 2
    ksq = field.grid.ksq()
    inv = np.zeros_like(ksq)
    np.divide(1.0, ksq, out=inv, where=ksq > 0)
    return Norms(
        l2=float(np.sqrt(p.sum())),
        h1_semi=float(np.sqrt((p * ksq).sum())),
        mean=field.mean(),
        dual=float(np.sqrt(p.flat[0] + (p * inv).sum())),
    )


def sobolev_norm(field: ScalarField, s: float) -> float:
    """Full H^s norm with weights (1 + |k|^2)^s."""
    p = np.abs(field.spectral) ** 2
    return float(np.sqrt((p * (1.0 + field.grid.ksq()) ** s).sum()))


def physical_l2(field: ScalarField) -> float:
    """Rectangle-rule L2 norm, independent of the transform."""
    return float(np.sqrt(field.grid.cell_volume * np.sum(field.values**2)))


def integrate(values: np.ndarray, grid: TorusGrid) -> float:
    return float(grid.cell_volume * np.sum(values))


@dataclass(frozen=True)
class VelocityField:
    """Prescribed transport velocity beta(t, x).

    ``evaluator(t, coords)`` receives the broadcastable coordinate arrays of a grid
    and returns ``dim`` component arrays. ``bound`` certifies sup_x |beta(t, .)|
    for every t, which caps the L2(0,T;L^inf) norm by ``bound * sqrt(T)``.
    """

    evaluator: Callable[[float, list[np.ndarray]], object]
    bound: float
    divergence_free: bool = False
    time_constant: bool = False
    name: str = "custom"

    def sample(self, t: float, grid: TorusGrid) -> np.ndarray:
        comps = self.evaluator(t, grid.coords())
        out = np.empty((grid.dim,) + grid.shape)
        for j, c in enumerate(comps):
            out[j] = np.broadcast_to(c, grid.shape)
        return out

    def check_bound(self, t: float, grid: TorusGrid, slack: float = 1e-10) -> float:
        sup = float(np.sqrt((self.sample(t, grid) ** 2).sum(axis=0)).max())
        if sup > self.bound + slack:
            raise ValueError(f"sampled |beta| = {sup} exceeds certified bound {self.bound}")
        return sup


def zero_velocity(dim: int) -> VelocityField:
    return VelocityField(lambda t, x: [0.0] * dim, 0.0, divergence_free=True, time_constant=True, name="zero")


def write_snapshot(path, field: ScalarField, t: float) -> None:
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, g.dim, g.n, float(g.L), float(t)))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[ScalarField, float]:
    raw = Path(path).read_bytes()
    magic, dim, n, L, t = _SNAPSHOT_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an NLCHF1 snapshot")
    grid = TorusGrid(dim, n, L)
    vals = np.frombuffer(raw, dtype="<f8", offset=_SNAPSHOT_HEADER.size)
    if vals.size != n**dim:
        raise ValueError(f"{path}: payload has {vals.size} values, expected {n ** dim}")
    return ScalarField(grid, vals.reshape(grid.shape).astype(float)), t

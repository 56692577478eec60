"""Radial mollifier kernels, the nonlocal operator B_eps and the nonlocal energy.

The kernel is K_eps(z) = rho_eps(|z|) / |z|^2 with rho_eps(r) = C_eps * w(r / eps).
B_eps v = (K_eps * 1) v - K_eps * v is diagonal in Fourier on the torus, with symbol

    b(k) = integral over the torus of rho_eps(|z|) (1 - cos(k.z)) / |z|^2 dz,

which is real, even, nonnegative and vanishes at k = 0.
"""

from __future__ import annotations

import csv
import enum
import functools
import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .errors import GridMismatch, KernelTooWide, SymbolNegativity
from .torus import TWO_PI, ScalarField, TorusGrid, irfft_real

NEGATIVITY_TOL = 1e-12


class MollifierFamily(str, enum.Enum):
    SMOOTH_BUMP = "smooth_bump"
    STEP = "step"

    def profile(self, s):
        """Profile w on [0, 1], zero outside."""
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        if self is MollifierFamily.STEP:
            out[(s >= 0) & (s <= 1)] = 1.0
        else:
            inside = (s >= 0) & (s < 1)
            out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
        return out

    @functools.lru_cache(maxsize=8)
    def moment(self, dim: int) -> float:
        """integral_0^1 w(s) s^(dim-1) ds."""
        if self is MollifierFamily.STEP:
            return 1.0 / dim
        val, _ = integrate.quad(
            lambda s: np.exp(-1.0 / (1.0 - s * s)) * s ** (dim - 1), 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200
        )
        return val


def sphere_moment(dim: int) -> float:
    """M_d = integral over the unit sphere of |e_1 . sigma|^2, i.e. |S^{d-1}| / d."""
    if dim == 2:
        return np.pi
    if dim == 3:
        return 4.0 * np.pi / 3.0
    raise ValueError(f"unsupported dimension {dim}")


# Target of integral_0^inf rho_eps(r) r^{d-1} dr. "bbm" makes b(k)/|k|^2 -> 1 and
# E_eps(v) -> 1/2 ||grad v||^2; "half_moment" uses 1/(2 M_d), whose limits are a quarter of those.
NORMALIZATIONS = {"bbm": lambda md: 2.0 / md, "half_moment": lambda md: 1.0 / (2.0 * md)}


@dataclass(frozen=True)
class MollifierKernel:
    family: MollifierFamily
    eps: float
    dim: int
    norm_const: float
    m_d: float
    normalization: str = "bbm"

    @property
    def radial_mass(self) -> float:
        return NORMALIZATIONS[self.normalization](self.m_d)

    def rho(self, r):
        return self.norm_const * self.family.profile(np.asarray(r, dtype=float) / self.eps)

    def rho_at_zero(self) -> float:
        return float(self.rho(0.0))

    def normalization_residual(self) -> float:
        """Relative defect of the radial normalization, by adaptive quadrature."""
        f = lambda r: float(self.rho(r)) * r ** (self.dim - 1)
        val, _ = integrate.quad(f, 0.0, self.eps, epsabs=0.0, epsrel=1e-13, limit=200)
        return abs(val - self.radial_mass) / self.radial_mass

    def limit_ratio(self) -> float:
        """lim_{eps->0} b(k)/|k|^2 implied by the normalization."""
        return self.radial_mass * self.m_d / 2.0


def build_kernel(family, eps: float, dim: int, grid_extent: float = TWO_PI, normalization: str = "bbm") -> MollifierKernel:
    family = MollifierFamily(family)
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if eps >= grid_extent / 2:
        raise KernelTooWide(f"eps = {eps} must be smaller than L/2 = {grid_extent / 2}")
    m_d = sphere_moment(dim)
    mass = NORMALIZATIONS[normalization](m_d)
    c = mass / (eps**dim * family.moment(dim))
    return MollifierKernel(family, float(eps), dim, c, m_d, normalization)


@dataclass(frozen=True, eq=False)
class NonlocalSymbol:
    """Fourier multiplier of B_eps on ``grid``; ``b_hat`` uses the full fftn layout."""

    grid: TorusGrid
    kernel: MollifierKernel | None
    b_hat: np.ndarray
    method: str

    @property
    def half(self) -> np.ndarray:
        """The rfftn-layout view used by the time steppers."""
        return self.b_hat[..., : self.grid.n // 2 + 1]

    @property
    def kernel_id(self) -> str:
        if self.kernel is None:
            return "laplacian"
        k = self.kernel
        return f"{k.family.value}:eps={k.eps!r}:d={k.dim}:{k.normalization}:{self.method}"


def laplacian_symbol(grid: TorusGrid) -> NonlocalSymbol:
    """|k|^2, the local limit of B_eps."""
    return NonlocalSymbol(grid, None, np.array(grid.ksq()), "laplacian")


def resolution_floor(grid: TorusGrid, method: str) -> float:
    """Smallest eps the symbol construction resolves on ``grid``."""
    return 4.0 * grid.h if method == "lattice" else 0.0


@functools.lru_cache(maxsize=64)
def build_symbol(kernel: MollifierKernel, grid: TorusGrid, method: str = "radial") -> NonlocalSymbol:
    """Build and cache the symbol of B_eps.

    ``radial`` integrates the continuum symbol exactly in the radial variable
    (the support ball fits the minimal-image cell, so the torus integral is the
    whole-space one). ``lattice`` sums the kernel over the computational lattice
    (z != 0); it is the exact multiplier of the discrete double-sum operator.
    """
    if kernel.dim != grid.dim:
        raise GridMismatch(f"kernel is {kernel.dim}-d, grid is {grid.dim}-d")
    if kernel.eps >= grid.L / 2:
        raise KernelTooWide(f"eps = {kernel.eps} must be smaller than L/2 = {grid.L / 2}")
    if method == "radial":
        b = _radial_symbol(kernel, grid)
    elif method == "lattice":
        b = _lattice_symbol(kernel, grid)
    else:
        raise ValueError(f"unknown symbol method {method!r}")
    worst = b.min()
    if worst < -NEGATIVITY_TOL:
        raise SymbolNegativity(f"symbol reaches {worst:.3e} < -{NEGATIVITY_TOL}")
    b = np.maximum(b, 0.0)
    b.flat[0] = 0.0
    b.setflags(write=False)
    return NonlocalSymbol(grid, kernel, b, method)


def _radial_symbol(kernel, grid):
    ksq = grid.ksq()
    uniq, inverse = np.unique(ksq, return_inverse=True)
    kabs = np.sqrt(uniq)
    eps = kernel.eps
    n_nodes = 256 + int(4 * kabs.max() * eps)
    x, wts = np.polynomial.legendre.leggauss(n_nodes)
    r = 0.5 * eps * (x + 1.0)
    wts = 0.5 * eps * wts
    rho = kernel.rho(r)
    kr = np.outer(kabs, r)
    if kernel.dim == 2:
        # integral over the circle of (1 - cos(k r cos t)) = 2 pi (1 - J0(k r))
        vals = (TWO_PI * (1.0 - special.j0(kr))) @ (wts * rho / r)
    else:
        vals = (2.0 * TWO_PI * (1.0 - np.sinc(kr / np.pi))) @ (wts * rho)
    return vals[inverse].reshape(grid.shape)


def lattice_weights(kernel: MollifierKernel, grid: TorusGrid) -> np.ndarray:
    """h^d rho(|z|)/|z|^2 on minimal-image lattice offsets, zero at z = 0."""
    z = [grid.h * m for m in grid.wave_indices()]
    r = np.sqrt(sum(zz**2 for zz in z))
    r = np.broadcast_to(r, grid.shape)
    w = np.zeros(grid.shape)
    nz = r > 0
    w[nz] = kernel.rho(r[nz]) / r[nz] ** 2 * grid.cell_volume
    return w


def _lattice_symbol(kernel, grid):
    w = lattice_weights(kernel, grid)
    return w.sum() - np.fft.fftn(w).real


def _check_grid(symbol, field):
    if symbol.grid != field.grid:
        raise GridMismatch("symbol and field live on different grids")


def apply_B(symbol: NonlocalSymbol, field: ScalarField) -> ScalarField:
    _check_grid(symbol, field)
    vals = irfft_real(np.fft.rfftn(field.values) * symbol.half, field.grid.shape)
    return ScalarField(field.grid, vals)


def nonlocal_energy(symbol: NonlocalSymbol, field: ScalarField) -> float:
    """E_eps(v) = 1/2 <B_eps v, v> = 1/2 sum_k b(k) |v_hat_k|^2."""
    _check_grid(symbol, field)
    return 0.5 * float(np.sum(symbol.b_hat * np.abs(field.spectral) ** 2))


class BBMRow(NamedTuple):
    eps: float
    energy: float
    target: float
    gap: float
    resolved: bool


def spectral_tail_fraction(field: ScalarField) -> float:
    """Share of L2 energy carried by modes with max|m_j| >= n/4."""
    p = np.abs(field.spectral) ** 2
    outer = np.zeros(field.grid.shape, dtype=bool)
    for m in field.grid.wave_indices():
        outer = outer | (np.abs(m) >= field.grid.n / 4)
    total = p.sum()
    return float(p[outer].sum() / total) if total > 0 else 0.0


def bbm_check(
    field: ScalarField,
    eps_sequence,
    family="smooth_bump",
    method: str = "radial",
    normalization: str = "bbm",
    tail_tol: float = 1e-8,
) -> list[BBMRow]:
    """Compare E_eps(v) with 1/2 ||grad v||^2 along ``eps_sequence``."""
    tail = spectral_tail_fraction(field)
    if tail > tail_tol:
        raise ValueError(f"field is not resolved: spectral tail fraction {tail:.2e} > {tail_tol:.0e}")
    grid = field.grid
    target = 0.5 * float(np.sum(grid.ksq() * np.abs(field.spectral) ** 2))
    floor = resolution_floor(grid, method)
    rows = []
    for eps in eps_sequence:
        kern = build_kernel(family, eps, grid.dim, grid.L, normalization)
        energy = nonlocal_energy(build_symbol(kern, grid, method), field)
        gap = abs(energy - target) / target if target > 0 else abs(energy - target)
        rows.append(BBMRow(float(eps), energy, target, gap, eps >= floor))
    return rows


def bbm_trend_ok(rows: list[BBMRow], threshold: float) -> bool:
    """Gaps strictly decrease over the resolved rows and the last resolved gap is below ``threshold``."""
    resolved = [r for r in rows if r.resolved]
    if not resolved:
        return False
    gaps = [r.gap for r in resolved]
    if all(g == 0 for g in gaps):
        return True
    return all(b < a for a, b in zip(gaps, gaps[1:])) and gaps[-1] < threshold


def dump_symbol(symbol: NonlocalSymbol, path) -> None:
    grid = symbol.grid
    header = [f"k_index_{ax}" for ax in range(grid.dim)] + ["b_hat"]
    mods = np.fft.fftfreq(grid.n, 1.0 / grid.n).astype(int)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx in itertools.product(range(grid.n), repeat=grid.dim):
            writer.writerow([mods[i] for i in idx] + [repr(float(symbol.b_hat[idx]))])

"""Double-well potentials F = gamma_hat + Pi_hat and Yosida regularization of the convex part.

``gamma`` is a maximal monotone graph with 0 in gamma(0). For lambda > 0 the
resolvent J_lambda = (I + lambda gamma)^{-1} and the Yosida approximation
gamma_lambda = (I - J_lambda) / lambda are single valued, monotone and
1/lambda-Lipschitz. The primitive of gamma_lambda is the Moreau envelope

    gamma_hat_lambda(s) = gamma_hat(J_lambda s) + (s - J_lambda s)^2 / (2 lambda).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceFailure, DomainViolation
from .torus import ScalarField, integrate

_LOG_CLAMP = 1e-12
_MAX_ITER = 200


class GraphKind(str, enum.Enum):
    CUBIC = "cubic"
    LOGARITHMIC = "logarithmic"
    OBSTACLE = "obstacle"


@dataclass(frozen=True)
class MonotoneGraph:
    kind: GraphKind
    theta: float = 0.3

    @property
    def domain(self) -> tuple[float, float]:
        return (-np.inf, np.inf) if self.kind is GraphKind.CUBIC else (-1.0, 1.0)

    def in_domain(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind is GraphKind.CUBIC:
            return np.isfinite(s)
        if self.kind is GraphKind.LOGARITHMIC:
            return np.abs(s) < 1.0
        return np.abs(s) <= 1.0

    def gamma(self, s) -> np.ndarray:
        """Minimal section of gamma; DomainViolation outside D(gamma)."""
        s = np.asarray(s, dtype=float)
        if self.kind is GraphKind.CUBIC:
            return s**3
        if not np.all(self.in_domain(s)):
            raise DomainViolation(f"{self.kind.value} graph evaluated outside its domain")
        if self.kind is GraphKind.LOGARITHMIC:
            return 0.5 * self.theta * (np.log1p(s) - np.log1p(-s))
        return np.zeros_like(s)

    def primitive(self, s) -> np.ndarray:
        """gamma_hat, +inf outside the effective domain."""
        s = np.asarray(s, dtype=float)
        if self.kind is GraphKind.CUBIC:
            return 0.25 * s**4
        if self.kind is GraphKind.OBSTACLE:
            return np.where(np.abs(s) <= 1.0, 0.0, np.inf)
        inside = np.abs(s) <= 1.0
        sc = np.clip(s, -1.0, 1.0)
        val = 0.5 * self.theta * (special.xlogy(1 + sc, 1 + sc) + special.xlogy(1 - sc, 1 - sc))
        return np.where(inside, val, np.inf)


@dataclass(frozen=True)
class LipschitzPart:
    """Pi(s) = -slope * s with primitive -slope * s^2 / 2."""

    slope: float

    @property
    def lipschitz_const(self) -> float:
        return abs(self.slope)

    def __call__(self, s):
        return -self.slope * np.asarray(s, dtype=float)

    def primitive(self, s):
        return -0.5 * self.slope * np.asarray(s, dtype=float) ** 2


@dataclass(frozen=True)
class PotentialSplit:
    graph: MonotoneGraph
    lip: LipschitzPart
    offset: float

    @property
    def kind(self) -> GraphKind:
        return self.graph.kind

    def F(self, s):
        return self.graph.primitive(s) + self.lip.primitive(s) + self.offset

    def F_lambda(self, s, lam: float):
        if lam == 0:
            return self.F(s)
        return yosida_primitive(self.graph, lam, s) + self.lip.primitive(s) + self.offset

    def xi(self, s, lam: float):
        """Selection of gamma used by the solver: gamma_lambda, or gamma itself at lam = 0."""
        return self.graph.gamma(s) if lam == 0 else yosida(self.graph, lam, s)

    def nonlinearity(self, s, lam: float):
        return self.xi(s, lam) + self.lip(s)

    def lipschitz_bound(self, lam: float, lo: float, hi: float, samples: int = 2001) -> float:
        """Sampled Lipschitz constant of gamma_lambda + Pi on [lo, hi]."""
        s = np.linspace(lo, hi, samples)
        if lam == 0 and self.kind is not GraphKind.CUBIC:
            raise DomainViolation("unregularized singular graph has no Lipschitz bound")
        f = self.nonlinearity(s, lam)
        return float(np.max(np.abs(np.diff(f) / np.diff(s))))


def preset(kind, theta: float = 0.3, theta_c: float = 1.0, c: float | None = None) -> PotentialSplit:
    """The three standard potentials, shifted so that min F = 0.

    cubic: gamma = s^3, Pi = -s. logarithmic: gamma = theta/2 log((1+s)/(1-s)),
    Pi = -2 c s with c = theta_c / 2 by default. obstacle: gamma = subdifferential
    of the indicator of [-1, 1], Pi = -s.
    """
    kind = GraphKind(kind)
    if kind is GraphKind.CUBIC:
        return PotentialSplit(MonotoneGraph(kind), LipschitzPart(1.0), 0.25)
    if kind is GraphKind.OBSTACLE:
        return PotentialSplit(MonotoneGraph(kind), LipschitzPart(1.0), 0.5)
    if c is None:
        c = 0.5 * theta_c
    if not (theta > 0 and c > 0):
        raise ValueError("logarithmic potential needs theta > 0 and c > 0")
    graph = MonotoneGraph(kind, theta)
    lip = LipschitzPart(2.0 * c)
    res = optimize.minimize_scalar(
        lambda s: float(graph.primitive(s) + lip.primitive(s)),
        bounds=(0.0, 1.0),
        method="bounded",
        options={"xatol": 1e-13},
    )
    fmin = min(float(res.fun), 0.0, float(graph.primitive(1.0) + lip.primitive(1.0)))
    return PotentialSplit(graph, lip, -fmin)


def resolvent(graph: MonotoneGraph, lam: float, s):
    """r = (I + lam gamma)^{-1} s, elementwise."""
    if not lam > 0:
        raise ValueError(f"resolvent needs lambda > 0, got {lam}")
    s = np.asarray(s, dtype=float)
    if graph.kind is GraphKind.OBSTACLE:
        return np.clip(s, -1.0, 1.0)
    if graph.kind is GraphKind.CUBIC:
        return _cubic_resolvent(lam, s)
    return _log_resolvent(lam, graph.theta, s)


def _cubic_resolvent(lam, s):
    # r + lam r^3 = s; Newton from an upper bound of |r| converges monotonically (convex branch)
    a = np.abs(s)
    r = np.minimum(a, np.cbrt(a / lam))
    for _ in range(_MAX_ITER):
        step = (r + lam * r**3 - a) / (1.0 + 3.0 * lam * r**2)
        r = r - step
        if np.all(np.abs(step) <= 4e-16 * (1.0 + r)):
            break
    else:
        raise ConvergenceFailure("cubic resolvent did not converge")
    return np.sign(s) * r


def _log_resolvent(lam, theta, s):
    # r + lam theta/2 log((1+r)/(1-r)) = |s|, safeguarded Newton on [0, min(|s|, 1 - clamp)]
    a = np.abs(s)
    hi = np.minimum(a, 1.0 - _LOG_CLAMP)
    lo = np.zeros_like(a)
    g = lambda r: r + 0.5 * lam * theta * (np.log1p(r) - np.log1p(-r)) - a
    at_clamp = g(hi) <= 0
    r = 0.5 * (lo + hi)
    for _ in range(_MAX_ITER):
        gr = g(r)
        lo = np.where(gr < 0, r, lo)
        hi = np.where(gr > 0, r, hi)
        newton = r - gr / (1.0 + lam * theta / (1.0 - r * r))
        bad = ~((newton > lo) & (newton < hi))
        new = np.where(bad, 0.5 * (lo + hi), newton)
        done = np.abs(new - r) <= 4e-16 * (1.0 + r)
        r = new
        if np.all(done | at_clamp):
            break
    else:
        raise ConvergenceFailure("logarithmic resolvent did not converge")
    r = np.where(at_clamp, np.minimum(a, 1.0 - _LOG_CLAMP), r)
    return np.sign(s) * r


def yosida(graph: MonotoneGraph, lam: float, s):
    s = np.asarray(s, dtype=float)
    return (s - resolvent(graph, lam, s)) / lam


def yosida_primitive(graph: MonotoneGraph, lam: float, s):
    s = np.asarray(s, dtype=float)
    if graph.kind is GraphKind.OBSTACLE:
        dist = s - np.clip(s, -1.0, 1.0)
        return dist**2 / (2.0 * lam)
    r = resolvent(graph, lam, s)
    return graph.primitive(r) + (s - r) ** 2 / (2.0 * lam)


def total_free_energy(split: PotentialSplit, symbol_or_local, field: ScalarField, lam: float) -> float:
    """E_eps(u) + integral of F_lambda(u), or 1/2||grad u||^2 + integral of F_lambda(u) for ``"local"``."""
    from .kernel import nonlocal_energy

    if symbol_or_local == "local" or symbol_or_local is None:
        interface = 0.5 * float(np.sum(field.grid.ksq() * np.abs(field.spectral) ** 2))
    else:
        interface = nonlocal_energy(symbol_or_local, field)
    dens = split.F_lambda(field.values, lam)
    if not np.all(np.isfinite(dens)):
        raise DomainViolation(f"field leaves the domain of the {split.kind.value} potential")
    return interface + integrate(dens, field.grid)

"""Named initial-datum and velocity recipes referenced from run configurations."""

from __future__ import annotations

import numpy as np

from .torus import TWO_PI, ScalarField, TorusGrid, VelocityField, read_snapshot, zero_velocity


def _mode_term(grid: TorusGrid, amplitude: float, modes, shape: str) -> np.ndarray:
    if len(modes) != grid.dim:
        raise ValueError(f"mode vector {modes} does not have {grid.dim} entries")
    out = np.full(grid.shape, float(amplitude))
    for x, m in zip(grid.coords(), modes):
        if m == 0:
            continue
        arg = TWO_PI * m * x / grid.L
        out = out * (np.cos(arg) if shape == "cos" else np.sin(arg))
    return out


def modes_field(grid: TorusGrid, mean: float, terms) -> ScalarField:
    """mean + sum of amplitude * prod_j trig(m_j 2 pi x_j / L) over ``terms``.

    Each term is a mapping with keys ``amplitude``, ``modes`` and ``shape``
    ("cos" or "sin"; axes with m_j = 0 contribute a factor 1).
    """
    vals = np.full(grid.shape, float(mean))
    for term in terms:
        vals = vals + _mode_term(grid, term["amplitude"], term["modes"], term.get("shape", "cos"))
    return ScalarField(grid, vals)


def random_field(grid: TorusGrid, mean: float, amplitude: float, seed: int) -> ScalarField:
    """Uniform noise of the given amplitude, shifted to have exactly the requested mean."""
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-1.0, 1.0, size=grid.shape)
    noise -= noise.mean()
    return ScalarField(grid, mean + amplitude * noise)


def initial_field(grid: TorusGrid, recipe: str, seed: int = 0, **params) -> ScalarField:
    if recipe == "modes":
        return modes_field(grid, params.get("mean", 0.0), params.get("terms", []))
    if recipe == "random":
        return random_field(grid, params.get("mean", 0.0), params.get("amplitude", 0.01), seed)
    if recipe == "file":
        field, _ = read_snapshot(params["path"])
        if field.grid != grid:
            raise ValueError(f"snapshot grid {field.grid} does not match configured grid {grid}")
        return field
    raise ValueError(f"unknown initial recipe {recipe!r}")


def velocity_field(dim: int, recipe: str, seed: int = 0, **params) -> VelocityField:
    """Velocity recipes.

    zero        beta = 0
    shear       beta = (A sin(m y), 0[, 0]), divergence free, constant in time
    pulsating   shear modulated by 1 + a sin(2 pi t / period): H^1 in time
    white       shear modulated by i.i.d. uniform(-1, 1) / sqrt(tau) on time cells of
                length tau: rough in time, seeded
    uniform     constant translation with components ``components``
    """
    amp = float(params.get("amplitude", 1.0))
    m = int(params.get("mode", 1))
    L = float(params.get("L", TWO_PI))
    axis = int(params.get("axis", 0))
    across = (axis + 1) % dim

    def shear_profile(coords):
        comps = [0.0 * coords[0]] * dim
        comps[axis] = amp * np.sin(TWO_PI * m * coords[across] / L)
        return comps

    if recipe == "zero":
        return zero_velocity(dim)
    if recipe == "shear":
        return VelocityField(lambda t, x: shear_profile(x), abs(amp), True, True, "shear")
    if recipe == "pulsating":
        a = float(params.get("modulation", 0.5))
        period = float(params.get("period", 0.5))

        def pulsating(t, x):
            f = 1.0 + a * np.sin(TWO_PI * t / period)
            return [c * f for c in shear_profile(x)]

        return VelocityField(pulsating, abs(amp) * (1.0 + abs(a)), True, False, "pulsating")
    if recipe == "white":
        tau = float(params.get("tau", 1e-3))

        def white(t, x):
            cell = int(np.floor(t / tau + 1e-9))
            xi = np.random.default_rng([seed, cell]).uniform(-1.0, 1.0) / np.sqrt(tau)
            return [c * xi for c in shear_profile(x)]

        return VelocityField(white, abs(amp) / np.sqrt(tau), True, False, "white")
    if recipe == "uniform":
        comps = [float(c) for c in params.get("components", [amp] + [0.0] * (dim - 1))]
        if len(comps) != dim:
            raise ValueError(f"uniform velocity needs {dim} components")
        return VelocityField(lambda t, x: comps, float(np.linalg.norm(comps)), True, True, "uniform")
    raise ValueError(f"unknown velocity recipe {recipe!r}")

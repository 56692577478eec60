import csv
import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import smooth_field
from nlch.dynamics import (
    DIAGNOSTIC_COLUMNS,
    RunOutput,
    SimState,
    SolverConfig,
    Stepper,
    regularize_initial,
    run,
    step_local,
    step_nonlocal,
    truncate_velocity,
)
from nlch.errors import ConfigError, StepDiverged
from nlch.kernel import build_kernel, build_symbol, nonlocal_energy
from nlch.potential import preset
from nlch.recipes import modes_field, random_field, velocity_field
from nlch.torus import ScalarField, TorusGrid, VelocityField, norms, read_snapshot

G32 = TorusGrid(2, 32)
CUBIC = preset("cubic")


def canonical_u0(grid):
    return modes_field(grid, 0.2, [{"amplitude": 0.1, "modes": [1, 1], "shape": "cos"}])


def symbol(grid, eps=0.4):
    return build_symbol(build_kernel("smooth_bump", eps, grid.dim, grid.L), grid)


@pytest.mark.parametrize(
    "kwargs,key",
    [
        (dict(dt=0.0, T=1.0), "solver.dt"),
        (dict(dt=0.3, T=1.0), "solver.T"),
        (dict(dt=0.1, T=1.0, lam=-1.0), "potential.lambda"),
        (dict(dt=0.1, T=1.0, S=-2.0), "solver.S"),
        (dict(dt=0.1, T=1.0, scheme="crank_nicolson"), "solver.scheme"),
    ],
)
def test_solver_config_validation(kwargs, key):
    with pytest.raises(ConfigError) as info:
        SolverConfig(**kwargs)
    assert info.value.key == key


def test_yosida_parameter_required_for_singular_graphs():
    cfg = SolverConfig(dt=1e-3, T=1e-3, lam=0.0)
    with pytest.raises(ConfigError):
        run(ScalarField.constant(G32, 0.0), "local", preset("obstacle"), None, cfg)


def test_truncate_velocity_examples():
    beta = VelocityField(lambda t, x: [3.0, 0.0], 3.0)
    out = truncate_velocity(beta, 1.0).sample(0.0, G32)
    np.testing.assert_allclose(out[0], 1.0)
    np.testing.assert_allclose(out[1], 0.0)
    small = velocity_field(2, "shear", amplitude=0.5)
    np.testing.assert_array_equal(truncate_velocity(small, 1.0).sample(0.0, G32), small.sample(0.0, G32))


@given(st.floats(0.05, 5.0), st.floats(0.1, 50.0), st.integers(0, 1000))
def test_truncate_velocity_bound(lam, amp, seed):
    beta = velocity_field(2, "white", seed=seed, amplitude=amp, tau=0.1)
    out = truncate_velocity(beta, lam)
    sampled = out.sample(0.37, G32)
    assert np.sqrt((sampled**2).sum(axis=0)).max() <= 1 / lam * (1 + 1e-12)
    assert out.bound <= 1 / lam + 1e-12


def test_regularize_initial_examples():
    c = ScalarField.constant(G32, 0.3)
    np.testing.assert_allclose(regularize_initial(c, 1.0).values, 0.3, atol=1e-15)
    f = ScalarField.from_function(G32, lambda x, y: np.cos(x) + 0 * y)
    np.testing.assert_allclose(regularize_initial(f, 1.0).values, 0.5 * f.values, atol=1e-14)


@given(st.integers(0, 2**31), st.floats(1e-4, 2.0))
def test_regularize_initial_contracts(seed, lam):
    u0 = ScalarField(G32, np.random.default_rng(seed).normal(size=G32.shape))
    ur = regularize_initial(u0, lam)
    assert abs(ur.mean() - u0.mean()) < 1e-14
    assert norms(ur).l2 <= norms(u0).l2 * (1 + 1e-12)
    s = symbol(G32)
    assert nonlocal_energy(s, ur) <= nonlocal_energy(s, u0) * (1 + 1e-12)


@pytest.mark.parametrize("kind,m", [("cubic", 0.3), ("logarithmic", -0.4), ("obstacle", 0.9)])
def test_constant_states_are_equilibria(kind, m):
    cfg = SolverConfig(dt=1e-2, T=1e-2)
    state = SimState(0.0, ScalarField.constant(G32, m), ScalarField.constant(G32, 0.0))
    for new in (
        step_nonlocal(state, symbol(G32), preset(kind), None, cfg),
        step_local(state, preset(kind), None, cfg),
    ):
        np.testing.assert_allclose(new.u.values, m, atol=1e-14)
        assert new.step_index == 1 and new.t == pytest.approx(1e-2)


def _reference_local_step(u, dt, lam, S, split, tol=1e-14, max_iter=500):
    """Independent full-FFT implementation of the stabilized scheme with B = -Laplace."""
    n = u.shape[0]
    k = np.fft.fftfreq(n, 1.0 / n)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    uh = np.fft.fft2(u)
    denom = 1 + dt * ksq * ((lam + 1) * ksq + S)
    ustar = u
    for _ in range(max_iter):
        nl = np.fft.fft2(split.nonlinearity(ustar, lam))
        newh = (uh * (1 + dt * ksq * S) - dt * ksq * nl) / denom
        newh[0, 0] = uh[0, 0]
        unew = np.fft.ifft2(newh).real
        done = np.linalg.norm(unew - ustar) <= tol * np.linalg.norm(unew)
        ustar = unew
        if done:
            break
    return ustar


def test_local_step_against_reference_implementation():
    u0 = smooth_field(G32, 5, mean=0.1)
    cfg = SolverConfig(dt=1e-3, T=1e-3, lam=1e-2, S=1.0, fp_tol=1e-14, max_iter=500)
    state = SimState(0.0, u0, ScalarField.constant(G32, 0.0))
    u_ref = u0.values
    for _ in range(50):
        state = step_local(state, CUBIC, None, cfg)
        u_ref = _reference_local_step(u_ref, 1e-3, 1e-2, 1.0, CUBIC)
        assert np.abs(state.u.values - u_ref).max() < 1e-12


def test_linear_multiplier_at_least_one():
    cfg = SolverConfig(dt=1e-2, T=1e-2)
    st_ = Stepper(symbol(G32), CUBIC, None, cfg, 2.0)
    assert st_.linear_multiplier().min() >= 1.0


@pytest.mark.parametrize("model", ["nonlocal", "local"])
def test_mass_conservation_thousand_steps_with_convection(model):
    u0 = canonical_u0(G32)
    beta = velocity_field(2, "shear", amplitude=1.0)
    cfg = SolverConfig(dt=1e-3, T=1.0, lam=1e-2)
    m = symbol(G32) if model == "nonlocal" else "local"
    s = run(u0, m, CUBIC, beta, cfg)
    assert len(s.diagnostics) == 1001
    assert s.mass_drift < 1e-11


@pytest.mark.parametrize("kind", ["cubic", "logarithmic", "obstacle"])
def test_lyapunov_decreases_without_convection(kind):
    u0 = modes_field(G32, 0.1, [{"amplitude": 0.4, "modes": [1, 2], "shape": "cos"}])
    cfg = SolverConfig(dt=1e-3, T=0.2, lam=1e-2)
    s = run(u0, symbol(G32), preset(kind), None, cfg)
    lyap = s.column("lyapunov")
    assert np.all(np.diff(lyap) <= 1e-9 * (1 + np.abs(lyap[1:])))
    dissipation = cfg.dt * np.sum(s.column("grad_mu_l2")[1:] ** 2)
    assert dissipation <= lyap[0] - lyap[-1] + 1e-6
    assert s.dt_times_S == pytest.approx(cfg.dt * s.S)


def test_chemical_potential_mean_controlled():
    u0 = canonical_u0(G32)
    cfg = SolverConfig(dt=1e-3, T=0.2, lam=1e-2)
    s = run(u0, symbol(G32), preset("logarithmic"), velocity_field(2, "shear"), cfg)
    ratio = np.abs(s.column("mu_mean")) / (1 + s.column("gamma_l1"))
    assert np.all(np.isfinite(ratio)) and ratio.max() < 1.0


def test_weak_residual_small_on_converged_run():
    cfg = SolverConfig(dt=1e-3, T=0.1, lam=1e-2, residual_every=1)
    s = run(canonical_u0(G32), symbol(G32), CUBIC, velocity_field(2, "shear"), cfg)
    scale = max(abs(r.grad_mu_l2) for r in s.diagnostics)
    assert s.max_weak_residual < 10 * cfg.fp_tol * max(1.0, scale)


def test_T_zero_writes_initial_snapshot_only(tmp_path):
    cfg = SolverConfig(dt=1e-3, T=0.0)
    sinks = RunOutput(tmp_path, snapshot_every=1)
    s = run(canonical_u0(G32), symbol(G32), CUBIC, None, cfg, sinks=sinks)
    assert len(s.diagnostics) == 1
    assert [p.name for p in tmp_path.glob("*.nlchf")] == ["run_u_000000.nlchf"]


def test_run_output_files(tmp_path):
    cfg = SolverConfig(dt=1e-3, T=0.05, lam=1e-2)
    sinks = RunOutput(tmp_path, snapshot_every=20, prefix="demo")
    s = run(canonical_u0(G32), symbol(G32), CUBIC, None, cfg, sinks=sinks)
    rows = list(csv.reader((tmp_path / "demo_diagnostics.csv").open()))
    assert rows[0] == DIAGNOSTIC_COLUMNS
    assert len(rows) == 1 + cfg.n_steps + 1
    for row, rec in zip(rows[1:], s.diagnostics):
        assert [float(v) for v in row] == list(dataclasses.astuple(rec))
    names = sorted(p.name for p in tmp_path.glob("*.nlchf"))
    assert names == [f"demo_u_{i:06d}.nlchf" for i in (0, 20, 40, 50)]
    final, t = read_snapshot(tmp_path / "demo_u_000050.nlchf")
    assert t == pytest.approx(0.05)
    np.testing.assert_array_equal(final.values, s.final.u.values)


def test_diagnostics_initial_row():
    s = run(canonical_u0(G32), symbol(G32), CUBIC, None, SolverConfig(dt=1e-3, T=1e-3))
    first = s.diagnostics[0]
    assert first.t == 0.0 and first.dual_norm_dtu == 0.0 and first.dtu_l2 == 0.0
    ur = regularize_initial(canonical_u0(G32), 1e-2)
    assert first.E_eps == pytest.approx(nonlocal_energy(symbol(G32), ur), rel=1e-12)
    assert first.potential_energy == pytest.approx(G32.cell_volume * CUBIC.F_lambda(ur.values, 1e-2).sum(), rel=1e-12)
    expected = first.E_eps + first.potential_energy + 0.5e-2 * norms(ur).h1_semi ** 2
    assert first.lyapunov == pytest.approx(expected, rel=1e-12)
    assert all(np.isfinite(dataclasses.astuple(first)))


def test_step_diverged_carries_history():
    cfg = SolverConfig(dt=1e-2, T=1e-2, fp_tol=1e-15, max_iter=2, S=0.0)
    u0 = smooth_field(G32, 1)
    with pytest.raises(StepDiverged) as info:
        run(u0, symbol(G32), CUBIC, None, cfg)
    assert info.value.step_index == 1
    assert len(info.value.history) == 2


def test_outside_scheme_flagged(caplog):
    cfg = SolverConfig(dt=1e-3, T=1e-3, lam=0.0)
    with caplog.at_level(logging.WARNING):
        s = run(canonical_u0(G32), symbol(G32), CUBIC, None, cfg)
    assert s.outside_scheme
    assert "outside" in caplog.text


def test_spinodal_decomposition_regression():
    # L = 32 so that the band |k| < 1 of unstable modes is populated
    g = TorusGrid(2, 64, 32.0)
    u0 = random_field(g, 0.0, 0.01, 7)
    s = run(u0, "local", CUBIC, None, SolverConfig(dt=0.1, T=80.0, lam=1e-2), keep_trajectory=True)
    lyap = s.column("lyapunov")
    assert np.all(np.diff(lyap) <= 1e-9 * (1 + np.abs(lyap[1:])))
    assert lyap[-1] == pytest.approx(165.8966669519462, rel=1e-6)
    kabs = np.sqrt(g.ksq())

    def mean_wavenumber(u):
        p = np.abs(np.fft.fftn(u)) ** 2
        p.flat[0] = 0
        return np.sum(kabs * p) / p.sum()

    kbar = [mean_wavenumber(s.trajectory[i]) for i in range(400, 801, 100)]
    assert all(b < a for a, b in zip(kbar, kbar[1:]))
    assert np.abs(s.final.u.values).max() > 0.95

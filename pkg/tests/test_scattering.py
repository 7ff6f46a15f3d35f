import json
import warnings

import numpy as np
import pytest

from softphoton.dynamics import (
    ParticleState, SystemState, Trajectory, make_pulse, simulate, slave_longitudinal,
)
from softphoton.matter import ChargeModel, soliton_on_grid
from softphoton.scattering import (
    deviation,
    scattered_field,
    source_term,
    wave_operator_diagnostic,
    with_convergence,
)
from softphoton.spectral import SpectralFieldPair, field_norm, free_propagate


def pulse_system(grid, model, amplitude=1.0):
    pulse = make_pulse(grid, 2.0, 0.6, amplitude, [1, 0, 0], [0, 0, 1])
    fields = slave_longitudinal(soliton_on_grid(grid, model, [0, 0, 0]) + pulse, [0, 0, 0],
                                grid, model)
    return SystemState(fields, ParticleState([0, 0, 0], [0, 0, 0]))


@pytest.fixture(scope="module")
def pulse_run(grid, model):
    return simulate(pulse_system(grid, model), grid, model, 10.0, 0.02, sample_every=50)


def subsample(traj, every):
    idx = np.unique(np.r_[np.arange(0, len(traj), every), len(traj) - 1])
    return Trajectory(traj.t[idx], traj.q[idx], traj.v[idx], traj.v_dot[idx], traj.dt * every)


def quiet_scatter(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return scattered_field(*args, **kwargs)


# --- source term -------------------------------------------------------------------------

def test_source_vanishes_without_acceleration(grid, model):
    g = source_term((0.0, [1, 2, 3], [0.1, 0.2, 0.3], [0, 0, 0]), model, grid)
    assert not np.any(g.e_hat) and not np.any(g.b_hat)


def test_source_at_rest_matches_finite_difference(grid):
    model = ChargeModel(1.0)
    a, h = 0.7, 1e-6
    g = source_term((0.0, [0, 0, 0], [0, 0, 0], [a, 0, 0]), model, grid)
    plus = soliton_on_grid(grid, model, [h, 0, 0])
    minus = soliton_on_grid(grid, model, [-h, 0, 0])
    fd = (plus - minus).scale(a / (2 * h))
    scale = np.abs(soliton_on_grid(grid, model, [0, 0, 0]).e_hat).max()
    np.testing.assert_allclose(g.e_hat, fd.e_hat, rtol=0, atol=1e-8 * scale)
    np.testing.assert_allclose(g.b_hat, fd.b_hat, rtol=0, atol=1e-8 * scale)


def test_source_translation_covariance(grid, model):
    v, a = [0.2, -0.1, 0.4], [0.01, 0.03, -0.02]
    q, dq = np.array([0.5, -1.0, 2.0]), np.array([3.0, 0.25, -1.5])
    g0 = source_term((0.0, q, v, a), model, grid)
    g1 = source_term((0.0, q + dq, v, a), model, grid)
    phase = np.exp(-1j * grid.kvec @ dq)[..., None]
    np.testing.assert_allclose(g1.e_hat, g0.e_hat * phase, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(g1.b_hat, g0.b_hat * phase, rtol=1e-12, atol=1e-300)


def test_source_is_transverse(grid, model):
    g = source_term((0.0, [0.1, 0, 0], [0, 0.5, 0.3], [0.2, 0.1, -0.3]), model, grid)
    scale = np.abs(g.e_hat).max()
    assert np.abs(np.sum(grid.khat * g.e_hat, axis=-1)).max() < 1e-13 * scale


def test_deviation_of_soliton_is_zero(grid, model):
    s = SystemState(soliton_on_grid(grid, model, [0, 0.3, 0], [1, 1, 1]),
                    ParticleState([1, 1, 1], [0, 0.3, 0]))
    d = deviation(s, grid, model)
    assert not np.any(d.e_hat) and not np.any(d.b_hat)


# --- scattered field ---------------------------------------------------------------------

def _trajectory(n, v_dot):
    t = np.linspace(0, 4, n)
    v = np.tile([0.0, 0.0, 0.3], (n, 1))
    return Trajectory(t, np.outer(t, v[0]), v, np.tile(v_dot, (n, 1)))


def test_soliton_trajectory_scatters_nothing(grid, model):
    zero = SpectralFieldPair.zeros(grid)
    res = scattered_field(_trajectory(41, [0, 0, 0]), zero, model, grid, +1)
    assert not np.any(res.z_sc.e_hat) and not np.any(res.z_sc.b_hat)
    assert res.tail_bound == 0 and res.quadrature_error == 0


def test_decoupled_pulse_scatters_into_itself(grid):
    model = ChargeModel(0.0)
    pulse = make_pulse(grid, 2.0, 0.6, 1.0, [1, 0, 0], [0, 0, 1])
    init = SystemState(pulse, ParticleState([0, 0, 0], [0, 0, 0.2]))
    res = simulate(init, grid, model, 2.0, 0.05)
    sc = quiet_scatter(res.trajectory, deviation(init, grid, model), model, grid, +1)
    np.testing.assert_allclose(sc.z_sc.e_hat, pulse.e_hat, rtol=0, atol=1e-15)
    np.testing.assert_allclose(sc.z_sc.b_hat, pulse.b_hat, rtol=0, atol=1e-15)
    series = wave_operator_diagnostic(res.snapshots, res.trajectory, model, grid, sc.z_sc)
    assert max(d for _, d in series) < 1e-12


def test_affine_in_initial_deviation(grid, model, pulse_run):
    z0 = deviation(pulse_run.snapshots[0], grid, model)
    extra = make_pulse(grid, 3.0, 0.5, 0.3, [0, 1, 0], [1, 0, 0])
    a = quiet_scatter(pulse_run.trajectory, z0, model, grid, +1)
    b = quiet_scatter(pulse_run.trajectory, z0 + extra, model, grid, +1)
    np.testing.assert_allclose((b.z_sc - a.z_sc).e_hat, extra.e_hat, rtol=0, atol=1e-15)
    np.testing.assert_allclose((b.z_sc - a.z_sc).b_hat, extra.b_hat, rtol=0, atol=1e-15)


def test_mild_equation_reproduces_final_deviation(grid, model, pulse_run):
    traj = pulse_run.trajectory
    z0 = deviation(pulse_run.snapshots[0], grid, model)
    sc = quiet_scatter(traj, z0, model, grid, +1)
    final = pulse_run.final
    pulled = free_propagate(deviation(final, grid, model), grid, -final.t)
    dev = field_norm(pulled - sc.z_sc, grid)
    assert dev < 1e-6 * field_norm(sc.z_sc, grid)
    # the Romberg correction size is an honest upper estimate of the residual
    assert dev < 10 * sc.quadrature_error + 1e-12


def test_sampling_refinement_is_within_error_model(grid, model, pulse_run):
    traj = pulse_run.trajectory
    z0 = deviation(pulse_run.snapshots[0], grid, model)
    fine = quiet_scatter(traj, z0, model, grid, +1)
    coarse = quiet_scatter(subsample(traj, 2), z0, model, grid, +1)
    change = field_norm(fine.z_sc - coarse.z_sc, grid)
    assert change < coarse.quadrature_error
    assert fine.quadrature_error < coarse.quadrature_error


def test_scattered_data_is_transverse(grid, model, pulse_run):
    z0 = deviation(pulse_run.snapshots[0], grid, model)
    sc = quiet_scatter(pulse_run.trajectory, z0, model, grid, +1)
    for f in (sc.z_sc.e_hat, sc.z_sc.b_hat):
        assert np.abs(np.sum(grid.khat * f, axis=-1)).max() < 1e-12 * np.abs(f).max()


def test_past_direction_uses_backward_run(grid, model):
    s0 = pulse_system(grid, model)
    back = simulate(s0, grid, model, -4.0, -0.02, sample_every=50)
    sc = quiet_scatter(back.trajectory, deviation(s0, grid, model), model, grid, -1)
    final = back.final
    pulled = free_propagate(deviation(final, grid, model), grid, -final.t)
    assert field_norm(pulled - sc.z_sc, grid) < 1e-6 * field_norm(sc.z_sc, grid)
    assert sc.direction == -1 and sc.t_horizon == pytest.approx(4.0)


def test_short_run_warns_about_tail(grid, model):
    s0 = pulse_system(grid, model)
    res = simulate(s0, grid, model, 2.0, 0.02)
    with pytest.warns(RuntimeWarning, match="too short"):
        scattered_field(res.trajectory, deviation(s0, grid, model), model, grid, +1,
                        fit_window=(0.5, 2.0))


def test_rejects_bad_direction_and_anchor(grid, model):
    zero = SpectralFieldPair.zeros(grid)
    traj = _trajectory(11, [0, 0, 0])
    with pytest.raises(ValueError):
        scattered_field(traj, zero, model, grid, 0)
    with pytest.raises(ValueError):
        scattered_field(traj, zero, model, grid, -1)
    with pytest.raises(ValueError):
        scattered_field(_trajectory(2, [0, 0, 0]), zero, model, grid, +1)


# --- wave-operator diagnostic ------------------------------------------------------------

def test_soliton_run_has_no_wave_operator_deviation(grid, model):
    v = [0.0, 0.0, 0.3]
    s0 = SystemState(soliton_on_grid(grid, model, v), ParticleState([0, 0, 0], v))
    res = simulate(s0, grid, model, 4.0, 0.02, sample_every=50)
    sc = quiet_scatter(res.trajectory, SpectralFieldPair.zeros(grid), model, grid, +1)
    ref = field_norm(soliton_on_grid(grid, model, v), grid)
    series = wave_operator_diagnostic(res.snapshots, res.trajectory, model, grid, sc.z_sc)
    assert max(d for _, d in series) < 1e-8 * ref


def test_diagnostic_series_is_sorted_and_serializable(grid, model, pulse_run):
    z0 = deviation(pulse_run.snapshots[0], grid, model)
    sc = quiet_scatter(pulse_run.trajectory, z0, model, grid, +1)
    series = wave_operator_diagnostic(pulse_run.snapshots, pulse_run.trajectory, model, grid,
                                      sc.z_sc)
    times = [t for t, _ in series]
    assert times == sorted(times) and len(series) == len(pulse_run.snapshots)
    out = with_convergence(sc, series)
    blob = json.loads(json.dumps(out.to_json()))
    assert blob["direction"] == "+" and len(blob["convergence_series"]) == len(series)
    assert blob["tail_bound"] >= 0

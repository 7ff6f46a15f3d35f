import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softphoton.dynamics import ParticleState, PowerLawFit, make_pulse, simulate, soliton_state
from softphoton.matter import (FT_NORM, ChargeModel, SolitonField, ir_limit_soliton,
                               soliton_on_grid, soliton_position_tail)
from softphoton.observables import (
    AXIS_DIRECTIONS,
    IRTail,
    check_ir_conservation,
    flux_average,
    ir_extract,
    ir_tail_of_state,
    soft_photon_residual,
    soliton_ir_tail,
    spatial_tail,
    transverse_formula_electric,
    transverse_formula_magnetic,
    transverse_project,
)
from softphoton.scattering import ScatterResult
from softphoton.spectral import SpectralFieldPair, build_kgrid, free_propagate


def fake_scatter(z, ir_tail_bound=0.0):
    return ScatterResult(z, +1, 40.0, 0.0, ir_tail_bound, 0.0, PowerLawFit(0.0, float("nan"), (1, 2)))


# --- infrared extraction -----------------------------------------------------------------

@pytest.mark.parametrize("v", [[0, 0, 0], [0, 0, 0.3], [0.5, -0.2, 0.1], [0.0, 0.7, 0.0],
                               [0.4, 0.4, -0.4]])
def test_extracted_soliton_tail_matches_closed_form(grid, model, v):
    tail = ir_extract(soliton_on_grid(grid, model, v, q=[0.3, -0.2, 1.0]), grid)
    ref = soliton_ir_tail(v, model, grid)
    assert np.abs(tail.e - ref.e).max() < 1e-6 * np.abs(ref.e).max()
    assert np.abs(tail.b - ref.b).max() <= 1e-6 * np.abs(ref.e).max()
    assert not np.any(tail.nonconverging)


def test_pulse_has_no_infrared_tail(grid):
    tail = ir_extract(make_pulse(grid, 2.0, 0.6, 1.0, [1, 0, 0], [0, 0, 1]), grid)
    assert np.abs(tail.e).max() < 1e-8 and np.abs(tail.b).max() < 1e-8


def test_extraction_is_linear(grid, model):
    f = soliton_on_grid(grid, model, [0.1, 0.2, 0.3])
    a = ir_extract(f, grid)
    c = 2.5 - 1.5j
    b = ir_extract(f.scale(c), grid)
    # complex scaling commutes with extrapolation up to one rounding per operation
    np.testing.assert_allclose(b.e, c * a.e, rtol=1e-14, atol=1e-300)
    np.testing.assert_allclose(b.b, c * a.b, rtol=1e-14, atol=1e-300)


def test_extraction_ignores_free_propagation(grid, model):
    f = soliton_on_grid(grid, model, [0.0, 0.0, 0.5])
    a = ir_extract(f, grid)
    for t in (3.0, -7.0):
        b = ir_extract(free_propagate(f, grid, t), grid)
        tol = 10 * (a.error.max() + b.error.max())
        assert np.abs(b.e - a.e).max() < tol
        assert np.abs(b.b - a.b).max() < tol


def test_divergent_direction_is_flagged(grid):
    e = np.zeros(grid.shape, complex)
    e[:, 0, 0] = 1.0 / grid.radial_nodes**3
    tail = ir_extract(SpectralFieldPair(e, np.zeros_like(e)), grid)
    assert tail.nonconverging[0] and not np.any(tail.nonconverging[1:])


def test_extraction_preconditions(grid, model):
    f = soliton_on_grid(grid, model, [0, 0, 0])
    with pytest.raises(ValueError):
        ir_extract(f, grid, n_nodes=2)
    with pytest.raises(ValueError):
        ir_extract(f, grid, n_nodes=4, k_ir=1.5e-3)


def test_tail_arithmetic_and_serialization(grid, model):
    a = soliton_ir_tail([0, 0, 0.5], model, grid)
    b = soliton_ir_tail([0.2, 0, 0], model, grid)
    d = a - b
    np.testing.assert_array_equal(d.e, a.e - b.e)
    np.testing.assert_array_equal((d + b).b, a.b - b.b + b.b)
    blob = json.loads(json.dumps(d.scale(2.0).to_json()))
    np.testing.assert_allclose(np.array(blob["e_im"]), 2 * (a.e - b.e).imag)
    assert len(blob["nonconverging"]) == grid.n_directions


def test_tail_of_real_field_has_antipodal_symmetry(grid, model):
    tail = ir_extract(soliton_on_grid(grid, model, [0.3, 0.1, -0.2], q=[1, 2, 3]), grid)
    a = grid.antipode_index
    tol = tail.error + tail.error[a] + 1e-15
    assert np.all(np.linalg.norm(tail.e[a] - np.conj(tail.e), axis=-1) <= tol)


# --- transverse projection ---------------------------------------------------------------

def test_projection_kills_longitudinal_tails(grid):
    kh = grid.directions
    t = IRTail(kh, 3j * kh, -kh + 0j, np.zeros(len(kh)))
    p = transverse_project(t)
    assert np.abs(p.e).max() < 1e-15 and np.abs(p.b).max() < 1e-15


def test_projection_is_idempotent(grid, model):
    t = soliton_ir_tail([0.3, -0.5, 0.2], model, grid)
    once = transverse_project(t)
    twice = transverse_project(once)
    np.testing.assert_allclose(twice.e, once.e, rtol=0, atol=1e-15)
    np.testing.assert_allclose(twice.b, once.b, rtol=0, atol=1e-15)


def test_soliton_tail_difference_is_already_transverse(grid, model):
    d = soliton_ir_tail([0, 0, 0], model, grid) - soliton_ir_tail([0.6, 0.1, -0.3], model, grid)
    p = transverse_project(d)
    assert np.abs(p.e - d.e).max() < 1e-13


# --- transverse formula ------------------------------------------------------------------

def test_transverse_formula_hand_values():
    model = ChargeModel(1.0)
    v = [0, 0, 0.5]
    np.testing.assert_array_equal(transverse_formula_electric(v, model, [1, 0, 0]), 0)
    got = transverse_formula_electric(v, model, [1, 0, 1])
    # P_tr v = (-1/4, 0, 1/4), k.v = 1/(2 sqrt 2), 1 - (k.v)^2 = 7/8
    kv = 0.5 / np.sqrt(2)
    expected = -1j * FT_NORM * np.array([-0.25, 0, 0.25]) * kv / (1 - kv * kv)
    np.testing.assert_allclose(got, expected, rtol=1e-15)
    np.testing.assert_allclose(got.imag, [0.00641, 0, -0.00641], atol=5e-6)


@pytest.mark.parametrize("speed", np.round(np.arange(0.1, 1.0, 0.1), 1))
def test_transverse_formula_is_minus_projected_soliton_tail(speed):
    model = ChargeModel(0.3)
    dirs = build_kgrid(4, 1e-3, 1.0, 4, 4).directions  # 16 directions
    for axis in np.eye(3):
        v = speed * (axis + np.array([0.1, 0.0, 0.0]))
        v = speed * v / np.linalg.norm(v)
        e_ir, b_ir = ir_limit_soliton(SolitonField(v, model), dirs)
        ptr = e_ir - dirs * np.sum(dirs * e_ir, axis=-1, keepdims=True)
        assert np.abs(-ptr - transverse_formula_electric(v, model, dirs)).max() < 1e-14
        e0, b0 = ir_limit_soliton(SolitonField([0, 0, 0], model), dirs)
        assert np.abs(-(b_ir - b0) - transverse_formula_magnetic(v, model, dirs)).max() < 1e-14


# --- soft-photon residual ----------------------------------------------------------------

def test_identical_asymptotics_give_zero_residual(grid, model):
    z = make_pulse(grid, 2.0, 0.6, 1.0, [1, 0, 0], [0, 0, 1])
    sc = fake_scatter(z)
    rep = soft_photon_residual(sc, sc, [0, 0, 0.2], [0, 0, 0.2], model, grid)
    assert rep.electric.residual_norm == 0 and rep.magnetic.residual_norm == 0
    assert rep.electric.reference_norm == 0 and rep.electric.relative == 0


def test_synthetic_scattering_satisfies_identity(grid, model):
    v_plus, v_minus = np.array([0, 0, 0.4]), np.array([0.1, 0, 0])
    z_plus = soliton_on_grid(grid, model, v_minus) - soliton_on_grid(grid, model, v_plus)
    rep = soft_photon_residual(fake_scatter(z_plus), fake_scatter(SpectralFieldPair.zeros(grid)),
                               v_plus, v_minus, model, grid)
    assert rep.electric.relative < 1e-6 and rep.magnetic.relative < 1e-6
    assert rep.electric.residual_norm <= rep.budget + 1e-15
    blob = json.loads(json.dumps(rep.to_json()))
    assert blob["budget"]["total"] == pytest.approx(rep.budget)


def test_residual_ignores_infrared_regular_additions(grid, model):
    v_plus = np.array([0, 0, 0.4])
    z_plus = soliton_on_grid(grid, model, [0, 0, 0]) - soliton_on_grid(grid, model, v_plus)
    zero = SpectralFieldPair.zeros(grid)
    extra = make_pulse(grid, 2.5, 0.5, 0.7, [0, 1, 0], [1, 0, 0])
    a = soft_photon_residual(fake_scatter(z_plus), fake_scatter(zero), v_plus, [0, 0, 0],
                             model, grid)
    b = soft_photon_residual(fake_scatter(z_plus + extra), fake_scatter(extra), v_plus,
                             [0, 0, 0], model, grid)
    assert abs(a.electric.residual_norm - b.electric.residual_norm) < 1e-10
    assert abs(a.magnetic.residual_norm - b.magnetic.residual_norm) < 1e-10


def test_tail_bounds_enter_budget(grid, model):
    zero = SpectralFieldPair.zeros(grid)
    rep = soft_photon_residual(fake_scatter(zero, 1e-3), fake_scatter(zero, 2e-3),
                               [0, 0, 0], [0, 0, 0], model, grid, v_error=1e-4)
    assert rep.budget_tail > np.sqrt(4 * np.pi) * 3e-3


# --- conservation ------------------------------------------------------------------------

def test_soliton_run_conserves_infrared_tail(grid, model):
    res = simulate(soliton_state(grid, model, [0.2, 0, 0.3]), grid, model, 4.0, 0.02,
                   sample_every=20)
    rep = check_ir_conservation(res.snapshots, model, grid)
    assert len(rep.times) == len(res.snapshots)
    assert rep.max_transverse_drift < 1e-6 and rep.max_longitudinal_drift < 1e-12
    with pytest.raises(ValueError):
        check_ir_conservation(res.snapshots[:1], model, grid)


def test_state_tail_longitudinal_part_is_fixed_by_charge(grid, model):
    s = soliton_state(grid, model, [0.5, 0, 0], q=[3, 0, 0])
    tail = ir_tail_of_state(s, model, grid)
    long = np.sum(grid.directions * tail.e, axis=-1)
    np.testing.assert_allclose(long, -1j * model.e * FT_NORM, rtol=1e-12)


# --- spatial tails -----------------------------------------------------------------------

def test_pure_soliton_spatial_tail_is_closed_form(grid, model):
    v = np.array([0.0, 0.3, 0.0])
    f = soliton_on_grid(grid, model, v, q=[1, 0, 0])
    t = spatial_tail(f, ParticleState([1, 0, 0], v), model, grid)
    ref = soliton_position_tail(SolitonField(v, model), AXIS_DIRECTIONS)
    np.testing.assert_allclose(t.e, ref, rtol=0, atol=1e-8)
    assert flux_average(t) == pytest.approx(model.e, rel=1e-2)


def test_moving_soliton_tail_by_inverse_transform():
    model = ChargeModel(1.0)
    g = build_kgrid(128, 1e-3, 8.0, 12, 24, k_knee=0.5)
    v = np.array([0.0, 0.0, 0.5])
    dirs = np.array([[0, 0, 1.0], [1, 0, 0], [0, 1, 1]])
    # particle data at rest, so the whole moving-minus-rest field is transformed numerically
    t = spatial_tail(soliton_on_grid(g, model, v), ParticleState([0, 0, 0], [0, 0, 0]), model, g,
                     dirs, radii=(12.0, 16.0, 20.0))
    ref = soliton_position_tail(SolitonField(v, model), dirs)
    np.testing.assert_allclose(t.e[0], [0, 0, 0.75 / (4 * np.pi)], rtol=1e-4, atol=1e-12)
    assert np.abs(t.e - ref).max() < 1e-4 * np.abs(ref).max()
    assert not t.under_resolved


def test_spatial_tail_preconditions(grid, model):
    f = soliton_on_grid(grid, model, [0, 0, 0])
    p = ParticleState([0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        spatial_tail(f, p, model, grid, radii=(2.0, 3.0))
    t = spatial_tail(f, p, model, grid, directions=AXIS_DIRECTIONS[:1], radii=(50.0, 400.0))
    assert 400.0 in t.under_resolved
    json.dumps(t.to_json())


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
def test_soliton_flux_equals_charge_on_fine_sphere(vx, vz):
    model = ChargeModel(0.3)
    dirs = build_kgrid(4, 1e-3, 1.0, 24, 48)
    tail = soliton_position_tail(SolitonField([vx, 0, vz], model), dirs.directions)
    flux = np.sum(dirs.angular_weights * np.sum(dirs.directions * tail, axis=-1))
    assert flux == pytest.approx(0.3, rel=1e-6)

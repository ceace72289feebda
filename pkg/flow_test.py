import math

import numpy as np
import pytest

from errors import ContractError, DomainError, MaximalIntervalError, ModelError
from flow import (SystemModel, build_model, check_axioms, evolve, field_speed, flow_at, lipschitz_estimate,
                  lipschitz_estimates, map_jobs, sample_states)
from signals import Signal, sample_family

ZERO = Signal.constant(0.0)


def test_catalog_dimensions():
    assert build_model('linear', {'A': [[-1.0, 0.0], [0.0, -2.0]]}).n == 2
    assert build_model('scalar_rfc').origin_preserving
    assert not build_model('decay_plus_input').origin_preserving
    with pytest.raises(ContractError):
        build_model('van_der_pol')
    with pytest.raises(ContractError):
        build_model('linear', {'A': [[1.0, 2.0]]})


def test_model_json_shape(contraction_model):
    data = contraction_model.to_dict()
    assert data['field_id'] == 'linear'
    again = SystemModel.from_dict(data)
    assert again.n == 1 and again.m == 1
    assert again.field(np.array([2.0]), np.array([0.0]))[0] == -2.0


def test_evolve_exact_exponentials(rfc_model, xu_model):
    assert flow_at(rfc_model, [1.0], ZERO, 1.0) == pytest.approx(math.e, rel=1e-7)
    assert flow_at(xu_model, [1.0], Signal.constant(2.0), 1.0) == pytest.approx(math.exp(2.0), rel=1e-7)
    assert flow_at(rfc_model, [1.0], Signal.constant(1.0), 2.0) == pytest.approx(math.e, rel=1e-7)


def test_flow_at_zero_returns_the_initial_state(decay_model):
    x0 = np.array([0.123456789])
    assert np.array_equal(flow_at(decay_model, x0, Signal.constant(1.0), 0.0), x0)


def test_contraction_halves_in_ln2(contraction_model):
    assert flow_at(contraction_model, [2.0], ZERO, math.log(2.0))[0] == pytest.approx(1.0, rel=1e-7)


def test_switch_times_are_breakpoints(xu_model):
    u = Signal.piecewise([0.5], [1.0], -1.0)
    traj = evolve(xu_model, [1.0], u, 1.0)
    assert 0.5 in traj.times
    assert traj.final_state[0] == pytest.approx(1.0, rel=1e-7)
    assert traj.at(0.5)[0] == pytest.approx(math.exp(0.5), rel=1e-7)
    assert traj.switch_jumps() < 1e-12


@pytest.mark.parametrize('x0', [0.5, 1.0, 2.0])
def test_quadratic_blows_up_at_the_escape_time(quadratic_model, x0):
    traj = evolve(quadratic_model, [x0], ZERO, 2.0 / x0 + 1.0, tol=1e-8)
    assert traj.status.is_blowup
    assert traj.status.t_end == pytest.approx(1.0 / x0, rel=0.02)
    assert traj.status.t_end < 1.0 / x0 + 1e-6
    assert traj.to_frame()['status'].iloc[-1] == 'blowup'


def test_flow_past_blowup_raises(quadratic_model):
    with pytest.raises(MaximalIntervalError) as info:
        flow_at(quadratic_model, [1.0], ZERO, 2.0, tol=1e-8)
    assert info.value.t_esc < 1.0 + 1e-6


def test_non_finite_field_is_a_model_error(quadratic_model):
    with pytest.raises(ModelError):
        evolve(quadratic_model, [1e200], ZERO, 1.0)


def test_evolve_arguments(rfc_model):
    with pytest.raises(DomainError):
        evolve(rfc_model, [1.0], ZERO, 0.0)
    with pytest.raises(DomainError):
        evolve(rfc_model, [1.0], ZERO, 1.0, tol=0.0)
    with pytest.raises(ContractError):
        evolve(rfc_model, [1.0], Signal.constant([0.0, 0.0]), 1.0)


def test_trajectory_frame(rfc_model):
    frame = evolve(rfc_model, [1.0], ZERO, 1.0).to_frame()
    assert list(frame.columns) == ['t', 'x_1', 'norm', 'tol_pad', 'status']
    assert frame['t'].iloc[0] == 0.0
    assert frame['norm'].iloc[-1] == pytest.approx(math.e, rel=1e-7)
    assert set(frame['status']) == {'completed'}


def test_axioms_on_scalar_rfc(rfc_model, unit_family):
    tol = 1e-9
    report = check_axioms(rfc_model, unit_family, n_cases=100, seed=0, tol=tol)
    assert report.identity == 0.0
    assert report.cocycle <= 50 * tol
    assert report.causality <= 50 * tol
    assert report.continuity <= 50 * tol
    assert report.passed
    assert report.skipped == 0
    assert len(report.to_frame()) == 100


def test_axioms_skip_blowups(quadratic_model):
    family = sample_family(0.0, 0.5, 3, 1, 1.0, seed=0)
    report = check_axioms(quadratic_model, family, n_cases=10, seed=1, tol=1e-8, state_radius=3.0, t_max=2.0)
    assert report.skipped > 0
    assert report.identity == 0.0


@pytest.mark.parametrize('field_id, params, state_radius, t_max', [
    ('scalar_xu', None, 1.0, 1.0),
    ('scalar_rfc', None, 1.0, 1.0),
    ('linear', {'A': [[0.5]], 'B': [[1.0]]}, 1.0, 1.0),
    ('quadratic', None, 0.5, 0.5),
    ('decay_plus_input', None, 1.0, 1.0),
])
def test_axioms_hold_across_the_catalog(unit_family, field_id, params, state_radius, t_max):
    model = build_model(field_id, params, radius=1.0)
    report = check_axioms(model, unit_family, n_cases=40, seed=2, tol=1e-9, state_radius=state_radius,
                          t_max=t_max)
    assert report.passed, report.residuals
    assert report.skipped == 0


def test_axiom_residuals_shrink_with_the_tolerance(rfc_model, unit_family):
    tols = [1e-5, 1e-7, 1e-9]
    sums = [sum(check_axioms(rfc_model, unit_family, n_cases=30, seed=6, tol=tol).residuals.values())
            for tol in tols]
    for coarse, fine, tol in zip(sums, sums[1:], tols[1:]):
        assert fine <= coarse + 50 * tol
    assert sums[-1] <= sums[0]


def test_linear_lipschitz_is_exponential(unit_family):
    a, tau = 0.5, 1.5
    model = build_model('linear', {'A': [[a]], 'B': [[0.0]]})
    estimate = lipschitz_estimate(model, tau, 1.0, unit_family, n_pairs=5, seed=3)
    assert estimate.empirical == pytest.approx(math.exp(a * tau), rel=1e-6)
    assert estimate.certified == pytest.approx(math.exp(a * tau), rel=1e-6)


def test_scalar_rfc_lipschitz(rfc_model, unit_family):
    estimate = lipschitz_estimate(rfc_model, 1.0, 1.0, unit_family, n_pairs=10, seed=4)
    assert estimate.empirical <= math.e * (1 + 1e-7)
    assert estimate.certified == pytest.approx(math.e, rel=1e-9)
    assert float(estimate) == estimate.certified


def test_scalar_xu_lipschitz(xu_model, unit_family):
    estimate = lipschitz_estimate(xu_model, 1.0, 1.0, unit_family, n_pairs=10, seed=4)
    assert estimate.certified == pytest.approx(math.e, rel=1e-9)
    assert estimate.empirical <= math.e * (1 + 1e-7)


def test_lipschitz_estimates_grow_with_tau(rfc_model, unit_family):
    estimates = lipschitz_estimates(rfc_model, [0.5, 1.0, 2.0], 1.0, unit_family, n_pairs=5, seed=0)
    values = [e.empirical for e in estimates]
    assert values == sorted(values)
    assert [e.certified for e in estimates] == pytest.approx([math.exp(t) for t in (0.5, 1.0, 2.0)], rel=1e-9)


def test_sample_states():
    rng = np.random.default_rng(0)
    sphere = sample_states(rng, 3, 2.0, 50, surface=True)
    assert np.allclose(np.linalg.norm(sphere, axis=1), 2.0)
    ball = sample_states(rng, 3, 2.0, 50)
    assert np.all(np.linalg.norm(ball, axis=1) <= 2.0 + 1e-12)


def test_map_jobs_keeps_order():
    assert map_jobs(lambda v: v * v, list(range(10)), jobs=4) == [v * v for v in range(10)]


def test_certified_lipschitz_uses_the_envelope(quadratic_model):
    family = sample_family(0.0, 0.5, 3, 1, 1.0, seed=0)
    bounded = lipschitz_estimates(quadratic_model, [0.5], 0.5, family, n_pairs=4, seed=1,
                                  envelope=lambda r, t: 1.0)[0]
    assert bounded.r_env == 1.0
    assert bounded.certified == pytest.approx(math.e, rel=1e-9)
    sampled = lipschitz_estimates(quadratic_model, [0.5], 0.5, family, n_pairs=4, seed=1)[0]
    assert 0.5 <= sampled.max_norm <= 2.0 / 3.0 + 1e-9
    assert sampled.r_env == sampled.max_norm
    assert sampled.certified == pytest.approx(math.exp(sampled.max_norm), rel=1e-9)


def test_field_speed_of_the_contraction(contraction_model):
    rng = np.random.default_rng(0)
    assert field_speed(contraction_model, 2.0, np.array([[0.0]]), rng) == pytest.approx(2.0)
    assert field_speed(contraction_model, 0.0, np.array([[1.0]]), rng) == 0.0

import math

import numpy as np
import pytest

from errors import ContractError, DomainError, UnsupportedSignalError
from signals import (DisturbanceFamily, Signal, closure_check, concat, lp_norm, sample_family, shift,
                     sup_norm, value_lattice)


def step(a=1.0, b=2.0, at=1.0):
    return Signal.piecewise([at], [a], b)


def test_norms():
    assert sup_norm(Signal.constant(2.0)) == 2.0
    assert lp_norm(Signal.indicator(0.0, 1.0), 1) == 1.0
    assert sup_norm(Signal.piecewise([1.0, 2.0], [1.0, -3.0], 0.0)) == 3.0
    assert lp_norm(Signal.indicator(0.0, 4.0, level=2.0), 2) == pytest.approx(4.0)


def test_lp_norm_needs_compact_support():
    with pytest.raises(UnsupportedSignalError):
        lp_norm(Signal.constant(1.0), 1)
    with pytest.raises(DomainError):
        lp_norm(Signal.indicator(0.0, 1.0), 0.5)


def test_value_at_is_right_continuous():
    u = step()
    assert u.value_at(0.0)[0] == 1.0
    assert u.value_at(0.999)[0] == 1.0
    assert u.value_at(1.0)[0] == 2.0
    with pytest.raises(DomainError):
        u.value_at(-1.0)


def test_piecewise_merges_equal_neighbours():
    u = Signal.piecewise([1.0, 2.0, 3.0], [1.0, 1.0, 0.0], 0.0)
    assert list(u.switch_times) == [2.0]
    with pytest.raises(ContractError):
        Signal([2.0, 1.0], [[0.0], [1.0]], [0.0])


def test_shift():
    c = Signal.constant(0.3)
    assert shift(c, 5.0).same_as(c)

    half = shift(step(), 0.5)
    assert list(half.switch_times) == [0.5]
    assert half.value_at(0.2)[0] == 1.0
    assert half.value_at(0.5)[0] == 2.0

    past = shift(step(), 2.0)
    assert past.same_as(Signal.constant(2.0))

    with pytest.raises(DomainError):
        shift(c, -1.0)


def test_concat():
    joined = concat(Signal.constant(1.0), Signal.constant(2.0), 1.0)
    assert joined.value_at(0.5)[0] == 1.0
    assert joined.value_at(1.0)[0] == 2.0
    assert joined.value_at(7.0)[0] == 2.0

    box = Signal.indicator(0.0, 1.0)
    assert lp_norm(concat(box, box, 1.0), 1) == pytest.approx(2.0)

    with pytest.raises(DomainError):
        concat(box, box, 0.0)


def test_concat_then_shift_recovers_the_tail_signal():
    u1 = Signal.piecewise([0.5, 1.5], [1.0, -1.0], 0.0)
    u2 = Signal.piecewise([0.5], [0.0], 1.0)
    assert shift(concat(u1, u2, 1.0), 1.0).same_as(u2)


def test_value_lattice():
    assert value_lattice(1.0, 3).ravel().tolist() == [-1.0, 0.0, 1.0]
    assert value_lattice(0.0, 5).shape == (1, 1)
    # corners of the square fall outside the unit ball
    assert len(value_lattice(1.0, 3, input_dim=2)) == 5


def test_sample_family_zero_radius():
    family = sample_family(0.0, 0.5, 3, 10, 2.0, seed=7)
    assert len(family) == 1
    assert family[0].same_as(Signal.constant(0.0))


def test_sample_family_unit_ball():
    family = sample_family(1.0, 0.5, 3, 10, 2.0, seed=7)
    assert len(family) == 13
    assert all(sup_norm(u) <= 1.0 for u in family)
    assert all(u.is_on_grid(0.5) for u in family)
    for value in (-1.0, 0.0, 1.0):
        assert any(u.same_as(Signal.constant(value)) for u in family)


def test_sample_family_is_deterministic():
    a = sample_family(1.0, 0.5, 3, 10, 2.0, seed=7)
    b = sample_family(1.0, 0.5, 3, 10, 2.0, seed=7)
    assert a.to_dict() == b.to_dict()


def test_sample_family_rejects_unbounded_ball():
    with pytest.raises(DomainError):
        sample_family(math.inf, 0.5, 3, 10, 2.0, seed=7)


def test_family_json_shape():
    family = sample_family(1.0, 0.5, 3, 2, 1.0, seed=1)
    data = family.to_dict()
    assert set(data) >= {'R', 'delta', 'lattice', 'seed', 'members'}
    again = DisturbanceFamily.from_dict(data)
    assert len(again) == len(family)
    assert all(u.same_as(v) for u, v in zip(again, family))


def test_family_rejects_members_outside_the_ball():
    with pytest.raises(ContractError):
        DisturbanceFamily.from_members([Signal.constant(2.0)], 1.0, 0.5)


def test_closure_sup_family_is_closed():
    family = sample_family(1.0, 0.5, 3, 4, 2.0, seed=7)
    report = closure_check(family, 'sup')
    assert report.closed
    assert report.witness is None
    assert report.pairs_checked == len(family) ** 2 * len(family.grid_times())


def test_closure_l1_family_has_a_witness():
    box = Signal.indicator(0.0, 1.0)
    family = DisturbanceFamily.from_members([box], 1.0, 1.0, norm_kind='lp', p=1.0)
    report = closure_check(family, 'lp', p=1.0)
    assert not report.closed
    u1, u2, t = report.witness
    assert t == 1.0
    assert report.witness_norm == pytest.approx(2.0)
    assert report.to_dict()['witness']['norm'] == pytest.approx(2.0)


@pytest.mark.parametrize('norm_kind', ['sup', 'lp'])
def test_closure_zero_family_is_closed(norm_kind):
    family = sample_family(0.0, 0.5, 3, 4, 2.0, seed=7)
    assert closure_check(family, norm_kind, p=1.0).closed


def test_signal_json_shape():
    u = Signal.piecewise([0.5], [[1.0]], [0.0])
    assert u.to_dict() == {'switch_times': [0.5], 'values': [[1.0]], 'tail': [0.0]}
    assert Signal.from_dict(u.to_dict()).same_as(u)
    assert np.array_equal(u(np.array([0.0, 0.6])).ravel(), [1.0, 0.0])

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import BelowRangeError, ContractError, DomainError
from kfun import GkFn, MonotoneFn, gk_eval, lipschitz_lower_bound, triangle_split_check


def two_s():
    return MonotoneFn([0.0, 1.0], [0.0, 2.0], 2.0)


def test_eval_interpolates_and_extends():
    assert MonotoneFn.identity()(3.0) == 3.0
    assert two_s()(0.5) == 1.0
    assert two_s()(2.0) == 4.0
    assert_allclose(two_s()(np.array([0.0, 0.25, 3.0])), [0.0, 0.5, 6.0])


def test_eval_rejects_negative_arguments():
    with pytest.raises(DomainError):
        two_s()(-0.1)


def test_invert():
    assert MonotoneFn.identity().invert(3.0) == 3.0
    assert two_s().invert(4.0) == 2.0
    with pytest.raises(BelowRangeError):
        MonotoneFn.linear(1.0, offset=1.0).invert(0.5)


def test_invert_undoes_eval_on_random_functions():
    rng = np.random.default_rng(0)
    for _ in range(200):
        knots = np.concatenate([[0.0], np.cumsum(rng.uniform(0.01, 1.0, 8))])
        values = np.concatenate([[rng.uniform(-1, 1)], rng.uniform(0.01, 2.0, 8)]).cumsum()
        f = MonotoneFn(knots, values, rng.uniform(0.1, 3.0))
        s = rng.uniform(0, 12, 50)
        assert_allclose(f.invert(f(s)), s, rtol=1e-12, atol=1e-12)


def test_constructor_contracts():
    with pytest.raises(ContractError):
        MonotoneFn([0.0, 1.0], [0.0, 0.0], 1.0)
    with pytest.raises(ContractError):
        MonotoneFn([0.5, 1.0], [0.0, 1.0], 1.0)
    with pytest.raises(ContractError):
        MonotoneFn([0.0, 1.0], [0.0, 1.0], 0.0)


def test_from_points_lifts_flat_stretches():
    f = MonotoneFn.from_points([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 1.0, 0.5])
    assert np.all(np.diff(f.values) > 0)
    assert f(2.0) >= 1.0
    assert f.tail_slope > 0


def test_constant_function_may_be_negative():
    f = MonotoneFn.constant(-1.0)
    assert f(0.0) == -1.0
    assert f(100.0) == pytest.approx(-1.0, abs=1e-9)
    assert not f.is_kinf


def test_inverse_fn_requires_kinf():
    inv = two_s().inverse_fn()
    assert inv(4.0) == pytest.approx(2.0)
    with pytest.raises(ContractError):
        MonotoneFn.linear(1.0, offset=1.0).inverse_fn()


def test_json_shape():
    data = two_s().to_dict()
    assert set(data) == {'knots', 'values', 'tail_slope', 's_max'}
    assert MonotoneFn.from_dict(data)(5.0) == 10.0


@pytest.mark.parametrize('k, r, expected', [(2, 1.0, 0.5), (3, 0.1, 0.0), (1, 2.5, 1.5)])
def test_gk_eval(k, r, expected):
    assert gk_eval(k, r) == pytest.approx(expected)
    assert GkFn(k)(r) == pytest.approx(expected)


def test_gk_rejects_nonpositive_index():
    with pytest.raises(DomainError):
        GkFn(0)


def test_gk_properties_on_random_draws():
    rng = np.random.default_rng(1)
    k = rng.integers(1, 50, 10_000)
    r1 = rng.uniform(0, 10, 10_000)
    r2 = rng.uniform(0, 10, 10_000)
    a = rng.uniform(1, 10, 10_000)
    g1 = np.array([gk_eval(int(kk), x) for kk, x in zip(k, r1)])
    g2 = np.array([gk_eval(int(kk), x) for kk, x in zip(k, r2)])
    ulp = 4 * np.finfo(float).eps * np.maximum(1.0, np.maximum(r1, r2))
    assert np.all(np.abs(g1 - g2) <= np.abs(r1 - r2) + ulp)
    scaled = np.array([gk_eval(int(kk), aa * x) for kk, aa, x in zip(k, a, r1)])
    assert np.all(scaled <= a * g1 + (a - 1) / k + 4 * np.finfo(float).eps * np.maximum(1.0, a * r1))
    assert np.all(g1 <= np.array([gk_eval(int(kk) + 1, x) for kk, x in zip(k, r1)]))


def brute_force_minorant(alpha: MonotoneFn, s: np.ndarray) -> np.ndarray:
    """inf over sigma in [0, s] of alpha(sigma) + s - sigma; the infimum sits at a knot or at s"""
    out = np.empty_like(s)
    for i, x in enumerate(s):
        sigma = np.append(alpha.knots[alpha.knots <= x], x)
        out[i] = np.min(alpha(sigma) + x - sigma)
    return out


@pytest.mark.parametrize('alpha', [
    MonotoneFn.identity(),
    MonotoneFn.power(2.0),
    MonotoneFn.linear(2.0),
    MonotoneFn.from_callable(np.expm1, s_max=20.0),
], ids=['id', 's^2', '2s', 'exp-1'])
def test_lipschitz_lower_bound_matches_oracle(alpha):
    rho = lipschitz_lower_bound(alpha)
    s = np.linspace(0.0, 10.0, 2001)
    values = rho(s)
    assert_allclose(values, brute_force_minorant(alpha, s), atol=1e-9)
    assert rho.is_kinf
    assert np.all(values <= alpha(s) + 1e-9)
    slopes = np.diff(values) / np.diff(s)
    assert np.all(slopes <= 1.0 + 1e-9)
    assert np.all(np.diff(values) > 0)


def test_lipschitz_lower_bound_of_square():
    rho = lipschitz_lower_bound(MonotoneFn.power(2.0))
    assert rho(0.25) == pytest.approx(0.0625, abs=1e-3)
    assert rho(3.0) == pytest.approx(2.75, abs=1e-3)
    assert rho.invert(0.75) == pytest.approx(1.0, abs=1e-3)


def test_lipschitz_lower_bound_simple_cases():
    assert lipschitz_lower_bound(MonotoneFn.identity())(7.0) == pytest.approx(7.0)
    assert lipschitz_lower_bound(MonotoneFn.linear(2.0))(7.0) == pytest.approx(7.0)
    with pytest.raises(ContractError):
        lipschitz_lower_bound(MonotoneFn.linear(1.0, offset=1.0))


def test_triangle_split():
    square = MonotoneFn.power(2.0)
    assert triangle_split_check(MonotoneFn.identity(), 1, 2, 3)
    assert triangle_split_check(square, 1, 1, 1)
    assert triangle_split_check(square, 0, 0, 0)

    rng = np.random.default_rng(2)
    fns = [MonotoneFn.identity(), square, MonotoneFn.power(0.5), MonotoneFn.linear(3.0)]
    for _ in range(10_000):
        a, b, c = rng.uniform(0, 50, 3)
        assert triangle_split_check(fns[rng.integers(len(fns))], a, b, c)


def test_power_is_close_to_the_formula():
    f = MonotoneFn.power(2.0)
    assert f(3.0) == pytest.approx(9.0, rel=1e-2)
    assert math.isclose(f(0.0), 0.0)

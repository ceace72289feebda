"""
Comparison functions
Strictly increasing piecewise-linear functions on [0, inf), the clipping
family G_k, and the unit-Lipschitz lower bound of a K-infinity function.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict

import numpy as np

from config import Config
from errors import BelowRangeError, ContractError, DomainError

logger = logging.getLogger(__name__)


def _readonly(array_like) -> np.ndarray:
    arr = np.array(array_like, dtype=float)
    arr.setflags(write=False)
    return arr


def _scalar_or_array(out: np.ndarray):
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class MonotoneFn:
    """
    Continuous, strictly increasing, piecewise-linear function on [0, inf).

    Linear interpolation between `knots`, linear extension with `tail_slope`
    beyond the last knot. Every class-K and K-infinity object of the toolkit
    (xi, zeta, rho, psi_1, psi_2, gamma and their inverses) is one of these.
    """
    knots: np.ndarray
    values: np.ndarray
    tail_slope: float

    def __post_init__(self):
        knots = _readonly(self.knots)
        values = _readonly(self.values)
        object.__setattr__(self, 'knots', knots)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'tail_slope', float(self.tail_slope))

        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 1:
            raise ContractError("knots and values must be equally long 1-D sequences")
        if knots[0] != 0.0:
            raise ContractError(f"knots must start at 0, got {knots[0]!r}")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ContractError("knots and values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ContractError("knots must be strictly ascending")
        if np.any(np.diff(values) <= 0):
            raise ContractError("values must be strictly increasing across knots")
        if not (np.isfinite(self.tail_slope) and self.tail_slope > 0):
            raise ContractError(f"tail_slope must be positive, got {self.tail_slope!r}")

    # ------------------------------------------------------------------
    # Construction helpers

    @classmethod
    def identity(cls) -> 'MonotoneFn':
        return cls([0.0, 1.0], [0.0, 1.0], 1.0)

    @classmethod
    def linear(cls, slope: float, offset: float = 0.0) -> 'MonotoneFn':
        return cls([0.0, 1.0], [offset, offset + slope], slope)

    @classmethod
    def constant(cls, level: float, floor: float = Config.SLOPE_FLOOR) -> 'MonotoneFn':
        """Numerically constant function; strictness comes from the slope floor"""
        return cls.from_points([0.0, 1.0], [level, level], tail_slope=floor, floor=floor)

    @classmethod
    def from_points(cls, knots, values, tail_slope: float | None = None,
                    floor: float = Config.SLOPE_FLOOR) -> 'MonotoneFn':
        """
        Build from samples, lifting flat or decreasing stretches so that every
        segment has slope at least `floor`.
        """
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        order = np.argsort(k, kind='stable')
        k, v = k[order], v[order]
        keep = np.concatenate([[True], np.diff(k) > 0])
        k, v = k[keep], v[keep]

        lifted = np.maximum.accumulate(v - floor * k) + floor * k
        for i in range(1, lifted.size):
            if lifted[i] <= lifted[i - 1]:
                lifted[i] = np.nextafter(lifted[i - 1], np.inf)

        if tail_slope is None:
            if k.size >= 2:
                tail_slope = (lifted[-1] - lifted[-2]) / (k[-1] - k[-2])
            else:
                tail_slope = 1.0
        return cls(k, lifted, max(float(tail_slope), floor))

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], Any], s_max: float = Config.KNOT_S_MAX,
                      n_knots: int = Config.KNOT_COUNT, s_min: float = Config.KNOT_S_MIN,
                      tail_slope: float | None = None) -> 'MonotoneFn':
        """Tabulate `fn` on 0 plus a log-spaced grid over [s_min, s_max]"""
        if n_knots < 3:
            raise DomainError("need at least 3 knots")
        knots = np.concatenate([[0.0], np.geomspace(s_min, s_max, n_knots - 1)])
        with np.errstate(over='raise', invalid='raise'):
            values = np.asarray(fn(knots), dtype=float)
        if values.shape != knots.shape:
            values = np.array([float(fn(s)) for s in knots])
        return cls.from_points(knots, values, tail_slope=tail_slope)

    @classmethod
    def power(cls, p: float, scale: float = 1.0, s_max: float = Config.KNOT_S_MAX,
              n_knots: int = Config.KNOT_COUNT) -> 'MonotoneFn':
        if p == 1.0:
            return cls.linear(scale)
        return cls.from_callable(lambda s: scale * np.power(s, p), s_max=s_max, n_knots=n_knots)

    # ------------------------------------------------------------------
    # Properties

    @property
    def value_at_zero(self) -> float:
        return float(self.values[0])

    @property
    def s_max(self) -> float:
        return float(self.knots[-1])

    @property
    def is_kinf(self) -> bool:
        return self.values[0] == 0.0

    # ------------------------------------------------------------------
    # Evaluation

    def __call__(self, s):
        return self.eval(s)

    def eval(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(np.isnan(s_arr)) or np.any(s_arr < 0):
            raise DomainError(f"MonotoneFn is defined on [0, inf), got {s!r}")
        inside = np.interp(s_arr, self.knots, self.values)
        tail = self.values[-1] + self.tail_slope * (s_arr - self.knots[-1])
        return _scalar_or_array(np.where(s_arr > self.knots[-1], tail, inside))

    def invert(self, y):
        y_arr = np.asarray(y, dtype=float)
        if np.any(np.isnan(y_arr)) or np.any(y_arr < self.values[0]):
            raise BelowRangeError(y, self.value_at_zero)
        inside = np.interp(y_arr, self.values, self.knots)
        tail = self.knots[-1] + (y_arr - self.values[-1]) / self.tail_slope
        return _scalar_or_array(np.where(y_arr > self.values[-1], tail, inside))

    def inverse_fn(self) -> 'MonotoneFn':
        """The inverse function; only defined for K-infinity functions"""
        if not self.is_kinf:
            raise ContractError("inverse_fn requires a K-infinity function (value 0 at 0)")
        return MonotoneFn(self.values, self.knots, 1.0 / self.tail_slope)

    # ------------------------------------------------------------------
    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        return {
            'knots': [float(v) for v in self.knots],
            'values': [float(v) for v in self.values],
            'tail_slope': self.tail_slope,
            's_max': self.s_max,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MonotoneFn':
        try:
            return cls(data['knots'], data['values'], data['tail_slope'])
        except KeyError as e:
            raise ContractError(f"MonotoneFn JSON is missing {e}") from e

    def __repr__(self):
        return (f"MonotoneFn(n_knots={self.knots.size}, f(0)={self.value_at_zero:.6g}, "
                f"s_max={self.s_max:.6g}, tail_slope={self.tail_slope:.6g})")


@dataclass(frozen=True)
class GkFn:
    """G_k: r -> max{r - 1/k, 0}"""
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k!r}")

    def __call__(self, r):
        return gk_eval(self.k, r)


def gk_eval(k: int, r):
    out = np.maximum(np.asarray(r, dtype=float) - 1.0 / k, 0.0)
    return _scalar_or_array(out)


def lipschitz_lower_bound(alpha: MonotoneFn) -> MonotoneFn:
    """
    Largest unit-Lipschitz minorant of alpha:
        rho(s) = inf_{sigma in [0, s]} (alpha(sigma) + s - sigma).

    With g = alpha - id, rho(s) = s + min_{[0, s]} g. For piecewise-linear
    alpha the running minimum is piecewise linear; its breakpoints are the
    knots of alpha plus the points where g returns to an earlier minimum, so
    the result is exact rather than re-sampled.
    """
    if not alpha.is_kinf:
        raise ContractError("lipschitz_lower_bound requires a K-infinity function")

    k, v = alpha.knots, alpha.values
    g = v - k
    out_k = [0.0]
    out_v = [0.0]
    m = g[0]
    for i in range(1, k.size):
        a, b = k[i - 1], k[i]
        ga, gb = g[i - 1], g[i]
        if gb < m:
            if ga > m:
                s_c = a + (ga - m) / (ga - gb) * (b - a)
                if a < s_c < b:
                    out_k.append(s_c)
                    out_v.append(s_c + m)
            m = gb
            out_k.append(b)
            out_v.append(v[i])
        else:
            out_k.append(b)
            out_v.append(b + m)

    tail = alpha.tail_slope
    if tail >= 1.0:
        tail_slope = 1.0
    else:
        g_last = g[-1]
        if g_last > m:
            s_c = k[-1] + (g_last - m) / (1.0 - tail)
            out_k.append(s_c)
            out_v.append(s_c + m)
        tail_slope = tail

    rho = MonotoneFn.from_points(out_k, out_v, tail_slope=tail_slope)
    logger.debug(f"Unit-Lipschitz minorant built with {rho.knots.size} knots")
    return rho


def triangle_split_check(alpha: MonotoneFn, a: float, b: float, c: float) -> bool:
    """alpha(a + b + c) <= alpha(3a) + alpha(3b) + alpha(3c)"""
    return bool(alpha(a + b + c) <= alpha(3 * a) + alpha(3 * b) + alpha(3 * c))

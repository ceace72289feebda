"""
Input and disturbance signals
Piecewise-constant signals with shift / concatenation, their norms, and
finite lattice families that approximate the disturbance ball D.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, DomainError, UnsupportedSignalError

logger = logging.getLogger(__name__)

GRID_EPS = 1e-9


def _as_matrix(values, m=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if m in (None, 1) else arr.reshape(-1, m)
    if arr.size == 0:
        arr = arr.reshape(0, m or 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Signal:
    """
    Right-continuous piecewise-constant signal on [0, inf).

    `values[i]` holds on [switch_times[i-1], switch_times[i]) with an implicit
    switch at 0; `tail` holds from the last switch on.
    """
    switch_times: np.ndarray
    values: np.ndarray
    tail: np.ndarray

    def __post_init__(self):
        tail = np.array(self.tail, dtype=float).reshape(-1)
        tail.setflags(write=False)
        times = np.array(self.switch_times, dtype=float).reshape(-1)
        times.setflags(write=False)
        values = _as_matrix(self.values, tail.size)
        object.__setattr__(self, 'tail', tail)
        object.__setattr__(self, 'switch_times', times)
        object.__setattr__(self, 'values', values)

        if values.shape[0] != times.size:
            raise ContractError("one value per switch interval is required")
        if values.shape[1] != tail.size:
            raise ContractError("segment values and tail must share the input dimension")
        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ContractError("switch times must be positive and strictly ascending")

    # ------------------------------------------------------------------

    @classmethod
    def constant(cls, value) -> 'Signal':
        tail = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.empty(0), np.empty((0, tail.size)), tail)

    @classmethod
    def piecewise(cls, switch_times: Sequence[float], values, tail) -> 'Signal':
        """Build and merge neighbouring segments that carry the same value"""
        tail = np.atleast_1d(np.asarray(tail, dtype=float))
        vals = _as_matrix(values, tail.size)
        times = np.asarray(switch_times, dtype=float)
        segs = list(zip(times, vals)) + [(math.inf, tail)]
        merged_t: List[float] = []
        merged_v: List[np.ndarray] = []
        for t_end, v in segs:
            if merged_v and np.array_equal(merged_v[-1], v):
                merged_t[-1] = t_end
            else:
                merged_t.append(t_end)
                merged_v.append(v)
        return cls(merged_t[:-1], np.array(merged_v[:-1]).reshape(-1, tail.size), merged_v[-1])

    @classmethod
    def indicator(cls, start: float, stop: float, level=1.0) -> 'Signal':
        level = np.atleast_1d(np.asarray(level, dtype=float))
        zero = np.zeros_like(level)
        if start <= 0:
            return cls.piecewise([stop], [level], zero)
        return cls.piecewise([start, stop], [zero, level], zero)

    @property
    def input_dim(self) -> int:
        return int(self.tail.size)

    @property
    def last_switch(self) -> float:
        return float(self.switch_times[-1]) if self.switch_times.size else 0.0

    def segment_index(self, t: float) -> int:
        return int(np.searchsorted(self.switch_times, t, side='right'))

    def value_at(self, t: float) -> np.ndarray:
        if t < 0:
            raise DomainError(f"signals are defined on [0, inf), got t={t!r}")
        i = self.segment_index(t)
        return self.tail if i >= self.switch_times.size else self.values[i]

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([self.value_at(s) for s in t_arr])

    def breakpoints(self, horizon: float) -> np.ndarray:
        """Switch times strictly inside (0, horizon)"""
        return self.switch_times[self.switch_times < horizon]

    def segments(self):
        """(start, stop, value) triples; the last one is the unbounded tail"""
        starts = np.concatenate([[0.0], self.switch_times])
        stops = np.concatenate([self.switch_times, [math.inf]])
        vals = list(self.values) + [self.tail]
        return list(zip(starts, stops, vals))

    def is_on_grid(self, delta: float) -> bool:
        ratios = self.switch_times / delta
        return bool(np.all(np.abs(ratios - np.round(ratios)) <= GRID_EPS * np.maximum(1.0, ratios)))

    # ------------------------------------------------------------------
    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        return {
            'switch_times': [float(t) for t in self.switch_times],
            'values': [[float(c) for c in v] for v in self.values],
            'tail': [float(c) for c in self.tail],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Signal':
        try:
            tail = np.atleast_1d(np.asarray(data['tail'], dtype=float))
            return cls(data.get('switch_times', []), np.asarray(data.get('values', []), dtype=float).reshape(-1, tail.size), tail)
        except KeyError as e:
            raise ContractError(f"Signal JSON is missing {e}") from e

    def same_as(self, other: 'Signal') -> bool:
        return (np.array_equal(self.switch_times, other.switch_times)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.tail, other.tail))

    def __repr__(self):
        return f"Signal(switches={self.switch_times.size}, sup={sup_norm(self):.6g})"


def _pointwise_norms(values: np.ndarray) -> np.ndarray:
    return np.linalg.norm(values, axis=-1) if values.size else np.zeros(0)


def sup_norm(u: Signal) -> float:
    return float(max(np.max(_pointwise_norms(u.values), initial=0.0), np.linalg.norm(u.tail)))


def lp_norm(u: Signal, p: float) -> float:
    if p < 1:
        raise DomainError(f"p must be at least 1, got {p!r}")
    if np.any(u.tail != 0):
        raise UnsupportedSignalError("Lp norm needs compact support (zero tail)")
    if not u.switch_times.size:
        return 0.0
    lengths = np.diff(np.concatenate([[0.0], u.switch_times]))
    return float(np.sum(lengths * _pointwise_norms(u.values) ** p) ** (1.0 / p))


def shift(u: Signal, tau: float) -> Signal:
    """s -> u(s + tau)"""
    if tau < 0:
        raise DomainError(f"shift needs tau >= 0, got {tau!r}")
    if tau == 0:
        return u
    keep = u.switch_times > tau
    first = int(np.argmax(keep)) if np.any(keep) else u.switch_times.size
    return Signal(u.switch_times[keep] - tau, u.values[first:], u.tail)


def concat(u1: Signal, u2: Signal, t: float) -> Signal:
    """u1 on [0, t), u2(. - t) afterwards (right-continuous version of the concatenation)"""
    if t <= 0:
        raise DomainError(f"concatenation time must be positive, got {t!r}")
    if u1.input_dim != u2.input_dim:
        raise ContractError("cannot concatenate signals of different input dimension")
    before = u1.switch_times < t
    times = list(u1.switch_times[before]) + [t]
    last_index = int(np.count_nonzero(before))
    head_last = u1.values[last_index] if last_index < u1.switch_times.size else u1.tail
    values = list(u1.values[before]) + [head_last]
    times += list(u2.switch_times + t)
    values += list(u2.values)
    return Signal.piecewise(times, np.array(values).reshape(-1, u1.input_dim), u2.tail)


# ----------------------------------------------------------------------
# Disturbance families


@dataclass(frozen=True, eq=False)
class DisturbanceFamily:
    """Finite set of lattice-valued signals with switches on a delta grid"""
    radius: float
    delta: float
    lattice: np.ndarray
    members: Tuple[Signal, ...]
    horizon: float
    seed: Optional[int] = None
    norm_kind: str = 'sup'
    p: float = math.inf
    n_random: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.delta <= 0:
            raise DomainError(f"grid step must be positive, got {self.delta!r}")
        if not self.members:
            raise ContractError("a disturbance family needs at least one member")
        for u in self.members:
            if self.norm_of(u) > self.radius * (1 + 1e-12):
                raise ContractError(f"member {u!r} exceeds the radius {self.radius}")

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i) -> Signal:
        return self.members[i]

    def norm_of(self, u: Signal) -> float:
        return sup_norm(u) if self.norm_kind == 'sup' else lp_norm(u, self.p)

    def grid_times(self) -> np.ndarray:
        n = int(round(self.horizon / self.delta))
        return self.delta * np.arange(1, max(n, 0) + 1)

    @classmethod
    def from_members(cls, members: Sequence[Signal], radius: float, delta: float,
                     norm_kind: str = 'sup', p: float = math.inf,
                     horizon: Optional[float] = None) -> 'DisturbanceFamily':
        members = tuple(members)
        m = members[0].input_dim if members else 1
        lattice = np.unique(np.concatenate([np.vstack([u.values, u.tail]) for u in members]), axis=0) \
            if members else np.zeros((1, m))
        if horizon is None:
            horizon = max((u.last_switch for u in members), default=delta)
            horizon = max(delta, delta * math.ceil(horizon / delta - GRID_EPS))
        return cls(radius=radius, delta=delta, lattice=lattice, members=members,
                   horizon=horizon, norm_kind=norm_kind, p=p)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'R': self.radius if math.isfinite(self.radius) else 'inf',
            'delta': self.delta,
            'lattice': [[float(c) for c in v] for v in self.lattice],
            'seed': self.seed,
            'horizon': self.horizon,
            'norm': self.norm_kind if self.norm_kind == 'sup' else f'lp{self.p:g}',
            'members': [u.to_dict() for u in self.members],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DisturbanceFamily':
        norm = str(data.get('norm', 'sup'))
        norm_kind, p = ('sup', math.inf) if norm == 'sup' else ('lp', float(norm[2:]))
        radius = math.inf if data['R'] == 'inf' else float(data['R'])
        return cls(radius=radius, delta=float(data['delta']),
                   lattice=np.asarray(data['lattice'], dtype=float),
                   members=tuple(Signal.from_dict(d) for d in data['members']),
                   horizon=float(data['horizon']), seed=data.get('seed'),
                   norm_kind=norm_kind, p=p)


def value_lattice(radius: float, lattice_size: int, input_dim: int = 1) -> np.ndarray:
    """Per-coordinate uniform grid on [-R, R], restricted to the R-ball"""
    if radius == 0 or lattice_size <= 1:
        return np.zeros((1, input_dim))
    axis = np.linspace(-radius, radius, lattice_size)
    points = np.array(list(itertools.product(axis, repeat=input_dim)))
    inside = np.linalg.norm(points, axis=1) <= radius * (1 + 1e-12)
    return points[inside]


def sample_family(radius: float, delta: float, lattice_size: int, n_random: int,
                  horizon: float, seed: int, input_dim: int = 1) -> DisturbanceFamily:
    """
    n_random random lattice signals on the delta grid up to `horizon`, plus
    every constant signal at a lattice value. Deterministic in `seed`.
    """
    if radius < 0:
        raise DomainError(f"radius must be nonnegative, got {radius!r}")
    if not math.isfinite(radius):
        raise DomainError("an unbounded disturbance ball cannot be sampled")
    if delta <= 0 or n_random < 1:
        raise DomainError("need delta > 0 and at least one random member")

    lattice = value_lattice(radius, lattice_size, input_dim)
    rng = np.random.default_rng(seed)
    n_cells = max(1, int(round(horizon / delta)))
    times = delta * np.arange(1, n_cells + 1)

    members: List[Signal] = [Signal.constant(v) for v in lattice]
    attempts = 0
    n_drawn = 0
    while n_drawn < n_random and attempts < 50 * n_random:
        attempts += 1
        cells = lattice[rng.integers(len(lattice), size=n_cells)]
        tail = lattice[rng.integers(len(lattice))]
        candidate = Signal.piecewise(times, cells, tail)
        if any(candidate.same_as(u) for u in members):
            continue
        members.append(candidate)
        n_drawn += 1

    if n_drawn < n_random:
        logger.debug(f"Lattice admits only {n_drawn} distinct random members (asked for {n_random})")

    family = DisturbanceFamily(radius=float(radius), delta=float(delta), lattice=lattice,
                               members=tuple(members), horizon=float(n_cells * delta),
                               seed=seed, n_random=n_random)
    logger.debug(f"Sampled disturbance family: {len(family)} members, R={radius}, delta={delta}")
    return family


@dataclass
class ClosureReport:
    closed: bool
    norm_kind: str
    pairs_checked: int
    witness: Optional[Tuple[Signal, Signal, float]] = None
    witness_norm: Optional[float] = None
    shift_violations: int = 0

    def to_dict(self) -> Dict[str, Any]:
        out = {
            'closed': self.closed,
            'norm': self.norm_kind,
            'pairs_checked': self.pairs_checked,
            'shift_violations': self.shift_violations,
            'witness': None,
        }
        if self.witness is not None:
            u1, u2, t = self.witness
            out['witness'] = {'u1': u1.to_dict(), 'u2': u2.to_dict(), 't': t, 'norm': self.witness_norm}
        return out


def closure_check(family: DisturbanceFamily, norm_kind: str = 'sup', p: float = 1.0,
                  max_pairs: Optional[int] = None) -> ClosureReport:
    """
    Concatenate every ordered pair of members at every grid time and shift
    every member by every grid time; report whether the norm bound survives.
    """
    times = family.grid_times()
    if norm_kind == 'sup':
        norm = sup_norm
    else:
        def norm(u):
            return lp_norm(u, p)

    tol = 1e-12 * max(1.0, family.radius)
    shift_violations = 0
    for u in family.members:
        try:
            base = norm(u)
        except UnsupportedSignalError:
            continue
        for tau in times:
            if norm(shift(u, tau)) > base + tol:
                shift_violations += 1

    checked = 0
    for u1, u2 in itertools.product(family.members, repeat=2):
        for t in times:
            if max_pairs is not None and checked >= max_pairs:
                break
            checked += 1
            joined = concat(u1, u2, t)
            try:
                value = norm(joined)
            except UnsupportedSignalError:
                continue
            off_grid = not joined.is_on_grid(family.delta)
            if value > family.radius + tol or off_grid:
                logger.info(f"Concatenation at t={t:g} leaves the ball: norm {value:.6g} > R={family.radius:g}")
                return ClosureReport(False, norm_kind, checked, (u1, u2, float(t)), value, shift_violations)

    return ClosureReport(shift_violations == 0, norm_kind, checked, shift_violations=shift_violations)

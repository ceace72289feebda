"""
Reachability envelopes
Sampled estimates of mu(r, t), their reduction to xi(|x|) + xi(t) + c,
RFC bound checks and divergence probes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from config import Config
from errors import ContractError, DomainError, NonRfcWitness
from flow import SystemModel, evolve, map_jobs, sample_states
from kfun import MonotoneFn
from signals import DisturbanceFamily, Signal, sample_family

logger = logging.getLogger(__name__)


@dataclass
class CheckReport:
    """Outcome of a numerical check: verdict, worst violation, pads and per-sample rows"""
    name: str
    passed: bool
    max_violation: float
    pads: Dict[str, float] = field(default_factory=dict)
    records: List[Dict[str, Any]] = field(default_factory=list, repr=False)
    witness: Optional[Dict[str, Any]] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {'check': self.name, 'pass': self.passed, 'max_violation': self.max_violation,
               'pads': dict(self.pads), 'witness': self.witness}
        out.update(self.details)
        return out

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.records)
        for name, value in self.pads.items():
            if not frame.empty and name not in frame:
                frame[name] = value
        return frame


# ----------------------------------------------------------------------
# Envelopes


def _axis(grid: np.ndarray, values: np.ndarray, axis: int):
    """RegularGridInterpolator needs two points per axis; widen a single node into a constant strip"""
    if grid.size > 1:
        return grid, values
    return np.array([grid[0], grid[0] + 1.0]), np.concatenate([values, values], axis=axis)


@dataclass(frozen=True, eq=False)
class Envelope:
    """
    Monotone table mu_hat(r, t) of the largest sampled state norm, with
    bilinear interpolation (clamped to the grid) in between.
    """
    r_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    family: DisturbanceFamily
    n_sphere: int
    integrator_tol: float = Config.INTEGRATOR_TOL
    maximizers: Dict[float, List[Any]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        r = np.asarray(self.r_grid, dtype=float)
        t = np.asarray(self.t_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (r.size, t.size):
            raise ContractError(f"envelope values have shape {v.shape}, grids need {(r.size, t.size)}")
        object.__setattr__(self, 'r_grid', r)
        object.__setattr__(self, 't_grid', t)
        object.__setattr__(self, 'values', v)

    @property
    def interpolation_tol(self) -> float:
        return 10.0 * self.integrator_tol

    @property
    def is_monotone(self) -> bool:
        slack = self.interpolation_tol * (1.0 + np.abs(self.values))
        return bool(np.all(np.diff(self.values, axis=0) >= -slack[1:, :])
                    and np.all(np.diff(self.values, axis=1) >= -slack[:, 1:]))

    def __call__(self, r, t):
        r_axis, values = _axis(self.r_grid, self.values, 0)
        t_axis, values = _axis(self.t_grid, values, 1)
        interp = RegularGridInterpolator((r_axis, t_axis), values, method='linear')
        rr = np.clip(np.asarray(r, dtype=float), self.r_grid[0], self.r_grid[-1])
        tt = np.clip(np.asarray(t, dtype=float), self.t_grid[0], self.t_grid[-1])
        rr, tt = np.broadcast_arrays(rr, tt)
        out = interp(np.column_stack([rr.ravel(), tt.ravel()])).reshape(rr.shape)
        return float(out) if out.ndim == 0 else out

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, index=pd.Index(self.r_grid, name='r'),
                             columns=[float(t) for t in self.t_grid])
        return frame


def _initial_states(rng: np.random.Generator, n: int, r: float, n_sphere: int, n_interior: int,
                    warm: List[np.ndarray]) -> np.ndarray:
    if r == 0:
        return np.zeros((1, n))
    if n == 1:
        sphere = np.array([[-r], [r]])
    else:
        sphere = sample_states(rng, n, r, n_sphere, surface=True)
    parts = [sphere]
    if n_interior:
        parts.append(sample_states(rng, n, r, n_interior))
    for x in warm:
        norm = np.linalg.norm(x)
        if norm > 0:
            parts.append((r / norm) * np.asarray(x).reshape(1, n))
    return np.vstack(parts)


def _lattice_neighbours(u: Signal, lattice: np.ndarray):
    """Signals that differ from u in one segment value (tail included), restricted to the lattice"""
    for i in range(u.values.shape[0] + 1):
        for v in lattice:
            values = np.array(u.values)
            tail = np.array(u.tail)
            if i < values.shape[0]:
                if np.array_equal(values[i], v):
                    continue
                values[i] = v
            else:
                if np.array_equal(tail, v):
                    continue
                tail = np.array(v)
            yield Signal(u.switch_times, values, tail)


def envelope_estimate(model: SystemModel, family: DisturbanceFamily, r_grid: Sequence[float],
                      t_grid: Sequence[float], n_sphere: int, seed: int,
                      tol: float = Config.INTEGRATOR_TOL, n_interior: Optional[int] = None,
                      refine: bool = False, top_q: int = Config.REFINE_TOP_Q,
                      sweeps: int = Config.REFINE_SWEEPS, jobs: int = 1) -> Envelope:
    """
    mu_hat(r, t) = max |phi(t, x, u)| over sampled |x| <= r and u in the family.

    Per radius the initial states are the sphere samples, interior samples and
    the previous radius's maximizers moved onto the sphere. With `refine`, the
    top-q maximizing signals are hill-climbed over lattice values (one segment
    at a time), which keeps them on the family's switching grid.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if r_grid.size == 0 or t_grid.size == 0:
        raise DomainError("envelope grids must be nonempty")
    if np.any(r_grid < 0) or np.any(t_grid < 0) or np.any(np.diff(r_grid) <= 0) or np.any(np.diff(t_grid) <= 0):
        raise DomainError("envelope grids must be nonnegative and strictly ascending")
    if family.input_dim != model.m:
        raise ContractError(f"family input dimension {family.input_dim} does not match model m={model.m}")
    if n_interior is None:
        n_interior = n_sphere // 2

    rng = np.random.default_rng(seed)
    horizon = float(t_grid[-1])
    values = np.zeros((r_grid.size, t_grid.size))
    maximizers: Dict[float, List[Any]] = {}
    warm: List[np.ndarray] = []

    def norms_along(x, u):
        if horizon == 0:
            return np.full(t_grid.size, np.linalg.norm(x))
        traj = evolve(model, x, u, horizon, tol)
        if traj.status.is_blowup:
            raise NonRfcWitness(x, u, traj.status.t_end)
        return np.linalg.norm(traj.at_many(t_grid), axis=1)

    for i, r in enumerate(r_grid):
        states = _initial_states(rng, model.n, float(r), n_sphere, n_interior, warm)
        pairs = [(x, u) for x in states for u in family]
        rows = map_jobs(lambda pair: norms_along(*pair), pairs, jobs)
        table = np.vstack(rows)
        values[i] = table.max(axis=0)

        scores = table.max(axis=1)
        ranked = np.argsort(-scores, kind='stable')[:max(top_q, 1)]
        maximizers[float(r)] = [(pairs[j][0], pairs[j][1]) for j in ranked]
        warm = [pairs[j][0] for j in ranked]

        if refine and horizon > 0:
            for j in ranked[:top_q]:
                x, u = pairs[j]
                best = table[j]
                for _ in range(sweeps):
                    improved = False
                    for candidate in _lattice_neighbours(u, family.lattice):
                        trial = norms_along(x, candidate)
                        values[i] = np.maximum(values[i], trial)
                        if trial.sum() > best.sum():
                            u, best, improved = candidate, trial, True
                    if not improved:
                        break
        logger.debug(f"Envelope row r={r:.4g}: max over {len(pairs)} (x, u) pairs = {values[i].max():.6g}")

    values = np.maximum.accumulate(values, axis=0)
    values = np.maximum.accumulate(values, axis=1)
    envelope = Envelope(r_grid, t_grid, values, family, n_sphere, tol, maximizers)
    logger.info(f"Envelope for '{model.field_id}' built on a {r_grid.size}x{t_grid.size} grid "
                f"with {len(family)} family members")
    return envelope


# ----------------------------------------------------------------------
# (xi, c) form


@dataclass(frozen=True, eq=False)
class XiForm:
    """mu(r, t) <= xi(r) + xi(t) + c with xi of class K-infinity"""
    xi: MonotoneFn
    c: float
    zeta: Optional[MonotoneFn] = None
    r_min: Optional[float] = None

    def __post_init__(self):
        if not self.xi.is_kinf:
            raise ContractError("xi must vanish at 0")
        if not (self.c >= 0 and math.isfinite(self.c)):
            raise ContractError(f"c must be a nonnegative real, got {self.c!r}")

    def bound(self, r, t):
        return self.xi(r) + self.xi(t) + self.c

    def to_dict(self) -> Dict[str, Any]:
        out = {'xi': self.xi.to_dict(), 'c': float(self.c)}
        if self.r_min is not None:
            out['r_min'] = self.r_min
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'XiForm':
        return cls(MonotoneFn.from_dict(data['xi']), float(data['c']), r_min=data.get('r_min'))


def mu_to_xi(env: Envelope, r_min: Optional[float] = None) -> XiForm:
    """
    zeta(s) = mu_hat(s, s) + s on the diagonal, xi = zeta - zeta(0+), c = 2 zeta(0+),
    with zeta(0+) read at the smallest positive grid radius (an upper bias on c).
    """
    if not env.is_monotone:
        raise ContractError("envelope is not monotone in r and t")
    positive = env.r_grid[env.r_grid > 0]
    if r_min is None:
        if positive.size == 0:
            raise ContractError("envelope needs a positive radius to read zeta(0+)")
        r_min = float(positive[0])

    r_max, t_max = float(env.r_grid[-1]), float(env.t_grid[-1])
    nodes = np.union1d(env.r_grid, env.t_grid)
    nodes = np.union1d(nodes[nodes > r_min], [r_min])

    def zeta_at(s):
        s = np.asarray(s, dtype=float)
        return env(np.minimum(s, r_max), np.minimum(s, t_max)) + s

    zeta_vals = np.atleast_1d(zeta_at(nodes))
    zeta0 = float(zeta_vals[0])
    zeta = MonotoneFn.from_points(np.concatenate([[0.0], nodes]),
                                  np.concatenate([[float(zeta_at(0.0))], zeta_vals]), tail_slope=1.0)
    xi = MonotoneFn.from_points(np.concatenate([[0.0], nodes]),
                                np.concatenate([[0.0], zeta_vals - zeta0]), tail_slope=1.0)
    form = XiForm(xi, 2.0 * zeta0, zeta, r_min)

    rr, tt = np.meshgrid(env.r_grid, env.t_grid, indexing='ij')
    bound = form.bound(rr, tt)
    pad = env.interpolation_tol * (1.0 + env.values)
    gap = env.values - bound
    if np.any(gap > pad):
        i, j = np.unravel_index(int(np.argmax(gap - pad)), gap.shape)
        raise ContractError(f"xi form fails to dominate the envelope at r={env.r_grid[i]:.6g}, "
                            f"t={env.t_grid[j]:.6g} by {gap[i, j]:.3g}")
    logger.info(f"xi form derived: c={form.c:.6g}, zeta(0+)={zeta0:.6g} at r_min={r_min:.3g}")
    return form


# ----------------------------------------------------------------------
# Checks and probes


def rfc_bound_check(model: SystemModel, family: DisturbanceFamily, xi_form: XiForm, n_cases: int,
                    seed: int, radius: float = 1.0, t_max: float = 1.0, tol: float = Config.INTEGRATOR_TOL,
                    tol_pad: float = Config.TOL_PAD) -> CheckReport:
    """|phi(t, x, u)| <= xi(|x|) + xi(t) + c over random (x, u, t)"""
    rng = np.random.default_rng(seed)
    xs = sample_states(rng, model.n, radius, n_cases)
    records = []
    worst = -math.inf
    witness = None
    for i, x in enumerate(xs):
        index = int(rng.integers(len(family)))
        u = family[index]
        t = float(rng.uniform(0.0, t_max)) or t_max
        traj = evolve(model, x, u, t, tol)
        if traj.status.is_blowup:
            raise NonRfcWitness(x, u, traj.status.t_end)
        norm = float(np.linalg.norm(traj.final_state))
        bound = float(xi_form.bound(float(np.linalg.norm(x)), t))
        violation = norm - bound
        records.append({'case': i, 'x_norm': float(np.linalg.norm(x)), 'member': index, 't': t,
                        'state_norm': norm, 'bound': bound, 'violation': violation,
                        'tol_pad': tol_pad * (1.0 + bound)})
        if violation > worst:
            worst = violation
            if violation > tol_pad * (1.0 + bound):
                witness = {'x': x.tolist(), 'member': index, 't': t, 'violation': violation}
    passed = all(r['violation'] <= r['tol_pad'] for r in records)
    logger.info(f"RFC bound check on '{model.field_id}': max violation {worst:.3g}, passed={passed}")
    return CheckReport('rfc-bound', passed, worst, {'tol_pad': tol_pad, 'integrator_tol': tol}, records, witness)


def _probe_value(model: SystemModel, radius: float, r: float, t: float, delta: float, lattice_size: int,
                 n_random: int, seed: int, n_sphere: int, tol: float) -> float:
    family = sample_family(radius, delta, lattice_size, n_random, max(t, delta), seed, model.m)
    try:
        env = envelope_estimate(model, family, [r], [0.0, t] if t > 0 else [0.0], n_sphere, seed, tol)
    except NonRfcWitness as e:
        logger.info(f"Probe at R={radius:g}: trajectory escapes at t={e.t_esc:.4g}")
        return math.inf
    return float(env.values[0, -1])


def divergence_probe(model: SystemModel, R_schedule: Sequence[float], t_probe: float, x0,
                     delta: float = 0.25, lattice_size: int = 3, n_random: int = 4, seed: int = 0,
                     n_sphere: int = 4, tol: float = Config.INTEGRATOR_TOL) -> List[float]:
    """Envelope value at (|x0|, t_probe) for disturbance radii R_schedule; growth in R witnesses non-RFC"""
    r = float(np.linalg.norm(np.asarray(x0, dtype=float)))
    out = [_probe_value(model, float(R), r, t_probe, delta, lattice_size, n_random, seed, n_sphere, tol)
           for R in R_schedule]
    logger.info(f"Divergence probe on '{model.field_id}': {dict(zip(map(float, R_schedule), out))}")
    return out


def brs_probe(model: SystemModel, C_schedule: Sequence[float], tau: float, delta: float = 0.25,
              lattice_size: int = 3, n_random: int = 4, seed: int = 0, n_sphere: int = 4,
              tol: float = Config.INTEGRATOR_TOL) -> List[float]:
    """sup |phi(t, x, u)| over |x| <= C, |u| <= C, t <= tau for each C; inf on escape"""
    return [_probe_value(model, float(C), float(C), tau, delta, lattice_size, n_random, seed, n_sphere, tol)
            for C in C_schedule]


def family_convergence(model: SystemModel, radius: float, delta: float, lattice_size: int, n_random: int,
                       horizon: float, seed: int, r: float, t: float, doublings: int = 3,
                       n_sphere: int = 4, tol: float = Config.INTEGRATOR_TOL) -> pd.DataFrame:
    """
    Sampled sup mu_hat(r, t) as the number of random members doubles.

    Families with one seed are nested, so the values are nondecreasing; the
    ratio of successive increments indicates how fast the sup settles.
    """
    rows = []
    for j in range(doublings + 1):
        n = n_random * 2 ** j
        family = sample_family(radius, delta, lattice_size, n, horizon, seed, model.m)
        env = envelope_estimate(model, family, [r], [0.0, t], n_sphere, seed, tol)
        rows.append({'n_random': n, 'members': len(family), 'value': float(env.values[0, -1])})
    frame = pd.DataFrame(rows)
    frame['increment'] = frame['value'].diff()
    previous = frame['increment'].shift(1)
    frame['ratio'] = np.where(previous > 0, frame['increment'] / previous.where(previous > 0, 1.0), np.nan)
    frame['tol_pad'] = tol * (1.0 + frame['value'])
    return frame

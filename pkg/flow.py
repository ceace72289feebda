"""
Control systems and their flows
Model catalog, adaptive integration with blow-up detection, axiom checks
and flow Lipschitz estimates.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from config import Config
from errors import ContractError, DomainError, MaximalIntervalError, ModelError, NonRfcWitness
from kfun import MonotoneFn
from signals import DisturbanceFamily, Signal, concat, shift

logger = logging.getLogger(__name__)

FieldFn = Callable[[np.ndarray, np.ndarray, Dict[str, Any]], np.ndarray]


# ----------------------------------------------------------------------
# Model catalog


def _scalar_xu(x, u, params):
    return x * u[0]


def _scalar_rfc(x, u, params):
    return x / (1.0 + np.linalg.norm(u))


def _linear(x, u, params):
    return params['A'] @ x + params['B'] @ u


def _quadratic(x, u, params):
    return x * x


def _decay_plus_input(x, u, params):
    return -x + u


def _prepare_linear(params):
    A = np.atleast_2d(np.asarray(params['A'], dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ContractError(f"linear model needs a square A, got shape {A.shape}")
    B = np.asarray(params.get('B', np.zeros((n, 1))), dtype=float).reshape(n, -1)
    return {'A': A, 'B': B}


def _log_norm(A: np.ndarray) -> float:
    """Largest eigenvalue of the symmetric part: one-sided Lipschitz constant of x -> Ax"""
    return float(np.max(np.linalg.eigvalsh(0.5 * (A + A.T))))


@dataclass(frozen=True)
class FieldEntry:
    fn: FieldFn
    description: str
    dims: Callable[[Dict[str, Any]], Tuple[int, int]]
    origin_preserving: Callable[[Dict[str, Any]], bool]
    lip: Callable[[Dict[str, Any], Optional[float]], Optional[MonotoneFn]]
    prepare: Callable[[Dict[str, Any]], Dict[str, Any]] = lambda params: dict(params)


CATALOG: Dict[str, FieldEntry] = {
    'scalar_xu': FieldEntry(
        _scalar_xu, "x' = x u (forward complete, not RFC on the whole input space)",
        dims=lambda p: (1, 1),
        origin_preserving=lambda p: True,
        lip=lambda p, R: None if R is None else MonotoneFn.constant(R)),
    'scalar_rfc': FieldEntry(
        _scalar_rfc, "x' = x / (1 + |u|)",
        dims=lambda p: (1, 1),
        origin_preserving=lambda p: True,
        lip=lambda p, R: MonotoneFn.constant(1.0)),
    'linear': FieldEntry(
        _linear, "x' = A x + B u",
        dims=lambda p: (p['A'].shape[0], p['B'].shape[1]),
        origin_preserving=lambda p: not np.any(p['B']),
        lip=lambda p, R: MonotoneFn.constant(_log_norm(p['A'])),
        prepare=_prepare_linear),
    'quadratic': FieldEntry(
        _quadratic, "x' = x^2 (finite escape time 1/x0)",
        dims=lambda p: (1, 1),
        origin_preserving=lambda p: True,
        lip=lambda p, R: MonotoneFn.linear(2.0)),
    'decay_plus_input': FieldEntry(
        _decay_plus_input, "x' = -x + u",
        dims=lambda p: (1, 1),
        origin_preserving=lambda p: False,
        lip=lambda p, R: MonotoneFn.constant(-1.0)),
}


@dataclass(frozen=True, eq=False)
class SystemModel:
    """
    Vector field x' = f(x, u) from the catalog.

    `lip_bound` maps a radius r to a one-sided Lipschitz bound of f in x on
    the ball B_r, uniformly over the disturbance ball.
    """
    field_id: str
    params: Dict[str, Any]
    n: int
    m: int
    lip_bound: Optional[MonotoneFn] = None
    _prepared: Dict[str, Any] = field(default=None, repr=False)

    def __post_init__(self):
        if self.field_id not in CATALOG:
            raise ContractError(f"unknown field_id '{self.field_id}'. Known: {', '.join(sorted(CATALOG))}")
        prepared = CATALOG[self.field_id].prepare(self.params)
        object.__setattr__(self, '_prepared', prepared)
        n, m = CATALOG[self.field_id].dims(prepared)
        if (n, m) != (self.n, self.m):
            raise ContractError(f"'{self.field_id}' has dimensions n={n}, m={m}; got n={self.n}, m={self.m}")

    @property
    def origin_preserving(self) -> bool:
        return CATALOG[self.field_id].origin_preserving(self._prepared)

    def field(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(CATALOG[self.field_id].fn(x, u, self._prepared), dtype=float).reshape(self.n)

    def to_dict(self) -> Dict[str, Any]:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        out = {'field_id': self.field_id, 'params': params, 'n': self.n, 'm': self.m}
        if self.lip_bound is not None:
            out['lip_bound'] = self.lip_bound.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SystemModel':
        lip = data.get('lip_bound')
        return cls(data['field_id'], dict(data.get('params', {})), int(data['n']), int(data['m']),
                   MonotoneFn.from_dict(lip) if lip else None)


def build_model(field_id: str, params: Optional[Dict[str, Any]] = None, radius: Optional[float] = None,
                lip_bound: Optional[MonotoneFn] = None) -> SystemModel:
    """Catalog model with the catalog's Lipschitz metadata unless one is supplied"""
    if field_id not in CATALOG:
        raise ContractError(f"unknown field_id '{field_id}'. Known: {', '.join(sorted(CATALOG))}")
    entry = CATALOG[field_id]
    params = dict(params or {})
    prepared = entry.prepare(params)
    n, m = entry.dims(prepared)
    if lip_bound is None:
        lip_bound = entry.lip(prepared, radius)
    return SystemModel(field_id, params, n, m, lip_bound)


# ----------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class TrajectoryStatus:
    kind: str
    t_end: float
    m_exceeded: Optional[float] = None
    reason: str = ''

    @property
    def is_blowup(self) -> bool:
        return self.kind == 'blowup'

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 't_end': self.t_end, 'm_exceeded': self.m_exceeded, 'reason': self.reason}


@dataclass(frozen=True)
class _Piece:
    t0: float
    t1: float
    sol: Any


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution t -> phi(t, x, u) on its computed interval"""
    times: np.ndarray
    states: np.ndarray
    status: TrajectoryStatus
    integrator_tol: float
    pieces: Tuple[_Piece, ...] = field(default=(), repr=False)

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def at(self, t: float) -> np.ndarray:
        return self.at_many([t])[0]

    def at_many(self, times: Sequence[float]) -> np.ndarray:
        """Dense-output states at the requested times (t = 0 returns x0 exactly)"""
        ts = np.asarray(times, dtype=float)
        if np.any(ts < 0):
            raise DomainError("trajectory times must be nonnegative")
        limit = self.status.t_end
        if np.any(ts > limit * (1 + 1e-12) + 1e-15):
            bad = float(ts[ts > limit].max())
            if self.status.is_blowup:
                raise MaximalIntervalError(bad, limit)
            raise DomainError(f"t={bad:.6g} lies beyond the computed horizon {limit:.6g}")

        out = np.empty((ts.size, self.states.shape[1]))
        out[:] = self.states[0]
        if not self.pieces:
            return out
        starts = np.array([p.t0 for p in self.pieces])
        owner = np.clip(np.searchsorted(starts, ts, side='right') - 1, 0, len(self.pieces) - 1)
        for j in np.unique(owner[ts > 0]):
            piece = self.pieces[j]
            mask = (owner == j) & (ts > 0)
            out[mask] = np.asarray(piece.sol(np.minimum(ts[mask], piece.t1))).T
        return out

    def switch_jumps(self) -> float:
        """Largest state mismatch across input switch points"""
        worst = 0.0
        for left, right in zip(self.pieces[:-1], self.pieces[1:]):
            gap = np.linalg.norm(left.sol(left.t1) - right.sol(right.t0))
            worst = max(worst, float(gap))
        return worst

    def to_frame(self) -> pd.DataFrame:
        n = self.states.shape[1]
        frame = pd.DataFrame(self.states, columns=[f'x_{i + 1}' for i in range(n)])
        frame.insert(0, 't', self.times)
        frame['norm'] = self.norms()
        frame['tol_pad'] = self.integrator_tol * (1.0 + frame['norm'])
        frame['status'] = 'completed'
        if self.status.is_blowup:
            frame.loc[frame.index[-1], 'status'] = 'blowup'
        return frame


def _make_rhs(model: SystemModel, value: np.ndarray):
    def rhs(t, y):
        with np.errstate(over='ignore', invalid='ignore'):
            dy = model.field(y, value)
        if not np.all(np.isfinite(dy)):
            raise ModelError(f"non-finite value of field '{model.field_id}'", t)
        return dy
    return rhs


def evolve(model: SystemModel, x0, u: Signal, T: float, tol: float = Config.INTEGRATOR_TOL,
           escape_threshold: float = Config.ESCAPE_THRESHOLD) -> Trajectory:
    """
    Integrate x' = f(x, u) on [0, T] with the Dormand-Prince 5(4) pair.

    Input switch times are integration breakpoints, so every stretch is
    integrated with a constant input. Crossing `escape_threshold` or hitting
    the solver's step-size floor declares a blow-up.
    """
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T!r}")
    if not tol > 0:
        raise DomainError(f"tolerance must be positive, got {tol!r}")
    if u.input_dim != model.m:
        raise ContractError(f"signal has input dimension {u.input_dim}, model expects {model.m}")

    y = np.array(x0, dtype=float).reshape(model.n)
    if not np.all(np.isfinite(y)):
        raise ModelError("non-finite initial state", 0.0)

    def escape(t, state):
        return np.linalg.norm(state) - escape_threshold
    escape.terminal = True
    escape.direction = 1

    edges = np.concatenate([[0.0], u.breakpoints(T), [T]])
    times: List[np.ndarray] = [np.array([0.0])]
    states: List[np.ndarray] = [y[None, :].copy()]
    pieces: List[_Piece] = []
    status = TrajectoryStatus('completed', float(T))

    for a, b in zip(edges[:-1], edges[1:]):
        sol = solve_ivp(_make_rhs(model, u.value_at(a)), (a, b), y, method='RK45',
                        rtol=tol, atol=tol, events=escape, dense_output=True)
        if sol.sol is not None and sol.t.size > 1:
            pieces.append(_Piece(float(a), float(sol.t[-1]), sol.sol))
            times.append(sol.t[1:])
            states.append(sol.y[:, 1:].T)
        y = sol.y[:, -1]

        if sol.status == 1:
            t_esc = float(sol.t_events[0][0])
            status = TrajectoryStatus('blowup', t_esc, escape_threshold, 'escape threshold crossed')
            logger.debug(f"Blow-up of '{model.field_id}' at t={t_esc:.6g}")
            break
        if sol.status == -1:
            t_esc = float(sol.t[-1])
            status = TrajectoryStatus('blowup', t_esc, float(np.linalg.norm(y)), f'step-size floor: {sol.message}')
            logger.warning(f"Integrator step-size floor reached at t={t_esc:.6g} for '{model.field_id}'")
            break

    return Trajectory(np.concatenate(times), np.vstack(states), status, tol, tuple(pieces))


def flow_at(model: SystemModel, x0, u: Signal, t: float, tol: float = Config.INTEGRATOR_TOL,
            escape_threshold: float = Config.ESCAPE_THRESHOLD) -> np.ndarray:
    """phi(t, x0, u); raises MaximalIntervalError when t lies past the escape time"""
    x = np.array(x0, dtype=float).reshape(model.n)
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t!r}")
    if t == 0:
        return x
    traj = evolve(model, x, u, t, tol, escape_threshold)
    if traj.status.is_blowup:
        raise MaximalIntervalError(t, traj.status.t_end)
    return traj.final_state.copy()


# ----------------------------------------------------------------------
# Sampling helpers


def sample_states(rng: np.random.Generator, n: int, radius: float, count: int,
                  surface: bool = False) -> np.ndarray:
    """Uniform samples on the sphere (surface=True) or in the ball of radius `radius`"""
    directions = rng.standard_normal((count, n))
    lengths = np.linalg.norm(directions, axis=1)
    lengths[lengths == 0] = 1.0
    directions /= lengths[:, None]
    if surface:
        return radius * directions
    radii = radius * rng.uniform(0.0, 1.0, count) ** (1.0 / n)
    return directions * radii[:, None]


def field_speed(model: SystemModel, radius: float, inputs: np.ndarray, rng: np.random.Generator,
                n_samples: int = 32) -> float:
    """Largest sampled |f(x, u)| over the origin, B_radius and its sphere, for every input value"""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    states = np.vstack([np.zeros((1, model.n)),
                        sample_states(rng, model.n, radius, n_samples),
                        sample_states(rng, model.n, radius, n_samples, surface=True)])
    return max(float(np.linalg.norm(model.field(x, u))) for x in states for u in inputs)


def map_jobs(fn: Callable[[Any], Any], items: Sequence[Any], jobs: int = 1) -> List[Any]:
    """Ordered map, optionally on a thread pool"""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ----------------------------------------------------------------------
# Axioms


@dataclass
class AxiomReport:
    identity: float
    causality: float
    cocycle: float
    continuity: float
    axiom_tol: float
    integrator_tol: float
    n_cases: int
    skipped: int
    records: List[Dict[str, Any]] = field(default_factory=list, repr=False)

    @property
    def residuals(self) -> Dict[str, float]:
        return {'identity': self.identity, 'causality': self.causality,
                'cocycle': self.cocycle, 'continuity': self.continuity}

    @property
    def passed(self) -> bool:
        return self.identity == 0.0 and all(v <= self.axiom_tol for v in self.residuals.values())

    def to_dict(self) -> Dict[str, Any]:
        return {'passed': self.passed, 'max_residuals': self.residuals, 'axiom_tol': self.axiom_tol,
                'integrator_tol': self.integrator_tol, 'n_cases': self.n_cases, 'skipped_blowups': self.skipped}

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.records)
        if not frame.empty:
            frame['axiom_tol'] = self.axiom_tol
        return frame


def check_axioms(model: SystemModel, family: DisturbanceFamily, n_cases: int, seed: int,
                 tol: float = Config.INTEGRATOR_TOL, state_radius: float = 1.0, t_max: float = 1.0,
                 escape_threshold: float = Config.ESCAPE_THRESHOLD) -> AxiomReport:
    """
    Randomized residuals of identity, causality, cocycle and continuity.

    Residuals are measured on the integrator's mixed scale |dx| / max(1, |x|).
    Cases that blow up before t + h are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    xs = sample_states(rng, model.n, state_radius, n_cases)
    worst = {'identity': 0.0, 'causality': 0.0, 'cocycle': 0.0, 'continuity': 0.0}
    records: List[Dict[str, Any]] = []
    skipped = 0

    for i in range(n_cases):
        x = xs[i]
        u = family[int(rng.integers(len(family)))]
        v = family[int(rng.integers(len(family)))]
        t = float(rng.uniform(0.0, t_max)) or t_max
        h = float(rng.uniform(0.0, t_max)) or t_max

        identity = float(np.linalg.norm(flow_at(model, x, u, 0.0) - x))

        full = evolve(model, x, u, t + h, tol, escape_threshold)
        if full.status.is_blowup:
            skipped += 1
            continue
        x_t = full.at(t)
        x_th = full.final_state
        restart = evolve(model, x_t, shift(u, t), h, tol, escape_threshold)
        if restart.status.is_blowup:
            skipped += 1
            continue
        cocycle = float(np.linalg.norm(x_th - restart.final_state) / max(1.0, np.linalg.norm(x_th)))

        base = flow_at(model, x, u, t, tol, escape_threshold)
        altered = flow_at(model, x, concat(u, v, t), t, tol, escape_threshold)
        causality = float(np.linalg.norm(base - altered) / max(1.0, np.linalg.norm(base)))

        continuity = full.switch_jumps() / max(1.0, float(np.max(full.norms())))

        row = {'case': i, 't': t, 'h': h, 'identity': identity, 'causality': causality,
               'cocycle': cocycle, 'continuity': continuity}
        records.append(row)
        for key in worst:
            worst[key] = max(worst[key], row[key])

    report = AxiomReport(worst['identity'], worst['causality'], worst['cocycle'], worst['continuity'],
                         Config.AXIOM_TOL_FACTOR * tol, tol, n_cases, skipped, records)
    logger.info(f"Axiom residuals for '{model.field_id}': {report.residuals} (tol {report.axiom_tol:.3g}, "
                f"{skipped} blow-ups skipped)")
    return report


# ----------------------------------------------------------------------
# Flow Lipschitz constants


@dataclass(frozen=True)
class LipschitzEstimate:
    tau: float
    r: float
    empirical: float
    certified: Optional[float] = None
    r_env: Optional[float] = None
    max_norm: Optional[float] = None

    @property
    def value(self) -> float:
        return self.certified if self.certified is not None else self.empirical

    def __float__(self):
        return float(self.value)


def lipschitz_estimates(model: SystemModel, taus: Sequence[float], r: float, family: DisturbanceFamily,
                        n_pairs: int, seed: int, tol: float = Config.INTEGRATOR_TOL,
                        envelope: Optional[Callable[[float, float], float]] = None,
                        n_times: int = 65) -> List[LipschitzEstimate]:
    """
    Flow Lipschitz constants L(tau, r) for several horizons from one batch of
    sampled pairs x, y in B_r.

    The empirical value is the largest observed |phi(t,x,u) - phi(t,y,u)| / |x - y|
    over t in [0, tau]. With `lip_bound` metadata the certified Groenwall value
    exp(max(0, L_f(r_env) tau)) is attached, r_env being the envelope bound at
    (r, tau) when an envelope is given and the largest sampled norm otherwise.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    tau_max = float(taus.max()) if taus.size else 0.0
    ratios = np.ones(taus.size)
    max_norms = np.full(taus.size, float(r))
    rng = np.random.default_rng(seed)

    if tau_max > 0 and r > 0:
        grid = np.union1d(np.linspace(0.0, tau_max, n_times), taus)
        for _ in range(n_pairs):
            x, y = sample_states(rng, model.n, r, 2)
            gap = np.linalg.norm(x - y)
            u = family[int(rng.integers(len(family)))]
            if gap == 0:
                continue
            paths = []
            for start in (x, y):
                traj = evolve(model, start, u, tau_max, tol)
                if traj.status.is_blowup:
                    raise NonRfcWitness(start, u, traj.status.t_end)
                paths.append(traj.at_many(grid))
            ratio = np.linalg.norm(paths[0] - paths[1], axis=1) / gap
            norms = np.maximum(np.linalg.norm(paths[0], axis=1), np.linalg.norm(paths[1], axis=1))
            for j, tau in enumerate(taus):
                mask = grid <= tau
                ratios[j] = max(ratios[j], float(ratio[mask].max()))
                max_norms[j] = max(max_norms[j], float(norms[mask].max()))

    out = []
    for j, tau in enumerate(taus):
        certified = r_env = None
        if model.lip_bound is not None:
            r_env = float(envelope(r, tau)) if envelope is not None else float(max_norms[j])
            certified = math.exp(max(0.0, float(model.lip_bound(max(r_env, 0.0))) * tau))
        out.append(LipschitzEstimate(float(tau), float(r), float(ratios[j]), certified, r_env,
                                     float(max_norms[j])))
    return out


def lipschitz_estimate(model: SystemModel, tau: float, r: float, family: DisturbanceFamily,
                       n_pairs: int, seed: int, tol: float = Config.INTEGRATOR_TOL,
                       envelope: Optional[Callable[[float, float], float]] = None) -> LipschitzEstimate:
    estimate = lipschitz_estimates(model, [tau], r, family, n_pairs, seed, tol, envelope)[0]
    logger.debug(f"L(tau={tau:.4g}, r={r:.4g}): empirical {estimate.empirical:.6g}, certified {estimate.certified}")
    return estimate

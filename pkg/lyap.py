"""
Converse Lyapunov construction and direct certificate checks
Pre-Lyapunov functions V_k, the series W, Dini-derivative dissipation,
the comparison principle and bounded-reachability certificates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect, minimize_scalar

from config import Config
from errors import ContractError, DomainError, NonRfcWitness
from flow import SystemModel, evolve, field_speed, flow_at, lipschitz_estimates, map_jobs, sample_states
from kfun import MonotoneFn, gk_eval, lipschitz_lower_bound
from reach import CheckReport, XiForm
from signals import DisturbanceFamily, Signal, sup_norm

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], float]


def norm_v(x) -> float:
    """V(x) = |x|"""
    return float(np.linalg.norm(np.asarray(x, dtype=float)))


# ----------------------------------------------------------------------
# Horizons


def horizon(R: float, k: int, xi_form: XiForm) -> float:
    """
    T(R, k): from this time on e^{-t} (R + t + xi^{-1}(c)) stays below 1/k.

    The map rises until t = 1 - A (A = R + xi^{-1}(c)) and decreases after,
    so the answer is 0 when its peak is already below 1/k and otherwise the
    crossing on the decreasing branch.
    """
    if R < 0 or k < 1:
        raise DomainError(f"horizon needs R >= 0 and k >= 1, got R={R!r}, k={k!r}")
    A = R + float(xi_form.xi.invert(xi_form.c))
    level = 1.0 / k

    def excess(t):
        return math.exp(-t) * (A + t) - level

    peak = max(0.0, 1.0 - A)
    if excess(peak) <= 0:
        return 0.0
    hi = peak + 1.0
    while excess(hi) > 0:
        hi = peak + 2.0 * (hi - peak)
    return float(bisect(excess, peak, hi, xtol=1e-9))


# ----------------------------------------------------------------------
# Construction


@dataclass(frozen=True, eq=False)
class LyapConstruction:
    """
    Tables of the converse construction: rho, the horizons T(R, k), the
    V_k Lipschitz constants M(R, k) and the series weights 2^-k / (1 + M(k, k)).
    Rows follow R_grid (integer radii), columns k = 1..K.
    """
    rho: MonotoneFn
    xi_form: XiForm
    family: DisturbanceFamily
    K: int
    R_grid: np.ndarray
    T_table: np.ndarray
    M_table: np.ndarray
    C_upper: float
    t_divisions: int = Config.T_DIVISIONS
    integrator_tol: float = Config.INTEGRATOR_TOL
    seed: int = 0
    M_raw: Optional[np.ndarray] = field(default=None, repr=False)
    rate_table: Optional[np.ndarray] = field(default=None, repr=False)

    def _row(self, R: float) -> Optional[int]:
        i = int(np.searchsorted(self.R_grid, R - 1e-12, side='left'))
        return i if i < self.R_grid.size else None

    def T(self, R: float, k: int) -> float:
        """T(R, k) with R rounded up to the radius grid"""
        i = self._row(R)
        if i is not None and k <= self.K:
            return float(self.T_table[i, k - 1])
        return horizon(float(math.ceil(R - 1e-12)), k, self.xi_form)

    def M(self, R: float, k: int) -> float:
        i = self._row(R)
        if i is None or k > self.K:
            raise DomainError(f"M(R, k) is tabulated for R <= {self.R_grid[-1]:g} and k <= {self.K}")
        return float(self.M_table[i, k - 1])

    @property
    def t_step(self) -> np.ndarray:
        return self.T_table / self.t_divisions

    @property
    def disc_table(self) -> Optional[np.ndarray]:
        """
        Bound on sup_[0, T] e^-t rho(|phi| / 3) minus its maximum over the
        t grid: every t lies within half a step of a node and the integrand
        moves at most rate(R, k) per unit time.
        """
        if self.rate_table is None:
            return None
        return 0.5 * self.t_step * self.rate_table

    def disc_bound(self, R: float) -> float:
        """Largest grid discretization bound of W over the rows up to R"""
        if self.rate_table is None:
            return 0.0
        i = self._row(R)
        rows = self.disc_table if i is None else self.disc_table[:i + 1]
        return float(np.sum(self.weights * rows.max(axis=0)))

    @property
    def weights(self) -> np.ndarray:
        ks = np.arange(1, self.K + 1)
        diag = np.array([self.M(float(k), int(k)) for k in ks])
        return 2.0 ** (-ks) / (1.0 + diag)

    @property
    def C2(self) -> float:
        """Constant of the dissipation inequality of W: sum_k w_k / k (at most ln 2)"""
        return float(np.sum(self.weights / np.arange(1, self.K + 1)))

    def tail_bound(self, x_norm: float) -> float:
        return 2.0 ** (-self.K) * (x_norm + self.C_upper)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            'rho': self.rho.to_dict(),
            'xi': self.xi_form.xi.to_dict(),
            'c': float(self.xi_form.c),
            'K': int(self.K),
            'R_grid': [float(r) for r in self.R_grid],
            'T_table': self.T_table.tolist(),
            'M_table': self.M_table.tolist(),
            'family_ref': self.family.to_dict(),
            'C_upper': float(self.C_upper),
            'C2': self.C2,
            't_divisions': int(self.t_divisions),
            'integrator_tol': self.integrator_tol,
            'seed': self.seed,
        }
        if self.rate_table is not None:
            out['rate_table'] = self.rate_table.tolist()
            out['disc_table'] = self.disc_table.tolist()
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LyapConstruction':
        return cls(rho=MonotoneFn.from_dict(data['rho']),
                   xi_form=XiForm(MonotoneFn.from_dict(data['xi']), float(data['c'])),
                   family=DisturbanceFamily.from_dict(data['family_ref']),
                   K=int(data['K']), R_grid=np.asarray(data['R_grid'], dtype=float),
                   T_table=np.asarray(data['T_table'], dtype=float),
                   M_table=np.asarray(data['M_table'], dtype=float),
                   C_upper=float(data['C_upper']), t_divisions=int(data.get('t_divisions', Config.T_DIVISIONS)),
                   integrator_tol=float(data.get('integrator_tol', Config.INTEGRATOR_TOL)),
                   seed=int(data.get('seed', 0)),
                   rate_table=np.asarray(data['rate_table'], dtype=float) if 'rate_table' in data else None)


def default_truncation(R_work: float, C_upper: float, tail_tol: float = Config.TAIL_TOL) -> int:
    return max(Config.K_MIN, int(math.ceil(math.log2((R_work + C_upper) / tail_tol))))


def build_construction(model: SystemModel, xi_form: XiForm, family: DisturbanceFamily, R_work: float,
                       K: Optional[int] = None, seed: int = 0, n_pairs: int = 20,
                       tol: float = Config.INTEGRATOR_TOL, t_divisions: int = Config.T_DIVISIONS,
                       tail_tol: float = Config.TAIL_TOL, jobs: int = 1,
                       envelope: Optional[Callable[[float, float], float]] = None) -> LyapConstruction:
    """
    Tabulate rho, T(R, k) and M(R, k) on integer radii 0..max(K, ceil(R_work)).

    M(R, k) is a third of the flow Lipschitz constant on [0, T(R, k)] over B_R,
    made nondecreasing in both arguments by cumulative maxima. Certified
    constants bound the trajectories by `envelope(R, T)`, the xi form by
    default. rate(R, k) is a third of the sampled trajectory norm plus field
    speed; it bounds how fast the V_k integrand moves along the t grid.
    """
    envelope = envelope or xi_form.bound
    if R_work < 0:
        raise DomainError(f"working radius must be nonnegative, got {R_work!r}")
    rho = lipschitz_lower_bound(xi_form.xi.inverse_fn())
    C_upper = float(xi_form.xi.invert(xi_form.c)) + math.exp(-1.0)
    if K is None:
        K = default_truncation(R_work, C_upper, tail_tol)
    if K < 1:
        raise DomainError(f"K must be at least 1, got {K!r}")

    R_grid = np.arange(0, max(K, int(math.ceil(R_work))) + 1, dtype=float)
    ks = np.arange(1, K + 1)
    T_table = np.array([[horizon(R, int(k), xi_form) for k in ks] for R in R_grid])

    def row(i):
        estimates = lipschitz_estimates(model, T_table[i], float(R_grid[i]), family, n_pairs,
                                        seed + i, tol, envelope)
        rng = np.random.default_rng([seed, i])
        rates = [(est.max_norm + field_speed(model, est.max_norm, family.lattice, rng)) / 3.0
                 for est in estimates]
        return [est.value for est in estimates], rates

    rows = map_jobs(row, list(range(R_grid.size)), jobs)
    M_raw = np.array([values for values, _ in rows]) / 3.0
    rate_table = np.array([rates for _, rates in rows])
    M_table = np.maximum.accumulate(np.maximum.accumulate(M_raw, axis=0), axis=1)

    constr = LyapConstruction(rho, xi_form, family, int(K), R_grid, T_table, M_table, C_upper,
                              t_divisions, tol, seed, M_raw, rate_table)
    logger.info(f"Lyapunov construction for '{model.field_id}': K={K}, radii 0..{int(R_grid[-1])}, "
                f"C_upper={C_upper:.6g}, C2={constr.C2:.6g}")
    return constr


def mk_table(constr: LyapConstruction, model: SystemModel, R: float, k: int, n_pairs: int = 20) -> float:
    """M(R, k); radii beyond the table are estimated and kept above the last row"""
    try:
        return constr.M(R, k)
    except DomainError:
        if k > constr.K:
            raise
    T = constr.T(R, k)
    est = lipschitz_estimates(model, [T], float(R), constr.family, n_pairs, constr.seed, constr.integrator_tol,
                              constr.xi_form.bound)[0]
    return max(est.value / 3.0, float(constr.M_table[-1, k - 1]))


# ----------------------------------------------------------------------
# V_k, W and psi_1


def _profile_values(constr: LyapConstruction, traj_norms: Callable[[np.ndarray], np.ndarray],
                    horizons: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    values, argmax_t = [], []
    for T in horizons:
        grid = np.linspace(0.0, T, constr.t_divisions + 1) if T > 0 else np.zeros(1)
        f = np.exp(-grid) * constr.rho(traj_norms(grid) / 3.0)
        j = int(np.argmax(f))
        values.append(float(f[j]))
        argmax_t.append((grid, j))
    return np.array(values), argmax_t


def vk_profile(constr: LyapConstruction, model: SystemModel, x, ks: Sequence[int]) -> np.ndarray:
    """
    V_k(x) for several k from one trajectory per family member.

    The sup over t runs over a uniform grid of [0, T(R, k)] (t = 0 included)
    and is refined by a bounded scalar search around the best node of the
    maximizing member.
    """
    x = np.asarray(x, dtype=float).reshape(model.n)
    R = float(np.linalg.norm(x))
    ks = [int(k) for k in ks]
    horizons = [constr.T(R, k) for k in ks]
    T_max = max(horizons)

    if T_max == 0:
        base = float(constr.rho(R / 3.0))
        return np.array([gk_eval(k, base) for k in ks])

    best = np.full(len(ks), -np.inf)
    best_traj: List[Any] = [None] * len(ks)
    best_node: List[Any] = [None] * len(ks)
    for u in constr.family:
        traj = evolve(model, x, u, T_max, constr.integrator_tol)
        if traj.status.is_blowup:
            raise NonRfcWitness(x, u, traj.status.t_end)
        values, nodes = _profile_values(constr, lambda ts: np.linalg.norm(traj.at_many(ts), axis=1), horizons)
        for i, value in enumerate(values):
            if value > best[i]:
                best[i], best_traj[i], best_node[i] = value, traj, nodes[i]

    for i in range(len(ks)):
        grid, j = best_node[i]
        if grid.size < 3 or j == 0:
            continue
        traj = best_traj[i]
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
        res = minimize_scalar(lambda t: -math.exp(-t) * float(constr.rho(np.linalg.norm(traj.at(t)) / 3.0)),
                              bounds=(lo, hi), method='bounded', options={'xatol': 1e-10})
        best[i] = max(best[i], -float(res.fun))

    return np.array([gk_eval(k, b) for k, b in zip(ks, best)])


def vk_eval(constr: LyapConstruction, model: SystemModel, k: int, x) -> float:
    """V_k(x) = sup_u sup_t G_k(e^{-t} rho(|phi(t, x, u)| / 3))"""
    return float(vk_profile(constr, model, x, [k])[0])


def w_eval(constr: LyapConstruction, model: SystemModel, x, with_tail: bool = False):
    """Truncated series W_K(x) = sum_{k<=K} w_k V_k(x); optionally with its tail bound"""
    V = vk_profile(constr, model, x, range(1, constr.K + 1))
    W = 0.0
    for w, v in zip(constr.weights, V):
        W += w * v
    if with_tail:
        return W, constr.tail_bound(float(np.linalg.norm(x)))
    return W


def w_evaluator(constr: LyapConstruction, model: SystemModel) -> Evaluator:
    return lambda y: w_eval(constr, model, y)


def psi1_eval(constr: LyapConstruction, r):
    s = constr.rho(np.asarray(r, dtype=float) / 3.0)
    total = 0.0
    for k, w in zip(range(1, constr.K + 1), constr.weights):
        total = total + w * gk_eval(k, s)
    return total


def psi1_fn(constr: LyapConstruction) -> MonotoneFn:
    """psi_1 tabulated on its exact breakpoints: 3 x rho's knots and the points where rho(r/3) = 1/k"""
    thresholds = [3.0 * float(constr.rho.invert(1.0 / k)) for k in range(1, constr.K + 1)]
    knots = np.union1d(3.0 * constr.rho.knots, thresholds)
    values = np.atleast_1d(psi1_eval(constr, knots))
    tail = float(np.sum(constr.weights)) * constr.rho.tail_slope / 3.0
    return MonotoneFn.from_points(knots, values, tail_slope=tail)


def w_tail_bound(constr: LyapConstruction, x) -> float:
    return constr.tail_bound(float(np.linalg.norm(x)))


def w_lipschitz_bound(constr: LyapConstruction, R: float) -> float:
    """sum_k w_k M(R, k): Lipschitz constant of W_K on B_R"""
    Ms = np.array([constr.M(R, k) for k in range(1, constr.K + 1)])
    return float(np.sum(constr.weights * Ms))


# ----------------------------------------------------------------------
# Dini derivatives and dissipation


@dataclass(frozen=True)
class DiniEstimate:
    value: float
    quotients: Tuple[float, ...]
    h_seq: Tuple[float, ...]
    converging: bool


def dini_estimate(model: SystemModel, V: Evaluator, x, u: Signal, h_seq: Optional[Sequence[float]] = None,
                  tol: float = Config.INTEGRATOR_TOL) -> DiniEstimate:
    """
    Upper right Dini derivative of V along phi(., x, u).

    The limsup is read off the two finest forward quotients; `converging`
    is False when they disagree more than the two coarsest ones do.
    """
    h_seq = tuple(sorted((float(h) for h in (h_seq or Config.DINI_H_SEQ)), reverse=True))
    if not h_seq or h_seq[-1] <= 0:
        raise DomainError("h sequence must hold positive step sizes")
    x = np.asarray(x, dtype=float).reshape(model.n)
    v0 = float(V(x))
    quotients = tuple((float(V(flow_at(model, x, u, h, tol))) - v0) / h for h in h_seq)

    tail = quotients[-2:]
    value = max(tail)
    slack = max(Config.DINI_TOL_FLOOR, 10.0 * h_seq[-1])
    converging = len(quotients) < 3 or abs(tail[-1] - tail[0]) <= abs(quotients[1] - quotients[0]) + slack
    if not converging:
        logger.warning(f"Dini quotients at x={x.tolist()} do not settle: {quotients}")
    return DiniEstimate(value, quotients, h_seq, converging)


@dataclass
class DissipationReport(CheckReport):
    h_sequence: Tuple[float, ...] = ()
    dini_tol: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out['h_sequence'] = list(self.h_sequence)
        out['dini_tol'] = self.dini_tol
        return out


def dissipation_check(model: SystemModel, V: Evaluator, family: DisturbanceFamily, n_states: int,
                      a: float, M: float, seed: int, radius: float = 1.0,
                      h_seq: Optional[Sequence[float]] = None, tol: float = Config.INTEGRATOR_TOL,
                      jobs: int = 1) -> DissipationReport:
    """Dini derivative of V against a V(x) + M at sampled (x, u); violations are margins / (1 + V(x))"""
    h_seq = tuple(sorted((float(h) for h in (h_seq or Config.DINI_H_SEQ)), reverse=True))
    dini_tol = max(Config.DINI_TOL_FLOOR, 10.0 * h_seq[-1])
    rng = np.random.default_rng(seed)
    xs = sample_states(rng, model.n, radius, n_states)
    picks = rng.integers(len(family), size=n_states)

    def one(i):
        x, index = xs[i], int(picks[i])
        v = float(V(x))
        est = dini_estimate(model, V, x, family[index], h_seq, tol)
        bound = a * v + M
        margin = est.value - bound
        return {'case': i, 'x_norm': float(np.linalg.norm(x)), 'x': x.tolist(), 'member': index, 'V': v,
                'dini': est.value, 'bound': bound, 'margin': margin, 'violation': margin / (1.0 + v),
                'converging': est.converging, 'dini_tol': dini_tol}

    records = map_jobs(one, list(range(n_states)), jobs)
    worst = max((r['violation'] for r in records), default=-math.inf)
    witness = None
    for r in records:
        if r['violation'] > dini_tol:
            witness = {k: r[k] for k in ('x', 'member', 'dini', 'bound', 'margin')}
            break
    for r in records:
        r['x'] = ' '.join(f'{c:.17g}' for c in r['x'])
    passed = worst <= dini_tol
    logger.info(f"Dissipation check (a={a:g}, M={M:g}) on '{model.field_id}': "
                f"max violation {worst:.3g} vs {dini_tol:.3g}, passed={passed}")
    return DissipationReport('dissipation', passed, worst, {'dini_tol': dini_tol, 'integrator_tol': tol},
                             records, witness, {'a': a, 'M': M, 'n_states': n_states},
                             h_sequence=h_seq, dini_tol=dini_tol)


# ----------------------------------------------------------------------
# Comparison principle


def comparison_bound(y0: float, a: float, M: float, t: float) -> float:
    """Solution of y' = a y + M: y0 e^{at} + (M/a)(e^{at} - 1)"""
    if not a > 0:
        raise DomainError(f"comparison bound needs a > 0, got {a!r}")
    if M < 0 or t < 0 or y0 < 0:
        raise DomainError("comparison bound needs y0, M, t >= 0")
    return y0 * math.exp(a * t) + (M / a) * math.expm1(a * t)


def rfc_from_lyapunov(psi1: MonotoneFn, psi2: MonotoneFn, C: float, a: float, M: float,
                      r: float, t: float) -> float:
    """psi_1^{-1}(e^{at}(psi_2(r) + C) + (M/a)(e^{at} - 1))"""
    return float(psi1.invert(comparison_bound(float(psi2(r)) + C, a, M, t)))


# ----------------------------------------------------------------------
# Bounded reachability certificates


@dataclass(frozen=True, eq=False)
class BrsCertificate:
    V: Evaluator
    psi1: MonotoneFn
    psi2: MonotoneFn
    C: float
    a: float
    gamma: MonotoneFn
    description: str = 'V'

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"certificate rate a must be positive, got {self.a!r}")
        if self.C < 0:
            raise DomainError(f"certificate constant C must be nonnegative, got {self.C!r}")
        if not self.gamma.is_kinf:
            raise ContractError("gamma must be of class K-infinity")

    def reach_bound(self, x_norm: float, u_norm: float, tau: float) -> Tuple[float, float]:
        """(max{|x|, gamma(|u|)}, psi_1^{-1}(e^{a tau}(psi_2(max{...}) + C)))"""
        level = max(x_norm, float(self.gamma(u_norm)))
        return level, float(self.psi1.invert(math.exp(self.a * tau) * (float(self.psi2(level)) + self.C)))

    def to_dict(self) -> Dict[str, Any]:
        return {'V': self.description, 'psi1': self.psi1.to_dict(), 'psi2': self.psi2.to_dict(),
                'C': self.C, 'a': self.a, 'gamma': self.gamma.to_dict()}


def brs_gate_margin(model: SystemModel, cert: BrsCertificate, x, u: Signal,
                    h_seq: Optional[Sequence[float]] = None, tol: float = Config.INTEGRATOR_TOL) -> Optional[float]:
    """Dini derivative minus a V(x) where the gate |x| >= gamma(|u|) is active, else None"""
    x = np.asarray(x, dtype=float).reshape(model.n)
    if np.linalg.norm(x) < float(cert.gamma(sup_norm(u))):
        return None
    est = dini_estimate(model, cert.V, x, u, h_seq, tol)
    return est.value - cert.a * float(cert.V(x))


def brs_check(model: SystemModel, cert: BrsCertificate, family: DisturbanceFamily, n_cases: int, tau: float,
              seed: int, radius: float = 1.0, h_seq: Optional[Sequence[float]] = None,
              tol: float = Config.INTEGRATOR_TOL, tol_pad: float = Config.TOL_PAD) -> CheckReport:
    """
    Gate check (Dini derivative <= a V on |x| >= gamma(|u|)) and trajectory
    check (|phi(t, x, u)| <= max of both reach bounds for t <= tau) at random
    (x, u). An escape is a contradiction with boundedness-implies-continuation
    and is reported as such.
    """
    h_seq = tuple(sorted((float(h) for h in (h_seq or Config.DINI_H_SEQ)), reverse=True))
    dini_tol = max(Config.DINI_TOL_FLOOR, 10.0 * h_seq[-1])
    rng = np.random.default_rng(seed)
    xs = sample_states(rng, model.n, radius, n_cases)
    records: List[Dict[str, Any]] = []
    gate_worst = traj_worst = -math.inf
    witness = None
    bic = False

    for i, x in enumerate(xs):
        index = int(rng.integers(len(family)))
        u = family[index]
        x_norm, u_norm = float(np.linalg.norm(x)), sup_norm(u)
        row: Dict[str, Any] = {'case': i, 'x_norm': x_norm, 'member': index, 'u_norm': u_norm}

        margin = brs_gate_margin(model, cert, x, u, h_seq, tol)
        row['gate_active'] = margin is not None
        if margin is not None:
            v = float(cert.V(x))
            row['gate_violation'] = margin / (1.0 + v)
            gate_worst = max(gate_worst, row['gate_violation'])
            if witness is None and row['gate_violation'] > dini_tol:
                witness = {'kind': 'gate', 'x': x.tolist(), 'member': index, 'margin': margin}

        traj = evolve(model, x, u, tau, tol)
        if traj.status.is_blowup:
            bic = True
            row['traj_violation'] = math.inf
            if witness is None:
                witness = {'kind': 'bic-contradiction', 'x': x.tolist(), 'member': index,
                           't_esc': traj.status.t_end}
            records.append(row)
            continue
        level, reach = cert.reach_bound(x_norm, u_norm, tau)
        bound = max(level, reach)
        excess = float(np.max(traj.norms())) - bound
        row.update({'level': level, 'reach_bound': reach, 'traj_violation': excess,
                    'tol_pad': tol_pad * (1.0 + bound)})
        traj_worst = max(traj_worst, excess)
        if witness is None and excess > row['tol_pad']:
            witness = {'kind': 'trajectory', 'x': x.tolist(), 'member': index, 'excess': excess}
        records.append(row)

    gate_ok = gate_worst <= dini_tol
    traj_ok = not bic and all(r['traj_violation'] <= r.get('tol_pad', 0.0) for r in records)
    passed = gate_ok and traj_ok
    logger.info(f"BRS check on '{model.field_id}': gate max {gate_worst:.3g}, trajectory max {traj_worst:.3g}, "
                f"passed={passed}")
    return CheckReport('brs', passed, max(gate_worst, traj_worst),
                       {'dini_tol': dini_tol, 'tol_pad': tol_pad, 'integrator_tol': tol}, records, witness,
                       {'gate_pass': gate_ok, 'trajectory_pass': traj_ok, 'bic_contradiction': bic,
                        'gate_max_violation': gate_worst, 'trajectory_max_violation': traj_worst,
                        'tau': tau, 'certificate': cert.to_dict()})


# ----------------------------------------------------------------------
# Construction diagnostics


def gap_trend_ok(gaps: Sequence[float], tol: float = Config.TOL_PAD) -> bool:
    """Family gaps listed from the smallest family up never grow by more than tol"""
    return all(later <= earlier + tol for earlier, later in zip(gaps, gaps[1:]))


def growth_check(constr: LyapConstruction, model: SystemModel, ks: Sequence[int], hs: Sequence[float],
                 n_states: int, seed: int, radius: float = 1.0,
                 families: Optional[Sequence[DisturbanceFamily]] = None,
                 tol_pad: float = Config.TOL_PAD) -> CheckReport:
    """
    V_k(phi(h, x, v)) <= e^h V_k(x) + (e^h - 1)/k at sampled x, v.

    The largest excess is the family gap: the slack from taking sups over a
    finite family instead of the whole disturbance set. With `families`
    (nested, smallest first) the gap is measured for each one at the same
    states and signals, and the check passes when the gaps do not grow.
    """
    families = list(families) if families else [constr.family]
    rng = np.random.default_rng(seed)
    xs = sample_states(rng, model.n, radius, n_states)
    picks = [int(rng.integers(len(families[0]))) for _ in xs]
    records = []
    gaps = []
    for family in families:
        current = replace(constr, family=family)
        gap = 0.0
        for i, (x, index) in enumerate(zip(xs, picks)):
            v = families[0][index]
            base = vk_profile(current, model, x, ks)
            for h in hs:
                moved = vk_profile(current, model, flow_at(model, x, v, h, constr.integrator_tol), ks)
                for k, before, after in zip(ks, base, moved):
                    excess = after - (math.exp(h) * before + math.expm1(h) / k)
                    gap = max(gap, excess)
                    records.append({'N': len(family), 'case': i, 'member': index, 'h': h, 'k': k,
                                    'V_before': before, 'V_after': after, 'excess': excess})
        gaps.append(gap)
        logger.info(f"Growth estimate: family gap {gap:.3g} with {len(family)} members")
    passed = gap_trend_ok(gaps, tol_pad)
    if not passed:
        logger.warning(f"Family gap grows under enlargement: {gaps}")
    return CheckReport('growth', passed, gaps[-1], {'integrator_tol': constr.integrator_tol, 'tol_pad': tol_pad},
                       records, details={'family_gap': gaps[-1], 'family_gaps': gaps,
                                         'family_sizes': [len(f) for f in families]})


def vk_lipschitz_check(constr: LyapConstruction, model: SystemModel, k: int, R: float, n_pairs: int,
                       seed: int, sup_gap: float = Config.TOL_PAD) -> CheckReport:
    """|V_k(x) - V_k(y)| <= M(R, k) |x - y| + 2 sup_gap on sampled pairs in B_R"""
    rng = np.random.default_rng(seed)
    M = constr.M(R, k)
    records = []
    worst = -math.inf
    for i in range(n_pairs):
        x, y = sample_states(rng, model.n, R, 2)
        diff = abs(vk_eval(constr, model, k, x) - vk_eval(constr, model, k, y))
        excess = diff - M * float(np.linalg.norm(x - y)) - 2.0 * sup_gap
        worst = max(worst, excess)
        records.append({'pair': i, 'distance': float(np.linalg.norm(x - y)), 'difference': diff,
                        'M': M, 'excess': excess})
    return CheckReport('vk-lipschitz', worst <= 0, worst, {'sup_gap': sup_gap}, records,
                       details={'k': k, 'R': R, 'M': M})


def sup_difference_check(f: Sequence[float], g: Sequence[float]) -> Tuple[float, float, bool]:
    """sup f - sup g <= sup (f - g) on a common finite index set"""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or f.size == 0:
        raise DomainError("f and g must share a nonempty index set")
    lhs = float(f.max() - g.max())
    rhs = float((f - g).max())
    return lhs, rhs, lhs <= rhs


def sandwich_check(constr: LyapConstruction, model: SystemModel, n_states: int, radius: float, seed: int,
                   tol_pad: float = Config.TOL_PAD, jobs: int = 1) -> CheckReport:
    """psi_1(|x|) <= W(x) <= |x| + C_upper + tail at sampled states of B_radius"""
    rng = np.random.default_rng(seed)
    xs = sample_states(rng, model.n, radius, n_states)

    def one(i):
        x = xs[i]
        r = float(np.linalg.norm(x))
        W, tail = w_eval(constr, model, x, with_tail=True)
        lower = float(psi1_eval(constr, r))
        upper = r + constr.C_upper + tail
        return {'case': i, 'x_norm': r, 'psi1': lower, 'W': W, 'upper': upper,
                'lower_violation': lower - W, 'upper_violation': W - upper, 'tol_pad': tol_pad}

    records = map_jobs(one, list(range(n_states)), jobs)
    worst = max((max(r['lower_violation'], r['upper_violation']) for r in records), default=-math.inf)
    witness = next(({'x_norm': r['x_norm'], 'W': r['W'], 'psi1': r['psi1'], 'upper': r['upper']}
                    for r in records if max(r['lower_violation'], r['upper_violation']) > tol_pad), None)
    passed = worst <= tol_pad
    logger.info(f"Sandwich check: max violation {worst:.3g}, passed={passed}")
    return CheckReport('sandwich', passed, worst, {'tol_pad': tol_pad}, records, witness,
                       {'C_upper': constr.C_upper, 'K': constr.K})


@dataclass(frozen=True)
class ProperSandwich:
    psi1: MonotoneFn
    psi2: MonotoneFn
    C: float


def proper_sandwich(V: Evaluator, n: int, r_grid: Sequence[float], n_samples: int, seed: int) -> ProperSandwich:
    """
    Sample-based sandwich psi_1(|x|) <= V(x) <= psi_2(|x|) + C.

    omega(r) = max V on B_r gives psi_2(r) = r + omega(r) - omega(0+) and
    C = omega(0+); psi_1 comes from the smallest V seen outside each radius.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.size < 2 or r_grid[0] <= 0 or np.any(np.diff(r_grid) <= 0):
        raise DomainError("radius grid must be positive, ascending and hold at least two radii")
    rng = np.random.default_rng(seed)
    pts = [np.zeros((1, n))]
    for r in r_grid:
        pts.append(sample_states(rng, n, r, n_samples, surface=True))
        pts.append(sample_states(rng, n, r, n_samples))
    pts = np.vstack(pts)
    norms = np.linalg.norm(pts, axis=1)
    vals = np.array([float(V(p)) for p in pts])

    omega = np.array([vals[norms <= r * (1 + 1e-12)].max() for r in r_grid])
    omega = np.maximum.accumulate(omega)
    C = float(omega[0])
    psi2 = MonotoneFn.from_points(np.concatenate([[0.0], r_grid]),
                                  np.concatenate([[0.0], r_grid + omega - C]))

    # psi_1 on [r_i, r_i+1] stays below the infimum seen outside r_i
    outer = np.array([vals[norms >= r * (1 - 1e-12)].min() for r in r_grid])
    outer = np.maximum(np.maximum.accumulate(outer), 0.0)
    psi1 = MonotoneFn.from_points(np.concatenate([[0.0], r_grid]), np.concatenate([[0.0, 0.0], outer[:-1]]),
                                  tail_slope=Config.SLOPE_FLOOR)
    return ProperSandwich(psi1, psi2, C)

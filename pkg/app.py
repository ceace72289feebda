"""
rfc-cert command line
Configuration-driven experiments: flow axioms, reachability envelopes,
xi forms, converse Lyapunov constructions and certificate checks
"""
import logging
import os
import sys
from functools import wraps
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, List, Optional

import click
import numpy as np
import pandas as pd

from config import get_config
from errors import ConfigError, ContractError, MaximalIntervalError, ModelError, NonRfcWitness, RfcCertError
from experiment_config import ExperimentConfig, load_config, parse_function, parse_state, require_positive
from flow import check_axioms, evolve
from lyap import (BrsCertificate, build_construction, brs_check, dissipation_check, growth_check, norm_v,
                  proper_sandwich, psi1_fn, rfc_from_lyapunov, sandwich_check, w_evaluator, w_lipschitz_bound)
from plots import envelope_svg, envelope_to_bytes, overlay_svg
from reach import XiForm, brs_probe, divergence_probe, envelope_estimate, mu_to_xi, rfc_bound_check
from reports import RunArtifacts
from signals import closure_check

logger = logging.getLogger('rfc_cert')

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def configure_logging(settings):
    """Rotating file log (skipped when testing) plus warnings on stderr"""
    root = logging.getLogger()
    level = getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO)
    root.setLevel(level)
    if settings.TESTING:
        return

    if not any(isinstance(h, RotatingFileHandler) for h in root.handlers):
        log_dir = os.path.dirname(settings.LOG_FILE)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            settings.LOG_FILE,
            maxBytes=settings.LOG_MAX_BYTES,
            backupCount=settings.LOG_BACKUP_COUNT
        )
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler.setLevel(level)
        root.addHandler(file_handler)

    if not any(getattr(h, 'rfc_cert_stream', False) for h in root.handlers):
        stream_handler = logging.StreamHandler(sys.stderr)
        stream_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        stream_handler.setLevel(logging.WARNING)
        stream_handler.rfc_cert_stream = True
        root.addHandler(stream_handler)


class Run:
    """Everything one subcommand needs: settings, parsed config, model, family and the artifact sink"""

    def __init__(self, config_path: str, out: Optional[str], seed: Optional[int], jobs: Optional[int],
                 env: Optional[str]):
        try:
            self.settings = get_config(env)
        except KeyError as e:
            raise ConfigError(str(e.args[0]), field='--env') from e
        configure_logging(self.settings)
        self.config: ExperimentConfig = load_config(config_path, seed, out)
        self.jobs = jobs or self.settings.JOBS
        self.tol = self.config.tolerances.integrator
        self.tol_pad = self.config.tolerances.tol_pad
        self.h_seq = self.config.tolerances.dini_h
        self.artifacts = RunArtifacts(self.config.output_dir)
        self.model = self.config.build_model()
        self.family = self.config.build_family(self.model.m)
        logger.info(f"Run of '{self.model.field_id}' with {len(self.family)} family members, "
                    f"seed {self.config.seed}, output {self.config.output_dir}")

    @property
    def seed(self) -> int:
        return self.config.seed

    def section(self, name: str) -> Dict[str, Any]:
        return self.config.section(name)

    def state(self, value: Any, name: str) -> np.ndarray:
        return parse_state(value, self.model.n, name)

    def int_field(self, section: str, key: str, default: int, minimum: Optional[int] = 1) -> int:
        return self.config.section_int(section, key, default, minimum)

    def float_field(self, section: str, key: str, default: float, positive: bool = False,
                    minimum: Optional[float] = None) -> float:
        return self.config.section_float(section, key, default, positive, minimum)


def _witness_payload(e: NonRfcWitness) -> Dict[str, Any]:
    return {'non_rfc_witness': True, 'x': [float(v) for v in np.ravel(e.x)], 'u': e.u.to_dict(),
            't_esc': e.t_esc, 'message': str(e)}


def run_command(name: str):
    """Shared options, error mapping and exit codes for every subcommand"""
    def decorator(fn):
        @click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                      help='Experiment JSON document')
        @click.option('--out', default=None, type=click.Path(file_okay=False), help='Output directory')
        @click.option('--seed', default=None, type=click.IntRange(min=0), help='Override the config seed')
        @click.option('--jobs', default=None, type=click.IntRange(min=1), help='Worker threads')
        @click.option('--env', default=None, help='Settings profile (development, production, testing)')
        @click.option('--xlsx', is_flag=True, help='Also bundle the tables into an Excel workbook')
        @wraps(fn)
        def wrapper(config_path, out, seed, jobs, env, xlsx, **kwargs):
            run = None
            try:
                run = Run(config_path, out, seed, jobs, env)
                passed = fn(run, **kwargs)
            except ConfigError as e:
                click.echo(f"Configuration error: {e}", err=True)
                sys.exit(EXIT_CONFIG)
            except NonRfcWitness as e:
                logger.warning(f"{name}: non-RFC witness: {e}")
                if run is not None:
                    run.artifacts.json(f'{name}_witness.json', _witness_payload(e))
                click.echo(f"{name}: non-RFC witness found: {e}", err=True)
                sys.exit(EXIT_FAIL)
            except (ContractError, ModelError, MaximalIntervalError) as e:
                logger.error(f"{name}: {e}")
                click.echo(f"{name}: {type(e).__name__}: {e}", err=True)
                sys.exit(EXIT_FAIL)
            except RfcCertError as e:
                click.echo(f"{name}: {e}", err=True)
                sys.exit(EXIT_FAIL)

            if xlsx:
                run.artifacts.workbook(f'{name}.xlsx')
            click.echo(f"{name}: {'PASS' if passed else 'FAIL'} ({len(run.artifacts.paths)} files in "
                       f"{run.config.output_dir})")
            sys.exit(EXIT_PASS if passed else EXIT_FAIL)
        return wrapper
    return decorator


@click.group(name='rfc-cert')
def cli():
    """Numerical certificates for robust forward completeness and bounded reachability sets."""


# ----------------------------------------------------------------------
# Flow


@cli.command('axioms')
@run_command('axioms')
def axioms_command(run: Run) -> bool:
    """Identity, causality, cocycle and continuity residuals of the flow."""
    sec = run.section('axioms')
    report = check_axioms(run.model, run.family, run.int_field('axioms', 'n_cases', 100), run.seed, run.tol,
                          run.float_field('axioms', 'state_radius', 1.0, positive=True),
                          run.float_field('axioms', 't_max', 1.0, positive=True))
    run.artifacts.csv('axioms.csv', report.to_frame())
    run.artifacts.json('axioms.json', report.to_dict())
    return report.passed


@cli.command('simulate')
@run_command('simulate')
def simulate_command(run: Run) -> bool:
    """Trajectory table for chosen family members; exits 1 on a blow-up."""
    sec = run.section('simulate')
    x0 = run.state(sec.get('x0', [1.0] * run.model.n), 'simulate.x0')
    T = require_positive(sec.get('T', 1.0), 'simulate.T')
    members = sec.get('members', [0])
    if not isinstance(members, list) or any(not isinstance(i, int) or not 0 <= i < len(run.family)
                                            for i in members):
        raise ConfigError(f"must list member indices below {len(run.family)}", field='simulate.members')

    frames: List[pd.DataFrame] = []
    statuses = []
    for index in members:
        traj = evolve(run.model, x0, run.family[index], T, run.tol)
        frame = traj.to_frame()
        frame.insert(0, 'member', index)
        frames.append(frame)
        statuses.append({'member': index, **traj.status.to_dict()})
    run.artifacts.csv('trajectory.csv', pd.concat(frames, ignore_index=True))
    run.artifacts.json('simulate.json', {'x0': x0, 'T': T, 'integrator_tol': run.tol, 'runs': statuses})
    return not any(s['kind'] == 'blowup' for s in statuses)


# ----------------------------------------------------------------------
# Envelopes


def _envelope(run: Run):
    sec = run.section('envelope')
    env = envelope_estimate(run.model, run.family, run.config.grids.r, run.config.grids.t,
                            run.int_field('envelope', 'n_sphere', 8), run.seed, run.tol,
                            n_interior=sec.get('n_interior'), refine=bool(sec.get('refine', False)),
                            jobs=run.jobs)
    run.artifacts.csv('envelope.csv', env.to_frame(), index=True)
    return env


def _xi_form(run: Run, name: str) -> XiForm:
    """xi form given in the section, or derived from a fresh envelope"""
    sec = run.section(name)
    if 'xi' in sec:
        c = run.float_field(name, 'c', 0.0, minimum=0.0)
        return XiForm(parse_function(sec['xi'], f'{name}.xi'), c)
    return mu_to_xi(_envelope(run), sec.get('r_min'))


@cli.command('envelope')
@run_command('envelope')
def envelope_command(run: Run) -> bool:
    """Sampled reachability envelope mu(r, t) as CSV, SVG and PNG."""
    env = _envelope(run)
    run.artifacts.text('envelope.svg', envelope_svg(env.r_grid, env.t_grid, env.values))
    run.artifacts.binary('envelope.png', envelope_to_bytes(env.r_grid, env.t_grid, env.values))
    run.artifacts.json('envelope.json', {
        'r_grid': env.r_grid, 't_grid': env.t_grid, 'n_sphere': env.n_sphere, 'members': len(env.family),
        'max_value': float(env.values.max()), 'pads': {'interpolation_tol': env.interpolation_tol,
                                                       'integrator_tol': env.integrator_tol}})
    return True


@cli.command('xi')
@run_command('xi')
def xi_command(run: Run) -> bool:
    """Reduce the envelope to xi(|x|) + xi(t) + c."""
    sec = run.section('xi')
    env = _envelope(run)
    form = mu_to_xi(env, sec.get('r_min'))
    s = np.union1d(env.r_grid, env.t_grid)
    run.artifacts.csv('xi.csv', pd.DataFrame({'s': s, 'xi': form.xi(s), 'zeta': form.zeta(s),
                                              'tol_pad': env.interpolation_tol * (1.0 + form.zeta(s))}))
    payload = form.to_dict()
    payload['pads'] = {'interpolation_tol': env.interpolation_tol, 'c_bias_r_min': form.r_min}
    run.artifacts.json('xi.json', payload)
    return True


@cli.command('rfc-bound')
@run_command('rfc-bound')
def rfc_bound_command(run: Run) -> bool:
    """Lyapunov-derived RFC bound curve against simulated trajectory norms."""
    sec = run.section('rfc-bound')
    psi1 = parse_function(sec.get('psi1', 'identity'), 'rfc-bound.psi1')
    psi2 = parse_function(sec.get('psi2', 'identity'), 'rfc-bound.psi2')
    C = run.float_field('rfc-bound', 'C', 0.0, minimum=0.0)
    a = require_positive(sec.get('a', 1.0), 'rfc-bound.a')
    M = run.float_field('rfc-bound', 'M', 0.0, minimum=0.0)
    T = require_positive(sec.get('T', 1.0), 'rfc-bound.T')
    times = np.linspace(0.0, T, run.int_field('rfc-bound', 'n_points', 101, minimum=2))
    starts = [run.state(x, f'rfc-bound.x0[{i}]') for i, x in enumerate(sec.get('x0', [[1.0] * run.model.n]))]

    rows = []
    traces = []
    curve = None
    for i, x0 in enumerate(starts):
        r = float(np.linalg.norm(x0))
        bound = np.array([rfc_from_lyapunov(psi1, psi2, C, a, M, r, t) for t in times])
        norms = np.zeros_like(times)
        for u in run.family:
            traj = evolve(run.model, x0, u, T, run.tol)
            if traj.status.is_blowup:
                raise NonRfcWitness(x0, u, traj.status.t_end)
            trace = np.linalg.norm(traj.at_many(times), axis=1)
            norms = np.maximum(norms, trace)
            if i == 0:
                traces.append(trace)
        if curve is None:
            curve = bound
        for t, b, n in zip(times, bound, norms):
            rows.append({'start': i, 'x0_norm': r, 't': t, 'bound': b, 'max_norm': n, 'violation': n - b,
                         'tol_pad': run.tol_pad * (1.0 + b)})
    frame = pd.DataFrame(rows)
    passed = bool((frame['violation'] <= frame['tol_pad']).all())
    run.artifacts.csv('rfc_bound.csv', frame)
    run.artifacts.text('rfc_bound.svg', overlay_svg(times, curve, traces))
    summary: Dict[str, Any] = {'pass': passed, 'max_violation': float(frame['violation'].max()),
                               'pads': {'tol_pad': run.tol_pad, 'integrator_tol': run.tol},
                               'a': a, 'M': M, 'C': C}

    if 'xi' in sec:
        report = rfc_bound_check(run.model, run.family, _xi_form(run, 'rfc-bound'),
                                 run.int_field('rfc-bound', 'n_cases', 100), run.seed,
                                 run.float_field('rfc-bound', 'radius', 1.0, positive=True), T, run.tol, run.tol_pad)
        run.artifacts.csv('rfc_bound_xi.csv', report.to_frame())
        summary['xi_check'] = report.to_dict()
        passed = passed and report.passed
        summary['pass'] = passed
    run.artifacts.json('rfc_bound.json', summary)
    return passed


# ----------------------------------------------------------------------
# Lyapunov construction and certificates


def _construction(run: Run):
    spec = run.config.construction
    form = _xi_form(run, 'construct-lyap')
    return build_construction(run.model, form, run.family, spec.R_work, spec.K, run.seed, spec.n_pairs, run.tol,
                              spec.t_divisions, spec.tail_tol, run.jobs)


def _table(constr, table: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame(table, index=pd.Index(constr.R_grid, name='R'),
                         columns=[f'k={k}' for k in range(1, constr.K + 1)])
    return frame


@cli.command('construct-lyap')
@run_command('construct-lyap')
def construct_lyap_command(run: Run) -> bool:
    """Tabulate rho, T(R, k), M(R, k) and the weights of W."""
    constr = _construction(run)
    run.artifacts.json('lyap_construction.json', constr.to_dict())
    run.artifacts.csv('T_table.csv', _table(constr, constr.T_table), index=True)
    run.artifacts.csv('M_table.csv', _table(constr, constr.M_table), index=True)
    run.artifacts.csv('D_table.csv', _table(constr, constr.disc_table), index=True)
    return True


def _growth(run: Run, constr, radius: float):
    """Growth estimate of the V_k over the configured family and its doublings"""
    doublings = run.int_field('check-lyap', 'growth_doublings', 0, minimum=0)
    if doublings and run.config.family.members:
        raise ConfigError("family enlargement needs a sampled family", field='check-lyap.growth_doublings')
    N = run.config.family.N
    families = [run.family] + [run.config.build_family(run.model.m, N * 2 ** i)
                               for i in range(1, doublings + 1)]
    return growth_check(constr, run.model, [1, 2, 4, 8], [0.01, 0.05, 0.1],
                        run.int_field('check-lyap', 'n_growth', 10), run.seed, radius, families, run.tol_pad)


@cli.command('check-lyap')
@run_command('check-lyap')
def check_lyap_command(run: Run) -> bool:
    """Dini-derivative dissipation of W (or of |x|) plus the sandwich bounds of W."""
    sec = run.section('check-lyap')
    radius = run.float_field('check-lyap', 'radius', 1.0, positive=True)
    n_states = run.int_field('check-lyap', 'n_states', 50)
    a = run.float_field('check-lyap', 'a', 1.0, positive=True)
    summary: Dict[str, Any] = {}
    sandwich = growth = None

    if sec.get('V', 'W') == 'norm':
        V = norm_v
        M = run.float_field('check-lyap', 'M', 0.0, minimum=0.0)
        estimate = proper_sandwich(V, run.model.n, np.linspace(radius / 4.0, radius, 4), 10, run.seed)
        summary['proper_sandwich'] = {'psi1': estimate.psi1.to_dict(), 'psi2': estimate.psi2.to_dict(),
                                      'C': estimate.C}
    else:
        constr = _construction(run)
        V = w_evaluator(constr, run.model)
        slack = run.float_field('check-lyap', 'M_slack', 1e-3, minimum=0.0)
        M = run.float_field('check-lyap', 'M', constr.C2 + slack, minimum=0.0)
        sandwich = sandwich_check(constr, run.model, run.int_field('check-lyap', 'n_sandwich', n_states),
                                  run.float_field('check-lyap', 'sandwich_radius', radius, positive=True),
                                  run.seed, run.tol_pad, run.jobs)
        run.artifacts.csv('sandwich.csv', sandwich.to_frame())
        summary['sandwich'] = sandwich.to_dict()
        summary['C2'] = constr.C2
        summary['psi1'] = psi1_fn(constr).to_dict()
        summary['W_lipschitz'] = [{'R': float(R), 'L': w_lipschitz_bound(constr, float(R))}
                                 for R in constr.R_grid]
        summary['W_discretization'] = constr.disc_bound(radius)
        if 'growth_doublings' in sec:
            growth = _growth(run, constr, radius)
            run.artifacts.csv('growth.csv', growth.to_frame())
            summary['growth'] = growth.to_dict()

    report = dissipation_check(run.model, V, run.family, n_states, a, M, run.seed, radius, run.h_seq, run.tol,
                               run.jobs)
    run.artifacts.csv('dissipation.csv', report.to_frame())
    summary['dissipation'] = report.to_dict()
    passed = report.passed and all(check is None or check.passed for check in (sandwich, growth))
    summary['pass'] = passed
    run.artifacts.json('check_lyap.json', summary)
    return passed


@cli.command('brs')
@run_command('brs')
def brs_command(run: Run) -> bool:
    """Gate and trajectory checks of a bounded-reachability certificate with V = |x|."""
    sec = run.section('brs')
    if sec.get('V', 'norm') != 'norm':
        raise ConfigError("only V = 'norm' certificates are supported", field='brs.V')
    cert = BrsCertificate(norm_v,
                          parse_function(sec.get('psi1', 'identity'), 'brs.psi1'),
                          parse_function(sec.get('psi2', 'identity'), 'brs.psi2'),
                          run.float_field('brs', 'C', 0.0, minimum=0.0),
                          require_positive(sec.get('a', 1.0), 'brs.a'),
                          parse_function(sec.get('gamma', 'identity'), 'brs.gamma'),
                          'norm')
    report = brs_check(run.model, cert, run.family, run.int_field('brs', 'n_cases', 100),
                       require_positive(sec.get('tau', 5.0), 'brs.tau'), run.seed,
                       run.float_field('brs', 'radius', 1.0, positive=True), run.h_seq, run.tol, run.tol_pad)
    run.artifacts.csv('brs.csv', report.to_frame())
    run.artifacts.json('brs.json', report.to_dict())
    return report.passed


# ----------------------------------------------------------------------
# Family and probes


@cli.command('closure')
@run_command('closure')
def closure_command(run: Run) -> bool:
    """Shift and concatenation closure of the disturbance family."""
    sec = run.section('closure')
    report = closure_check(run.family, run.family.norm_kind, run.family.p, sec.get('max_pairs'))
    run.artifacts.json('closure.json', report.to_dict())
    return report.closed


@cli.command('diverge')
@run_command('diverge')
def diverge_command(run: Run) -> bool:
    """Envelope value at (|x0|, t) as the disturbance radius grows."""
    sec = run.section('diverge')
    schedule = run.config.section_floats('diverge', 'R_schedule', [1.0, 2.0, 4.0])
    t_probe = require_positive(sec.get('t_probe', 1.0), 'diverge.t_probe')
    x0 = run.state(sec.get('x0', [1.0] * run.model.n), 'diverge.x0')
    spec = run.config.family
    values = divergence_probe(run.model, schedule, t_probe, x0, spec.delta, spec.lattice, spec.N, run.seed,
                              run.int_field('diverge', 'n_sphere', 4), run.tol)
    frame = pd.DataFrame({'R': schedule, 'value': values})
    frame['tol_pad'] = run.tol * (1.0 + frame['value'])
    run.artifacts.csv('diverge.csv', frame)
    return True


@cli.command('brs-reach')
@run_command('brs-reach')
def brs_reach_command(run: Run) -> bool:
    """Sup of |phi| over |x| <= C, |u| <= C and t <= tau for a schedule of C."""
    sec = run.section('brs-reach')
    schedule = run.config.section_floats('brs-reach', 'C_schedule', [0.5, 1.0, 2.0])
    tau = require_positive(sec.get('tau', 1.0), 'brs-reach.tau')
    spec = run.config.family
    values = brs_probe(run.model, schedule, tau, spec.delta, spec.lattice, spec.N, run.seed,
                       run.int_field('brs-reach', 'n_sphere', 4), run.tol)
    frame = pd.DataFrame({'C': schedule, 'value': values})
    frame['tol_pad'] = run.tol * (1.0 + frame['value'])
    run.artifacts.csv('brs_reach.csv', frame)
    return True


def main():
    cli()


if __name__ == '__main__':
    main()

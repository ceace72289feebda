import json
import math
import os

import pandas as pd
import pytest
from click.testing import CliRunner

from app import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, cli

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')


def invoke(command, config, out, *extra):
    args = [command, '--config', str(config), '--out', str(out), '--env', 'testing', *extra]
    return CliRunner().invoke(cli, args)


def bundled(name):
    return os.path.join(CONFIGS, name)


def write_config(tmp_path, document, name='experiment.json'):
    path = tmp_path / name
    path.write_text(json.dumps(document, indent=2))
    return path


def read_json(path):
    with open(path, encoding='utf-8') as fh:
        return json.load(fh)


def small_rfc(**sections):
    document = {
        'seed': 7,
        'model': {'field_id': 'scalar_rfc'},
        'family': {'R': 1.0, 'delta': 0.5, 'lattice': 3, 'N': 2, 'horizon': 1.0},
        'construction': {'K': 4, 'R_work': 1.0, 't_divisions': 64, 'n_pairs': 3},
    }
    document.update(sections)
    return document


CLOSED_FORM_XI = {'knots': [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
                  'values': [0.0, 1.3243606353500641, 3.718281828459045, 16.7781121978613,
                             63.25661076956300, 222.3926001075360, 747.0657955128036],
                  'tail_slope': 1000.0}


def test_closure_of_a_sup_family(tmp_path):
    result = invoke('closure', bundled('closure_sup.json'), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    report = read_json(tmp_path / 'closure.json')
    assert report['closed'] is True
    assert report['schema_version'] == 1


def test_closure_of_an_l1_family(tmp_path):
    result = invoke('closure', bundled('closure_l1.json'), tmp_path)
    assert result.exit_code == EXIT_FAIL
    witness = read_json(tmp_path / 'closure.json')['witness']
    assert witness['norm'] == pytest.approx(2.0)
    assert witness['t'] == 1.0


def test_malformed_json_reports_line_and_column(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{\n  "seed": 1,\n  "model": {"field_id": "scalar_rfc",}\n}\n')
    result = invoke('closure', path, tmp_path)
    assert result.exit_code == EXIT_CONFIG
    assert 'line 3' in result.output
    assert 'column' in result.output


@pytest.mark.parametrize('document, field', [
    ({'seed': 1, 'model': {'field_id': 'pendulum'}, 'family': {'R': 1.0, 'delta': 0.5}}, 'model.field_id'),
    ({'seed': 1, 'model': {'field_id': 'scalar_rfc'}, 'family': {'R': -1.0, 'delta': 0.5}}, 'family.R'),
    ({'seed': 1, 'model': {'field_id': 'scalar_rfc'}}, 'family'),
    ({'seed': 1, 'model': {'field_id': 'scalar_rfc'}, 'family': {'R': 1.0, 'delta': 0.5},
      'grids': {'r': [1.0, 0.5]}}, 'grids.r'),
])
def test_invalid_documents_exit_with_the_config_code(tmp_path, document, field):
    result = invoke('axioms', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_CONFIG
    assert field in result.output


@pytest.mark.parametrize('command, section, field', [
    ('axioms', {'axioms': {'n_cases': 'many'}}, 'axioms.n_cases'),
    ('axioms', {'axioms': {'t_max': -1.0}}, 'axioms.t_max'),
    ('envelope', {'envelope': {'n_sphere': 2.5}}, 'envelope.n_sphere'),
    ('rfc-bound', {'rfc-bound': {'C': 'large'}}, 'rfc-bound.C'),
    ('check-lyap', {'check-lyap': {'V': 'norm', 'n_states': '20'}}, 'check-lyap.n_states'),
    ('brs', {'brs': {'radius': [1.0]}}, 'brs.radius'),
    ('diverge', {'diverge': {'R_schedule': [1.0, 'two']}}, 'diverge.R_schedule'),
    ('brs-reach', {'brs-reach': {'C_schedule': []}}, 'brs-reach.C_schedule'),
    ('simulate', {'simulate': {'x0': ['one']}}, 'simulate.x0'),
    ('construct-lyap', {'construct-lyap': {'xi': 'identity', 'c': 'zero'}}, 'construct-lyap.c'),
])
def test_non_numeric_section_values_name_the_field(tmp_path, command, section, field):
    result = invoke(command, write_config(tmp_path, small_rfc(**section)), tmp_path)
    assert result.exit_code == EXIT_CONFIG, result.output
    assert field in result.output
    assert 'Traceback' not in result.output


def test_unknown_environment_is_a_config_error(tmp_path):
    args = ['closure', '--config', bundled('closure_sup.json'), '--out', str(tmp_path), '--env', 'staging']
    result = CliRunner().invoke(cli, args)
    assert result.exit_code == EXIT_CONFIG


def test_diverge_on_scalar_xu(tmp_path):
    result = invoke('diverge', bundled('scalar_xu.json'), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    frame = pd.read_csv(tmp_path / 'diverge.csv')
    assert list(frame['R']) == [1.0, 2.0, 4.0]
    assert list(frame['value']) == pytest.approx([math.e, math.exp(2.0), math.exp(4.0)], rel=1e-6)


def test_repeated_runs_are_byte_identical(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    for out in (first, second):
        assert invoke('diverge', bundled('scalar_xu.json'), out).exit_code == EXIT_PASS
        assert invoke('closure', bundled('closure_sup.json'), out).exit_code == EXIT_PASS
    for name in ('diverge.csv', 'closure.json'):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert b'\r\n' not in (first / 'diverge.csv').read_bytes()


def test_simulate_reports_a_blowup(tmp_path):
    result = invoke('simulate', bundled('quadratic.json'), tmp_path)
    assert result.exit_code == EXIT_FAIL
    frame = pd.read_csv(tmp_path / 'trajectory.csv')
    assert frame['status'].iloc[-1] == 'blowup'
    assert frame['t'].iloc[-1] < 1.0 + 1e-6
    runs = read_json(tmp_path / 'simulate.json')['runs']
    assert runs[0]['kind'] == 'blowup'


def test_axioms_on_the_plane_contraction(tmp_path):
    result = invoke('axioms', bundled('linear_contraction.json'), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    summary = read_json(tmp_path / 'axioms.json')
    assert summary['max_residuals']['identity'] == 0.0
    assert len(pd.read_csv(tmp_path / 'axioms.csv')) == 50


def test_envelope_artifacts_and_workbook(tmp_path):
    result = invoke('envelope', bundled('linear_contraction.json'), tmp_path, '--xlsx')
    assert result.exit_code == EXIT_PASS, result.output
    for name in ('envelope.csv', 'envelope.svg', 'envelope.png', 'envelope.json', 'envelope.xlsx'):
        assert (tmp_path / name).exists()
    assert (tmp_path / 'envelope.png').read_bytes()[:8] == b'\x89PNG\r\n\x1a\n'
    frame = pd.read_csv(tmp_path / 'envelope.csv', index_col='r')
    assert frame.loc[2.0].max() == pytest.approx(2.0, abs=1e-6)


def test_xi_of_the_plane_contraction(tmp_path):
    result = invoke('xi', bundled('linear_contraction.json'), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    form = read_json(tmp_path / 'xi.json')
    assert form['c'] == pytest.approx(0.0, abs=1e-2)
    assert form['r_min'] == 0.001


def test_construct_lyap_tables(tmp_path):
    document = small_rfc(**{'construct-lyap': {'xi': CLOSED_FORM_XI, 'c': 0.0}})
    result = invoke('construct-lyap', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    bundle = read_json(tmp_path / 'lyap_construction.json')
    assert bundle['K'] == 4
    assert bundle['C2'] <= math.log(2.0)
    T = pd.read_csv(tmp_path / 'T_table.csv', index_col='R')
    assert list(T.columns) == ['k=1', 'k=2', 'k=3', 'k=4']
    assert 1.65 <= T.loc[1.0, 'k=2'] <= 1.70
    D = pd.read_csv(tmp_path / 'D_table.csv', index_col='R')
    assert (D.values >= 0).all()
    assert D.values.ravel().tolist() == pytest.approx([v for row in bundle['disc_table'] for v in row])


def test_check_lyap_with_the_norm(tmp_path):
    document = small_rfc(**{'check-lyap': {'V': 'norm', 'a': 1.0, 'M': 0.0, 'n_states': 20, 'radius': 2.0}})
    result = invoke('check-lyap', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    summary = read_json(tmp_path / 'check_lyap.json')
    assert summary['dissipation']['pass'] is True
    assert 'sandwich' not in summary
    estimate = summary['proper_sandwich']
    assert estimate['C'] >= 0.0
    assert {'psi1', 'psi2'} <= set(estimate)


def test_check_lyap_with_the_construction(tmp_path):
    document = small_rfc(**{'construct-lyap': {'xi': CLOSED_FORM_XI, 'c': 0.0},
                            'check-lyap': {'n_states': 4, 'radius': 1.0, 'M_slack': 0.1}})
    result = invoke('check-lyap', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    summary = read_json(tmp_path / 'check_lyap.json')
    assert summary['sandwich']['pass'] is True
    assert summary['dissipation']['M'] == pytest.approx(summary['C2'] + 0.1)
    assert [row['R'] for row in summary['W_lipschitz']] == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert summary['W_discretization'] >= 0.0
    assert 'knots' in summary['psi1']


def test_check_lyap_growth_over_family_doublings(tmp_path):
    document = small_rfc(**{'construct-lyap': {'xi': CLOSED_FORM_XI, 'c': 0.0},
                            'check-lyap': {'n_states': 2, 'n_sandwich': 2, 'M_slack': 0.1,
                                           'growth_doublings': 1, 'n_growth': 2}})
    result = invoke('check-lyap', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    growth = read_json(tmp_path / 'check_lyap.json')['growth']
    assert growth['pass'] is True
    assert len(growth['family_gaps']) == 2
    assert growth['family_sizes'][0] < growth['family_sizes'][1]
    assert (tmp_path / 'growth.csv').exists()


def test_rfc_bound_curve(tmp_path):
    document = small_rfc(**{'rfc-bound': {'T': 2.0, 'x0': [[0.5], [-1.0]], 'n_points': 21,
                                          'xi': CLOSED_FORM_XI, 'c': 0.0, 'n_cases': 20}})
    result = invoke('rfc-bound', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    frame = pd.read_csv(tmp_path / 'rfc_bound.csv')
    assert len(frame) == 42
    assert (frame['violation'] <= frame['tol_pad']).all()
    assert (tmp_path / 'rfc_bound.svg').exists()
    assert read_json(tmp_path / 'rfc_bound.json')['xi_check']['pass'] is True


def decay_document(**brs):
    section = {'V': 'norm', 'a': 1.0, 'n_cases': 40, 'tau': 3.0, 'radius': 0.5}
    section.update(brs)
    return {'seed': 3, 'model': {'field_id': 'decay_plus_input'},
            'family': {'R': 1.0, 'delta': 0.5, 'lattice': 3, 'N': 4, 'horizon': 2.0}, 'brs': section}


def test_brs_certificate_for_decay(tmp_path):
    result = invoke('brs', write_config(tmp_path, decay_document(gamma='identity')), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    report = read_json(tmp_path / 'brs.json')
    assert report['gate_pass'] is True and report['trajectory_pass'] is True


def test_brs_broken_gain_fails_the_gate(tmp_path):
    result = invoke('brs', write_config(tmp_path, decay_document(gamma={'linear': 0.1})), tmp_path)
    assert result.exit_code == EXIT_FAIL
    assert read_json(tmp_path / 'brs.json')['gate_pass'] is False


def test_brs_reach_of_the_quadratic(tmp_path):
    document = {'seed': 0, 'model': {'field_id': 'quadratic'},
                'family': {'R': 0.0, 'delta': 1.0, 'lattice': 1, 'N': 1, 'horizon': 1.0},
                'tolerances': {'integrator': 1e-8},
                'brs-reach': {'C_schedule': [0.5, 2.0], 'tau': 1.0}}
    result = invoke('brs-reach', write_config(tmp_path, document), tmp_path)
    assert result.exit_code == EXIT_PASS, result.output
    frame = pd.read_csv(tmp_path / 'brs_reach.csv')
    assert frame['value'].iloc[0] == pytest.approx(1.0, rel=1e-6)
    assert math.isinf(frame['value'].iloc[1])

#!/usr/bin/env python3
"""
Final verification of the bundled experiments
Runs every rfc-cert command on the configs/ documents and checks the expected outcomes
"""

import json
import math
import os
import sys
import tempfile

import pandas as pd
from click.testing import CliRunner

from app import EXIT_FAIL, EXIT_PASS, cli

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')


def run(command, config, out, *extra):
    args = [command, '--config', os.path.join(CONFIGS, config), '--out', out, '--env', 'testing', *extra]
    return CliRunner().invoke(cli, args)


def load(out, name):
    with open(os.path.join(out, name), encoding='utf-8') as fh:
        return json.load(fh)


def final_verification():
    """Complete verification of the bundled experiments"""
    print("FINAL VERIFICATION: rfc-cert bundled experiments")
    print("=" * 60)
    results = {}
    root = tempfile.mkdtemp(prefix='rfc-cert-')

    # Step 1: Closure dichotomy
    print("\n1. Checking disturbance family closure...")
    out = os.path.join(root, 'closure')
    sup = run('closure', 'closure_sup.json', out)
    print(f"   sup-norm family exit code: {sup.exit_code}")
    l1 = run('closure', 'closure_l1.json', out)
    witness = load(out, 'closure.json').get('witness') or {}
    print(f"   L1 family exit code: {l1.exit_code}, witness norm: {witness.get('norm')}")
    results['closure'] = (sup.exit_code == EXIT_PASS and l1.exit_code == EXIT_FAIL
                          and math.isclose(witness.get('norm', 0.0), 2.0, rel_tol=1e-9))

    # Step 2: Axioms
    print("\n2. Checking flow axioms...")
    ok = True
    for config in ('scalar_rfc.json', 'decay_plus_input.json', 'linear_contraction.json'):
        out = os.path.join(root, 'axioms', config)
        result = run('axioms', config, out)
        residuals = load(out, 'axioms.json')['max_residuals']
        print(f"   {config}: exit {result.exit_code}, residuals {residuals}")
        ok = ok and result.exit_code == EXIT_PASS
    results['axioms'] = ok

    # Step 3: Divergence of scalar_xu
    print("\n3. Checking the divergence probe...")
    out = os.path.join(root, 'diverge')
    result = run('diverge', 'scalar_xu.json', out)
    values = list(pd.read_csv(os.path.join(out, 'diverge.csv'))['value'])
    expected = [math.exp(R) for R in (1.0, 2.0, 4.0)]
    for v, e in zip(values, expected):
        print(f"   value {v:.6f} (expected {e:.6f})")
    results['diverge'] = (result.exit_code == EXIT_PASS
                          and all(math.isclose(v, e, rel_tol=1e-4) for v, e in zip(values, expected)))

    # Step 4: Lyapunov construction on scalar_rfc
    print("\n4. Checking the Lyapunov construction...")
    out = os.path.join(root, 'lyap')
    built = run('construct-lyap', 'scalar_rfc.json', out)
    print(f"   construct-lyap exit code: {built.exit_code}")
    checked = run('check-lyap', 'scalar_rfc.json', out)
    summary = load(out, 'check_lyap.json')
    print(f"   check-lyap exit code: {checked.exit_code}")
    print(f"   C2 = {summary['C2']:.6f}, sandwich pass: {summary['sandwich']['pass']}, "
          f"dissipation pass: {summary['dissipation']['pass']}")
    results['lyapunov'] = built.exit_code == EXIT_PASS and checked.exit_code == EXIT_PASS

    # Step 5: RFC bound from V = |x|
    print("\n5. Checking the RFC bound curve...")
    out = os.path.join(root, 'rfc_bound')
    result = run('rfc-bound', 'scalar_rfc.json', out)
    print(f"   rfc-bound exit code: {result.exit_code}, "
          f"max violation: {load(out, 'rfc_bound.json')['max_violation']:.3e}")
    results['rfc_bound'] = result.exit_code == EXIT_PASS

    # Step 6: Bounded reachability certificates
    print("\n6. Checking bounded reachability certificates...")
    good = run('brs', 'decay_plus_input.json', os.path.join(root, 'brs_good'))
    broken_out = os.path.join(root, 'brs_broken')
    broken = run('brs', 'decay_broken_gamma.json', broken_out)
    report = load(broken_out, 'brs.json')
    print(f"   gamma = id exit code: {good.exit_code}")
    print(f"   gamma = s/10 exit code: {broken.exit_code}, gate pass: {report['gate_pass']}")
    results['brs'] = good.exit_code == EXIT_PASS and broken.exit_code == EXIT_FAIL and not report['gate_pass']

    # Step 7: Finite escape
    print("\n7. Checking finite escape of x' = x^2...")
    out = os.path.join(root, 'quadratic')
    result = run('simulate', 'quadratic.json', out)
    status = load(out, 'simulate.json')['runs'][0]
    print(f"   simulate exit code: {result.exit_code}, status: {status['kind']} at t = {status['t_end']:.6f}")
    results['blowup'] = (result.exit_code == EXIT_FAIL and status['kind'] == 'blowup'
                         and math.isclose(status['t_end'], 1.0, rel_tol=0.02))

    # Step 8: Determinism
    print("\n8. Checking byte-identical reruns...")
    first, second = os.path.join(root, 'first'), os.path.join(root, 'second')
    for out in (first, second):
        run('diverge', 'scalar_xu.json', out)
        run('envelope', 'linear_contraction.json', out)
    identical = True
    for name in ('diverge.csv', 'envelope.csv', 'envelope.json'):
        with open(os.path.join(first, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
            same = a.read() == b.read()
        print(f"   {name}: {'identical' if same else 'DIFFERENT'}")
        identical = identical and same
    results['determinism'] = identical

    print("\n" + "=" * 60)
    print("SUMMARY:")
    for name, ok in results.items():
        print(f"   {'PASS' if ok else 'FAIL'}  {name}")
    print(f"   Artifacts kept in {root}")
    print("=" * 60)
    return all(results.values())


if __name__ == "__main__":
    sys.exit(0 if final_verification() else 1)

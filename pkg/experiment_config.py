"""
Experiment configuration parser
Reads the JSON experiment document into typed specs and builds models,
families and comparison functions from it
"""
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from config import Config
from errors import ConfigError, ContractError, RfcCertError
from flow import CATALOG, SystemModel, build_model
from kfun import MonotoneFn
from signals import DisturbanceFamily, Signal, sample_family


@dataclass
class ModelSpec:
    field_id: str
    params: Dict[str, Any] = field(default_factory=dict)
    lip_bound: Optional[MonotoneFn] = None


@dataclass
class FamilySpec:
    R: float
    delta: float
    lattice: int = 3
    N: int = 10
    horizon: float = 2.0
    norm_kind: str = 'sup'
    p: float = math.inf
    members: Optional[List[Signal]] = None


@dataclass
class GridSpec:
    r: List[float]
    t: List[float]


@dataclass
class ConstructionSpec:
    K: Optional[int] = None
    R_work: float = 5.0
    t_divisions: int = Config.T_DIVISIONS
    n_pairs: int = 20
    tail_tol: float = Config.TAIL_TOL


@dataclass
class ToleranceSpec:
    integrator: float = Config.INTEGRATOR_TOL
    tol_pad: float = Config.TOL_PAD
    dini_h: List[float] = field(default_factory=lambda: list(Config.DINI_H_SEQ))


@dataclass
class ExperimentConfig:
    """One experiment: model, disturbance family, grids, knobs and per-subcommand sections"""
    path: str
    seed: int
    model: ModelSpec
    family: FamilySpec
    grids: GridSpec
    construction: ConstructionSpec
    tolerances: ToleranceSpec
    output_dir: str
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def base_dir(self) -> str:
        return os.path.dirname(os.path.abspath(self.path))

    def section(self, name: str) -> Dict[str, Any]:
        return self.sections.get(name, {})

    def section_int(self, name: str, key: str, default: int, minimum: Optional[int] = 1) -> int:
        """Integer knob of a subcommand section; field errors name `<section>.<key>`"""
        return ExperimentConfigParser()._int(self.section(name), key, default, minimum=minimum, prefix=name)

    def section_float(self, name: str, key: str, default: float, positive: bool = False,
                      minimum: Optional[float] = None) -> float:
        return ExperimentConfigParser()._float(self.section(name), key, default, positive=positive,
                                               minimum=minimum, prefix=name)

    def section_floats(self, name: str, key: str, default: List[float], minimum: Optional[float] = 0.0) -> List[float]:
        value = self.section(name).get(key, default)
        field_name = f'{name}.{key}'
        if not isinstance(value, list) or not value \
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError("must be a nonempty list of numbers", field=field_name)
        if minimum is not None and any(v < minimum for v in value):
            raise ConfigError(f"entries must be at least {minimum:g}", field=field_name)
        return [float(v) for v in value]

    def build_model(self) -> SystemModel:
        try:
            return build_model(self.model.field_id, self.model.params, radius=self.family.R,
                               lip_bound=self.model.lip_bound)
        except (ContractError, KeyError, ValueError) as e:
            raise ConfigError(str(e), field='model') from e

    def build_family(self, input_dim: int = 1, n_random: Optional[int] = None) -> DisturbanceFamily:
        spec = self.family
        try:
            if spec.members:
                return DisturbanceFamily.from_members(spec.members, spec.R, spec.delta, spec.norm_kind, spec.p)
            return sample_family(spec.R, spec.delta, spec.lattice, n_random or spec.N, spec.horizon, self.seed,
                                 input_dim)
        except RfcCertError as e:
            raise ConfigError(str(e), field='family') from e


class ExperimentConfigParser:
    """Parser for experiment JSON documents"""

    def __init__(self):
        self.sections = [
            'axioms', 'simulate', 'envelope', 'xi', 'construct-lyap', 'check-lyap',
            'rfc-bound', 'brs', 'closure', 'diverge', 'brs-reach'
        ]

    def load(self, path: str, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
        try:
            with open(path, encoding='utf-8') as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read configuration: {e.strerror}", field=str(path)) from e
        return self.parse_text(text, path, seed, output_dir)

    def parse_text(self, text: str, path: str = 'config.json', seed: Optional[int] = None,
                   output_dir: Optional[str] = None) -> ExperimentConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, line=e.lineno, column=e.colno) from e
        if not isinstance(data, dict):
            raise ConfigError("top level must be a JSON object")
        return self.parse_dict(data, path, seed, output_dir)

    def parse_dict(self, data: Dict[str, Any], path: str = 'config.json', seed: Optional[int] = None,
                   output_dir: Optional[str] = None) -> ExperimentConfig:
        if seed is None:
            seed = self._int(data, 'seed', required=True, minimum=0)
        base_dir = os.path.dirname(os.path.abspath(path))

        model = self._parse_model(self._object(data, 'model', required=True))
        family = self._parse_family(self._object(data, 'family', required=True))
        grids = self._parse_grids(self._object(data, 'grids'))
        construction = self._parse_construction(self._object(data, 'construction'))
        tolerances = self._parse_tolerances(self._object(data, 'tolerances'))

        sections = {}
        for name in self.sections:
            if name in data:
                sections[name] = self._object(data, name)
        unknown = set(data) - set(self.sections) - {'seed', 'model', 'family', 'grids', 'construction',
                                                     'tolerances', 'output', 'description'}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")

        out = output_dir or data.get('output') or 'out'
        if not os.path.isabs(out):
            out = os.path.join(base_dir, out)
        return ExperimentConfig(path, int(seed), model, family, grids, construction, tolerances, out, sections)

    # ------------------------------------------------------------------
    # Sections

    def _parse_model(self, data: Dict[str, Any]) -> ModelSpec:
        field_id = data.get('field_id')
        if field_id not in CATALOG:
            raise ConfigError(f"must be one of {sorted(CATALOG)}, got {field_id!r}", field='model.field_id')
        params = self._object(data, 'params', prefix='model')
        lip = data.get('lip_bound')
        return ModelSpec(field_id, params, parse_function(lip, 'model.lip_bound', allow_negative=True)
                         if lip is not None else None)

    def _parse_family(self, data: Dict[str, Any]) -> FamilySpec:
        norm = str(data.get('norm', 'sup'))
        if norm == 'sup':
            norm_kind, p = 'sup', math.inf
        elif norm.startswith('lp'):
            try:
                norm_kind, p = 'lp', float(norm[2:])
            except ValueError:
                raise ConfigError(f"expected 'sup' or 'lp<p>', got {norm!r}", field='family.norm')
            if p < 1:
                raise ConfigError("p must be at least 1", field='family.norm')
        else:
            raise ConfigError(f"expected 'sup' or 'lp<p>', got {norm!r}", field='family.norm')

        members = None
        if 'members' in data:
            raw = data['members']
            if not isinstance(raw, list) or not raw:
                raise ConfigError("must be a nonempty list of signals", field='family.members')
            members = []
            for i, item in enumerate(raw):
                try:
                    members.append(parse_signal(item))
                except (RfcCertError, KeyError, TypeError, ValueError) as e:
                    raise ConfigError(str(e), field=f'family.members[{i}]') from e

        return FamilySpec(
            R=self._float(data, 'R', required=True, minimum=0.0, prefix='family'),
            delta=self._float(data, 'delta', required=True, positive=True, prefix='family'),
            lattice=self._int(data, 'lattice', default=3, minimum=1, prefix='family'),
            N=self._int(data, 'N', default=10, minimum=1, prefix='family'),
            horizon=self._float(data, 'horizon', default=2.0, positive=True, prefix='family'),
            norm_kind=norm_kind, p=p, members=members)

    def _parse_grids(self, data: Dict[str, Any]) -> GridSpec:
        return GridSpec(r=self._grid(data, 'r', [0.0, 0.25, 0.5, 1.0]), t=self._grid(data, 't', [0.0, 0.5, 1.0]))

    def _parse_construction(self, data: Dict[str, Any]) -> ConstructionSpec:
        K = data.get('K')
        if K is not None:
            K = self._int(data, 'K', minimum=1, prefix='construction')
        return ConstructionSpec(
            K=K,
            R_work=self._float(data, 'R_work', default=5.0, minimum=0.0, prefix='construction'),
            t_divisions=self._int(data, 't_divisions', default=Config.T_DIVISIONS, minimum=1, prefix='construction'),
            n_pairs=self._int(data, 'n_pairs', default=20, minimum=1, prefix='construction'),
            tail_tol=self._float(data, 'tail_tol', default=Config.TAIL_TOL, positive=True, prefix='construction'))

    def _parse_tolerances(self, data: Dict[str, Any]) -> ToleranceSpec:
        h = data.get('dini_h', list(Config.DINI_H_SEQ))
        if not isinstance(h, list) or not h or any(not isinstance(v, (int, float)) or v <= 0 for v in h):
            raise ConfigError("must be a nonempty list of positive step sizes", field='tolerances.dini_h')
        return ToleranceSpec(
            integrator=self._float(data, 'integrator', default=Config.INTEGRATOR_TOL, positive=True,
                                   prefix='tolerances'),
            tol_pad=self._float(data, 'tol_pad', default=Config.TOL_PAD, positive=True, prefix='tolerances'),
            dini_h=[float(v) for v in h])

    # ------------------------------------------------------------------
    # Field helpers

    def _object(self, data, key, required=False, prefix=None) -> Dict[str, Any]:
        name = f'{prefix}.{key}' if prefix else key
        if key not in data:
            if required:
                raise ConfigError("is required", field=name)
            return {}
        value = data[key]
        if not isinstance(value, dict):
            raise ConfigError("must be a JSON object", field=name)
        return value

    def _float(self, data, key, default=None, required=False, positive=False, minimum=None, prefix=None) -> float:
        name = f'{prefix}.{key}' if prefix else key
        if key not in data:
            if required:
                raise ConfigError("is required", field=name)
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"must be a number, got {value!r}", field=name)
        value = float(value)
        if positive and not value > 0:
            raise ConfigError("must be positive", field=name)
        if minimum is not None and value < minimum:
            raise ConfigError(f"must be at least {minimum:g}", field=name)
        return value

    def _int(self, data, key, default=None, required=False, minimum=None, prefix=None) -> int:
        name = f'{prefix}.{key}' if prefix else key
        if key not in data:
            if required:
                raise ConfigError("is required", field=name)
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"must be an integer, got {value!r}", field=name)
        if minimum is not None and value < minimum:
            raise ConfigError(f"must be at least {minimum}", field=name)
        return value

    def _grid(self, data, key, default) -> List[float]:
        name = f'grids.{key}'
        value = data.get(key, default)
        if isinstance(value, dict):
            try:
                value = np.linspace(float(value['start']), float(value['stop']), int(value['num'])).tolist()
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError("range form needs numeric start, stop and num", field=name) from e
        if not isinstance(value, list) or not value:
            raise ConfigError("must be a nonempty list or a {start, stop, num} object", field=name)
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError("entries must be numbers", field=name)
        grid = [float(v) for v in value]
        if any(v < 0 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("must be nonnegative and strictly ascending", field=name)
        return grid


def parse_function(value: Any, name: str, allow_negative: bool = False) -> MonotoneFn:
    """
    Comparison function from "identity", {"linear": c}, {"constant": c},
    {"power": p, "scale": c} or a full {knots, values, tail_slope} object.
    """
    try:
        if value == 'identity':
            return MonotoneFn.identity()
        if isinstance(value, dict):
            if 'knots' in value:
                return MonotoneFn.from_dict(value)
            if 'linear' in value:
                return MonotoneFn.linear(float(value['linear']))
            if 'constant' in value and allow_negative:
                return MonotoneFn.constant(float(value['constant']))
            if 'power' in value:
                return MonotoneFn.power(float(value['power']), float(value.get('scale', 1.0)))
    except (RfcCertError, TypeError, ValueError) as e:
        raise ConfigError(str(e), field=name) from e
    raise ConfigError(f"unrecognised function {value!r}", field=name)


def parse_signal(data: Dict[str, Any]) -> Signal:
    """Signal from {switch_times, values, tail} or {"constant": v}"""
    if 'constant' in data:
        return Signal.constant(data['constant'])
    return Signal.from_dict(data)


def parse_state(value: Any, n: int, name: str) -> np.ndarray:
    try:
        x = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"must be a numeric state, got {value!r}", field=name) from e
    if x.shape != (n,) or not np.all(np.isfinite(x)):
        raise ConfigError(f"must be a finite state of dimension {n}", field=name)
    return x


def load_config(path: str, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    return ExperimentConfigParser().load(path, seed, output_dir)


def require_positive(value: Any, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"must be a number, got {value!r}", field=name)
    if not value > 0:
        raise ConfigError("must be positive", field=name)
    return value

#!/usr/bin/env python3
"""
Run Settings - Core Business Logic
Validated parameter objects for the optimizers, the diagnostics battery and CLI runs
"""
import logging
from typing import Any, Dict, Optional

import param

from core.errors import ConfigError


class SettingsBase(param.Parameterized):
    """Parameterized settings with dict round-trips and ConfigError on bad values"""

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]] = None):
        """Build settings from a plain dict, ignoring unknown keys"""
        values = dict(values or {})
        known = {k: v for k, v in values.items() if k in cls.param and k != 'name'}
        unknown = sorted(set(values) - set(known) - {'name'})
        if unknown:
            logging.warning(f"Ignoring unknown {cls.__name__} settings: {', '.join(unknown)}")
        try:
            return cls(**known)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"Invalid {cls.__name__} setting: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        """Plain dict of every setting except the auto-generated name"""
        out = {}
        for key, value in self.param.values().items():
            if key == 'name':
                continue
            if isinstance(value, SettingsBase):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out

    def updated(self, **overrides):
        """Copy with overrides applied (None values are skipped)"""
        values = self.to_dict()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_dict(values)


class GsaConfig(SettingsBase):
    """Generalized Simulated Annealing settings"""

    qv = param.Number(default=2.62, bounds=(1.0, 3.0), inclusive_bounds=(False, False),
                      doc="Visiting distribution shape")
    qa = param.Number(default=-5.0, doc="Acceptance distribution shape")
    t0 = param.Number(default=None, allow_None=True, bounds=(0.0, None),
                      inclusive_bounds=(False, True),
                      doc="Initial temperature; None uses the cost spread over random points")
    t0_samples = param.Integer(default=50, bounds=(2, None),
                               doc="Random points used to pick t0")
    max_iterations = param.Integer(default=20000, bounds=(1, None))
    restarts = param.Integer(default=5, bounds=(1, None))
    seed = param.Integer(default=7)
    start_span = param.Number(default=2.0, bounds=(0.0, None), inclusive_bounds=(False, True),
                              doc="Initial points are uniform on [-span, span] per coordinate")
    x_limit = param.Number(default=8.0, bounds=(1.0, None),
                           doc="Walls of the annealing box on the unconstrained coordinates; steps reflect off them")


class BfgsConfig(SettingsBase):
    """Quasi-Newton refinement settings"""

    gradient_tolerance = param.Number(default=1e-6, bounds=(0.0, None), inclusive_bounds=(False, True))
    step_tolerance = param.Number(default=1e-12, bounds=(0.0, None), inclusive_bounds=(False, True))
    max_iterations = param.Integer(default=2000, bounds=(1, None))
    relative_step = param.Number(default=1e-6, bounds=(0.0, None), inclusive_bounds=(False, True),
                                 doc="Central-difference step is relative_step * (1 + |x|)")


class DiagnosticsConfig(SettingsBase):
    """Residual diagnostics battery settings"""

    lags = param.Integer(default=20, bounds=(1, None), doc="Ljung-Box lag L")
    adf_lags = param.Integer(default=None, allow_None=True, bounds=(0, None),
                             doc="ADF lag order; None selects by AIC")
    bds_dims = param.List(default=[2, 3, 4, 5, 6])
    bds_eps_multipliers = param.List(default=[0.5, 1.0, 1.5, 2.0])
    bds_replications = param.Integer(default=5000, bounds=(1, None))
    seed = param.Integer(default=7)


class RunConfig(SettingsBase):
    """Everything needed to reproduce one CLI run"""

    input_path = param.String(default=None, allow_None=True)
    date_column = param.String(default='date')
    price_column = param.String(default='close')
    window_start = param.String(default=None, allow_None=True, doc="ISO date")
    window_end = param.String(default=None, allow_None=True, doc="ISO date")
    model = param.Selector(default='extended', objects=['basic', 'extended'])
    seed = param.Integer(default=7)
    threads = param.Integer(default=None, allow_None=True, bounds=(1, None))
    output_dir = param.String(default='output')
    output_format = param.Selector(default='json', objects=['json', 'csv', 'xlsx'])
    confidence_level = param.Number(default=0.95, bounds=(0.0, 1.0), inclusive_bounds=(False, False))
    dump_series = param.Boolean(default=False)
    timing = param.Boolean(default=False)
    origin = param.String(default='2000-01-03', doc="First date of simulated series")
    gsa = param.ClassSelector(class_=GsaConfig, default=None, allow_None=True)
    bfgs = param.ClassSelector(class_=BfgsConfig, default=None, allow_None=True)
    diagnostics = param.ClassSelector(class_=DiagnosticsConfig, default=None, allow_None=True)

    def __init__(self, **params):
        super().__init__(**params)
        if self.gsa is None:
            self.gsa = GsaConfig(seed=self.seed)
        if self.bfgs is None:
            self.bfgs = BfgsConfig()
        if self.diagnostics is None:
            self.diagnostics = DiagnosticsConfig(seed=self.seed)

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]] = None):
        """Nested sections arrive as dicts; the run seed propagates to sections without one"""
        values = dict(values or {})
        seed = values.get('seed', cls.param['seed'].default)
        gsa = dict(values.pop('gsa', None) or {})
        gsa.setdefault('seed', seed)
        diag = dict(values.pop('diagnostics', None) or {})
        diag.setdefault('seed', seed)
        values['gsa'] = GsaConfig.from_dict(gsa)
        values['bfgs'] = BfgsConfig.from_dict(values.pop('bfgs', None) or {})
        values['diagnostics'] = DiagnosticsConfig.from_dict(diag)
        return super().from_dict(values)

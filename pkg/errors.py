"""
Exception hierarchy for rfc-cert
Failed checks are report entries; these are raised for broken contracts only.
"""


class RfcCertError(Exception):
    """Base class for all toolkit errors"""


class DomainError(RfcCertError, ValueError):
    """Argument outside the domain of an operation"""


class BelowRangeError(DomainError):
    """Inversion requested below the value of the function at zero"""

    def __init__(self, y, floor):
        super().__init__(f"value {y!r} is below the range floor f(0)={floor!r}")
        self.y = y
        self.floor = floor


class ContractError(RfcCertError):
    """An input or output contract does not hold"""


class UnsupportedSignalError(RfcCertError):
    """Operation not defined for this signal (e.g. Lp norm without compact support)"""


class ModelError(RfcCertError):
    """The vector field produced a non-finite value"""

    def __init__(self, message, t):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class MaximalIntervalError(RfcCertError):
    """State requested beyond the maximal interval of existence"""

    def __init__(self, t, t_esc):
        super().__init__(f"requested t={t:.6g} lies beyond the escape time t_esc={t_esc:.6g}")
        self.t = t
        self.t_esc = t_esc


class NonRfcWitness(RfcCertError):
    """A trajectory escaped while a supremum over the disturbance family was computed"""

    def __init__(self, x, u, t_esc, message=None):
        super().__init__(message or f"trajectory from x={list(x)} escapes at t_esc={t_esc:.6g}")
        self.x = x
        self.u = u
        self.t_esc = t_esc


class ConfigError(RfcCertError):
    """Experiment configuration could not be parsed or validated"""

    def __init__(self, message, field=None, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        if field:
            where.append(f"field '{field}'")
        prefix = f"{'; '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line
        self.column = column

#!/usr/bin/env python3
"""
Errors - Core Business Logic
Exception hierarchy shared by the estimation pipeline and the command line
"""


class CrashModelError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 4


class InputDataError(CrashModelError):
    """Unreadable, malformed or empty input data"""

    exit_code = 2


class ConfigError(CrashModelError):
    """Invalid run or optimizer settings"""

    exit_code = 2


class FitMismatchError(CrashModelError):
    """A fit file does not belong to the series it is applied to"""

    exit_code = 2


class DomainError(CrashModelError, ValueError):
    """Argument outside the mathematical domain of an operation"""

    exit_code = 4


class DegenerateInputError(CrashModelError):
    """Zero-variance or otherwise singular input"""

    exit_code = 4


class OptimizationError(CrashModelError):
    """The optimizer could not find a single finite cost value"""

    exit_code = 4


class InferenceError(CrashModelError):
    """Standard errors or confidence intervals cannot be formed"""

    exit_code = 4

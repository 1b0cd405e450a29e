"""
.. module:: errors
   :platform: Unix, Windows
   :synopsis: Exception hierarchy shared by every pyrevinr module, with CLI exit codes

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

from typing import Any, Dict, Optional

__author__ = 'Will McGinnis'

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CONTRACT = 5


class PyrevinrError(Exception):
    exit_code = EXIT_CONTRACT


class ConfigError(PyrevinrError, ValueError):
    """
    A configuration value violates its documented invariants.
    """
    exit_code = EXIT_CONFIG


class UsageError(PyrevinrError, ValueError):
    """
    An API or CLI call was made with mismatched or missing inputs.
    """
    exit_code = EXIT_CONFIG


class ResourceError(PyrevinrError):
    """
    A request would exceed the configured memory budget.
    """
    exit_code = EXIT_CONFIG

    def __init__(self, message: str, required_bytes: int, budget_bytes: int):
        super().__init__(f'{message}: requires {required_bytes} bytes, budget is {budget_bytes} bytes')
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes


class NumericError(PyrevinrError, ArithmeticError):
    """
    A non-finite value appeared in an activation or a loss.
    """
    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, layer: Optional[int] = None, epoch: Optional[int] = None,
                 batch: Optional[int] = None, component: Optional[str] = None):
        details = [f'{name}={value}' for name, value in
                   (('layer', layer), ('epoch', epoch), ('batch', batch), ('component', component))
                   if value is not None]
        super().__init__(message + (f' ({", ".join(details)})' if details else ''))
        self.layer = layer
        self.epoch = epoch
        self.batch = batch
        self.component = component


class ContractError(PyrevinrError, ValueError):
    exit_code = EXIT_CONTRACT


class DomainError(ContractError):
    """
    An argument lies outside the domain of the operation (no extrapolation, degenerate axes, ...).
    """


class InvariantError(ContractError):
    """
    A value object violates its invariants (NIG constraints, negative variances, ...).
    """


class DegenerateInputError(ContractError):
    """
    Evaluation received a constant field where a correlation needs variation.
    """


class SizeMismatchError(ContractError):
    """
    A raw file does not hold the number of bytes its dims and dtype require.
    """

    def __init__(self, path: str, expected_bytes: int, actual_bytes: int):
        super().__init__(f'{path}: expected {expected_bytes} bytes, found {actual_bytes} bytes')
        self.path = path
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes


class ArchitectureMismatchError(ContractError):
    """
    A checkpoint was produced by a network whose architecture differs from the requested one.
    """

    def __init__(self, expected: Dict[str, Any], actual: Dict[str, Any]):
        diff = sorted(k for k in set(expected) | set(actual) if expected.get(k) != actual.get(k))
        detail = ', '.join(f'{k}: expected {expected.get(k)!r}, actual {actual.get(k)!r}' for k in diff)
        super().__init__(f'architecture mismatch ({detail})')
        self.expected = expected
        self.actual = actual


def exit_code_for(error: BaseException) -> int:
    """
    Maps an exception to the documented CLI exit code table.
    """
    if isinstance(error, PyrevinrError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_CONTRACT

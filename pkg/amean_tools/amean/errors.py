#!/usr/bin/env python3

"""
Module: errors.py

  Exception kinds raised by the amean library.
  Only the command line layer (cli.py) converts them into exit codes:
    * numeric failures (NUMERIC_ERRORS) -> exit 2
    * everything else -> exit 1
  Kinds with extra fields define __reduce__ so they pickle across worker processes.
"""


class AmeanError(Exception):
    """Base class of all amean errors."""


class DimensionError(AmeanError, ValueError):
    """Operand shapes do not conform."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shp = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {shp}")

    def __reduce__(self):
        return self.__class__, (self.op, *self.shapes)


class DomainError(AmeanError, ValueError):
    """Value outside the mathematical domain of an operation, e.g. log(x<=0)."""


class ContractError(AmeanError, ValueError):
    """A caller broke an operation precondition."""


class ConfigurationError(AmeanError, ValueError):
    """Invalid or inconsistent configuration value."""


class SchemaError(AmeanError, ValueError):
    """Missing or unexpected column / key."""

    def __init__(self, msg: str, name: str = None):
        self.name = name
        super().__init__(msg)

    def __reduce__(self):
        return self.__class__, (self.args[0], self.name)


class ParseError(AmeanError, ValueError):
    """Malformed input record; `line` is 1-based and counts the header."""

    def __init__(self, msg: str, line: int = None):
        self.line = line
        self.detail = msg
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)

    def __reduce__(self):
        return self.__class__, (self.detail, self.line)


class CheckpointError(AmeanError, ValueError):
    """Checkpoint manifest does not match the bundle; `layer` names the culprit."""

    def __init__(self, msg: str, layer: str = None):
        self.layer = layer
        super().__init__(msg)

    def __reduce__(self):
        return self.__class__, (self.args[0], self.layer)


class GenerationError(AmeanError, RuntimeError):
    """Synthetic data could not be generated with the requested constraints."""


class DegenerateClusterError(AmeanError, ArithmeticError):
    """A cluster lost all of its soft-assignment mass."""


class NonFiniteLossError(AmeanError, ArithmeticError):
    """A loss term became nan or inf during training."""

    def __init__(self, term: str, iteration: int, value: float = float("nan")):
        self.term = term
        self.iteration = iteration
        self.value = value
        super().__init__(f"Non-finite loss term {term!r} = {value} at iteration {iteration}")

    def __reduce__(self):
        return self.__class__, (self.term, self.iteration, self.value)


NUMERIC_ERRORS = (NonFiniteLossError, DegenerateClusterError)

"""Exception hierarchy shared by every pryvect module."""

from __future__ import annotations


class PryvectError(Exception):
    """Base class for all domain errors."""


# --- policy language -------------------------------------------------------

class CpslSyntaxError(PryvectError):
    def __init__(self, message: str, line: int, column: int, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at line {line}, column {column}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class TypeCheckError(PryvectError):
    pass


class UndeclaredVariable(TypeCheckError):
    pass


class TypeMismatch(TypeCheckError):
    pass


class UnknownEvent(TypeCheckError):
    pass


class UnboundedInt(TypeCheckError):
    pass


class DuplicateVariable(TypeCheckError):
    pass


class AlphabetMismatch(PryvectError):
    pass


class MalformedEncoding(PryvectError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


# --- automata --------------------------------------------------------------

class StateSpaceExceeded(PryvectError):
    def __init__(self, bound: int, size: int, variable: str | None):
        self.bound = bound
        self.size = size
        self.variable = variable
        where = f"; dominated by variable {variable!r}" if variable else ""
        super().__init__(f"state space of {size} assignments exceeds bound {bound}{where}")


class DanglingDangerousEvent(PryvectError):
    pass


# --- crypto & protocol -----------------------------------------------------

class KeyMismatch(PryvectError):
    pass


class LengthMismatch(PryvectError):
    pass


class PhaseViolation(PryvectError):
    pass


class TraceTooLong(PryvectError):
    pass


class PlaintextSpaceTooSmall(PryvectError):
    pass


class MalformedOpening(PryvectError):
    pass


class ProtocolViolation(PryvectError):
    pass


# --- services --------------------------------------------------------------

class Unauthorized(PryvectError):
    pass


class StoreFailure(PryvectError):
    pass


class MalformedFrame(PryvectError):
    pass


class TransportError(PryvectError):
    pass


class ConfigError(PryvectError):
    pass


class ScenarioError(PryvectError):
    pass

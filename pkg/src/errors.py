"""
Exception hierarchy for channel-forge.
Every package raises one of these so callers can catch ChannelForgeError at the edge.
"""

from typing import Optional, Sequence, Tuple


class ChannelForgeError(Exception):
    """Base class for all channel-forge failures"""


# ---------------------------------------------------------------- IR / DSL

class InvalidIRError(ChannelForgeError):
    """Raised when an operation needs a valid NetworkDef and gets an invalid one"""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid network: " + "; ".join(self.violations))


class NetSyntaxError(ChannelForgeError):
    """Lexing/parsing failure in a .netdsl text"""

    def __init__(self, offset: int, expected: Sequence[str], got: str):
        self.offset = offset
        self.expected = tuple(expected)
        self.got = got
        super().__init__(
            f"syntax error at offset {offset}: expected {' or '.join(self.expected)}, got {got}"
        )


class SemanticError(ChannelForgeError):
    """Well-formed text describing an impossible network"""

    def __init__(self, offset: int, code: str, message: str):
        self.offset = offset
        self.code = code
        self.message = message
        super().__init__(f"{code} at offset {offset}: {message}")


class EditError(ChannelForgeError):
    """Base for source-edit failures"""


class OverlapError(EditError):
    pass


class SpanOutOfRange(EditError):
    pass


# ---------------------------------------------------------------- analysis

class ShapeMismatch(ChannelForgeError):
    """Symbolic (or runtime) tensor shape disagreement at one layer"""

    def __init__(self, layer_id: str, expected: object, got: object):
        self.layer_id = layer_id
        self.expected = expected
        self.got = got
        super().__init__(f"shape mismatch at {layer_id}: expected {expected}, got {got}")


# ---------------------------------------------------------------- mutation

class NoMutableGroup(ChannelForgeError):
    pass


class ConstraintUnsatisfiable(ChannelForgeError):
    pass


class InternalInconsistency(ChannelForgeError):
    """A mutation produced a net that fails shape inference: always a bug"""


# ---------------------------------------------------------------- evaluation

class VerificationRequired(ChannelForgeError):
    pass


class DataMismatch(ChannelForgeError):
    pass


class FormatError(ChannelForgeError):
    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"dataset format error at byte {offset}: {message}")


class TopologyUnsupported(ChannelForgeError):
    pass


# ---------------------------------------------------------------- repository

class RepositoryError(ChannelForgeError):
    pass


class RepositoryLocked(RepositoryError):
    pass


class NoPairs(RepositoryError):
    pass


# ---------------------------------------------------------------- proposer

class TargetNotHigher(ChannelForgeError):
    pass


class ExternalUnreachable(ChannelForgeError):
    def __init__(self, endpoint: str, attempts: int, last_error: Optional[BaseException] = None):
        self.endpoint = endpoint
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"generator at {endpoint} unreachable after {attempts} attempts: {last_error}")


class ReplayExhausted(ChannelForgeError):
    pass


# ---------------------------------------------------------------- orchestrator

class EmptyPopulation(ChannelForgeError):
    pass


# ---------------------------------------------------------------- stats

class StatsError(ChannelForgeError):
    pass


class DegenerateInput(StatsError):
    pass


class GroupTooSmall(StatsError):
    pass


class SchemaMismatch(StatsError):
    def __init__(self, message: str, schemas: Tuple = ()):
        self.schemas = schemas
        super().__init__(message)


class EmptyRepository(StatsError):
    pass

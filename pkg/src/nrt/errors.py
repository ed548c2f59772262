"""Exception hierarchy shared by every nrt module."""


class NrtError(Exception):
    pass


# schema
class SchemaError(NrtError):
    pass


class DuplicateConflictError(SchemaError):
    pass


class UnknownBaseError(SchemaError):
    pass


class CyclicBaseError(SchemaError):
    pass


class MalformedError(NrtError):
    pass


class ChecksumMismatchError(MalformedError):
    pass


class UnknownElementTypeError(SchemaError):
    pass


class IncompatibleKindError(SchemaError):
    pass


class UnknownTypeError(SchemaError, LookupError):
    pass


class TypeMismatchError(SchemaError, TypeError):
    pass


# container
class IoFailureError(NrtError, OSError):
    pass


class BadMaxSizeError(NrtError, ValueError):
    pass


class NotFoundError(NrtError, LookupError):
    pass


class XmlMalformedError(MalformedError):
    pass


# tree
class EmptyCollectionError(NrtError, ValueError):
    pass


class HeterogeneousError(NrtError, TypeError):
    pass


class OutOfRangeError(NrtError, IndexError):
    pass


class NoSuchBranchError(NrtError, LookupError):
    pass


# refs
class UntaggedError(NrtError):
    pass


class ConflictingRegistrationError(NrtError):
    pass


class MixedProcessTagsError(NrtError, ValueError):
    pass


# hist
class LabelModeMismatchError(NrtError):
    pass


class NumericModeMismatchError(NrtError):
    pass


class IncompatibleBinningError(NrtError, ValueError):
    pass


# query
class ParseError(NrtError):
    def __init__(self, message, position):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class NoSuchFunctionError(NrtError, LookupError):
    pass


class DuplicateNameError(NrtError, ValueError):
    pass


class ArityError(NrtError, TypeError):
    pass


class ExpressionError(NrtError):
    """An expression is syntactically valid but cannot be evaluated on this tree."""


# plugin
class ConfigSyntaxError(NrtError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NoMatchError(NrtError, LookupError):
    pass


class UnsupportedHandlerError(NrtError):
    def __init__(self, handler):
        super().__init__(f"no local factory for plugin handler {handler!r}")
        self.handler = handler


# sched
class NotInFlightError(NrtError):
    pass


class DuplicatePacketIdsError(NrtError, ValueError):
    pass

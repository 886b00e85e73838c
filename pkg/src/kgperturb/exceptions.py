"""Exception hierarchy shared across the package."""


class KGPerturbError(Exception):
    """Base class for all package errors."""


# graph store
class GraphError(KGPerturbError):
    pass


class UnknownNodeType(GraphError):
    pass


class UnknownEdgeType(GraphError):
    pass


class DanglingEdgeEndpoint(GraphError):
    pass


class FeatureShapeMismatch(GraphError):
    pass


class NonFiniteFeature(GraphError):
    pass


class FormatError(KGPerturbError):
    """Malformed binary or tabular input file."""


# chemistry
class SmilesError(KGPerturbError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownAtomSymbol(SmilesError):
    pass


class SplitError(KGPerturbError):
    pass


class AllOneScaffold(SplitError):
    pass


# numerics
class ShapeMismatch(KGPerturbError, ValueError):
    pass


class WidthMismatch(ShapeMismatch):
    pass


class LengthMismatch(KGPerturbError, ValueError):
    pass


class EmptySegment(KGPerturbError, ValueError):
    pass


class NonFiniteGradient(KGPerturbError, FloatingPointError):
    pass


class NonFiniteLoss(KGPerturbError, FloatingPointError):
    pass


class KTooLarge(KGPerturbError, ValueError):
    pass


class MissingSeedNode(KGPerturbError, KeyError):
    pass


class EmptyRecords(KGPerturbError, ValueError):
    pass


class UnknownDrug(KGPerturbError, KeyError):
    pass


class UnknownId(KGPerturbError, KeyError):
    pass


class ParamDomain(KGPerturbError, ValueError):
    pass

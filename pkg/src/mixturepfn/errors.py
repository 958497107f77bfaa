"""Exception types shared across the package."""

from __future__ import annotations


class MpfnError(Exception):
    """Base class for all library errors."""


# -- dataset loading / preprocessing --------------------------------------

class MissingLabelColumn(MpfnError):
    def __init__(self, name: str):
        super().__init__(f"label column {name!r} not found in header")
        self.name = name


class RaggedRow(MpfnError):
    def __init__(self, line_no: int, got: int, expected: int):
        super().__init__(
            f"line {line_no}: row has {got} fields, header has {expected}"
        )
        self.line_no = line_no
        self.got = got
        self.expected = expected


class TooManyClasses(MpfnError):
    def __init__(self, n_classes: int, ceiling: int):
        super().__init__(
            f"label column has {n_classes} distinct values, ceiling is {ceiling}"
        )
        self.n_classes = n_classes
        self.ceiling = ceiling


class EmptyDataset(MpfnError):
    pass


class AllMissingColumn(MpfnError):
    def __init__(self, name: str):
        super().__init__(f"column {name!r} has no observed value")
        self.name = name


class TooFewRows(MpfnError):
    pass


class UnknownLabel(MpfnError):
    def __init__(self, path: str, token: str):
        super().__init__(
            f"{path}: label {token!r} not in the training vocabulary")
        self.token = token


# -- neighbor search -------------------------------------------------------

class NonFiniteInput(MpfnError):
    def __init__(self, row: int, col: int):
        super().__init__(f"non-finite value at ({row}, {col})")
        self.row = row
        self.col = col


class KTooLarge(MpfnError):
    def __init__(self, k: int, n: int):
        super().__init__(f"k={k} exceeds number of stored points {n}")
        self.k = k
        self.n = n


# -- clustering ------------------------------------------------------------

class Infeasible(MpfnError):
    pass


# -- prediction ------------------------------------------------------------

class DimensionMismatch(MpfnError):
    pass


class EmptyContext(MpfnError):
    pass


class ShapeMismatch(MpfnError):
    pass


# -- external predictor bridge ---------------------------------------------

class BridgeUnavailable(MpfnError):
    pass


class ProtocolViolation(MpfnError):
    pass


class CapabilityExceeded(MpfnError):
    pass


# -- evaluation ------------------------------------------------------------

class NoResults(MpfnError):
    def __init__(self, dataset: str):
        super().__init__(f"no successful records for dataset {dataset!r}")
        self.dataset = dataset


class NoSharedDatasets(MpfnError):
    pass


class TooFewPairs(MpfnError):
    pass

"""Exception hierarchy.

Every error raised by the package derives from :class:`MissregError`; the CLI
prints the class name and exits with status 1.
"""


class MissregError(Exception):
    """Base class for data and solver errors."""


class EmptyDataset(MissregError):
    pass


class VariableNeverObserved(MissregError):
    def __init__(self, j, name=None):
        self.j = j
        label = name if name is not None else j
        super().__init__(f"variable {label} is never observed in the labelled data")


class NonFiniteValue(MissregError):
    pass


class PartiallyObservedUnlabelled(MissregError):
    pass


class ModalityNeverLabelled(MissregError):
    def __init__(self, modality):
        self.modality = modality
        super().__init__(f"modality {modality} has no labelled observations (h = 0)")


class PairNeverObserved(MissregError):
    def __init__(self, g, h):
        self.pair = (g, h)
        super().__init__(f"modalities ({g}, {h}) are never observed together and N = 0")


class ScaleExceeded(MissregError):
    pass


class CovarianceNotPD(MissregError):
    pass


class SingularBlock(MissregError):
    pass


class PatternTooSmall(MissregError):
    def __init__(self, k, n, need):
        self.k = k
        super().__init__(f"pattern {k} has {n} rows, needs at least {need}")


class SingularDesign(MissregError):
    pass


class SingularGram(MissregError):
    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"weighted Gram matrix is singular (condition number {cond:.3g})")


class Infeasible(MissregError):
    pass


class IterationCap(MissregError):
    pass


class FoldTooSmall(MissregError):
    pass


class NoCompleteCases(MissregError):
    pass


class PDFailure(MissregError):
    pass


class UnknownExperiment(MissregError):
    pass

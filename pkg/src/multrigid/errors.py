"""Exception hierarchy shared by all modules."""


class MultRigidError(Exception):
    """Base class for every error raised by the package."""


class SingularBranchError(MultRigidError):
    """A map that must be a diffeomorphism has a vanishing derivative."""


class NotADiffeoError(MultRigidError):
    """A derivative that must be positive is not."""


class CriticalPointError(MultRigidError):
    """A derivative was requested where it does not exist or vanishes."""


class DegenerateAttractorError(MultRigidError):
    pass


class ConvergenceError(MultRigidError):
    pass


class NotEquivalentError(MultRigidError):
    """Two maps realize different symbolic words, so they cannot be conjugate."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnrealizedWordError(MultRigidError):
    pass


class WindowNotFoundError(MultRigidError):
    pass


class SearchExhaustedError(MultRigidError):
    pass


class ConstructionError(MultRigidError):
    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch


class StructuralMismatchError(MultRigidError):
    pass


class NotInvariantError(MultRigidError):
    """A density offered for normalization is not a fixed point of the transfer operator."""


class StageError(MultRigidError):
    """Failure inside the rigidity pipeline, labelled with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

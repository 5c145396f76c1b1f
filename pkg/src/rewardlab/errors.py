"""Exception hierarchy shared by the lab modules and mapped to CLI exit codes."""


class LabError(Exception):
    """Base class for every error raised on purpose by rewardlab."""


class DimensionError(LabError, ValueError):
    """Array shapes disagree with the owning MDP."""


class InvariantError(LabError, ValueError):
    """A domain type was built from values that break its invariants."""


class GuardError(LabError):
    """An enumeration or sampling guard would be exceeded."""


class SolverError(LabError, RuntimeError):
    """A linear solve or LP returned something unusable."""


class DomainError(LabError, ValueError):
    """A utility transform was applied outside its domain."""


class ScheduleError(LabError, ValueError):
    """Learning-rate or exploration schedule is misconfigured."""

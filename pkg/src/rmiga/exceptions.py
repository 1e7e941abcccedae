"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid space, formulation, or run configuration."""


class DomainError(ValueError):
    """Evaluation point outside the parametric domain."""


class ContractError(RuntimeError):
    """An operation was called on inputs violating its precondition."""


class SolverError(RuntimeError):
    """A linear solve failed."""


class GrammDefinitenessError(SolverError):
    """The Gramm matrix is not positive definite."""


class RankDeficiencyError(SolverError):
    """The saddle-point system is singular."""

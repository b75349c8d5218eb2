"""Exception taxonomy shared across the package."""


class ConcardError(Exception):
    """Base class for all package errors."""


class SchemaError(ConcardError):
    """Schema definition violates an invariant (bad range, dangling join edge, ...)."""


class QueryError(ConcardError):
    """Query references unknown tables/columns or is structurally invalid."""


class ContainmentDomainError(ConcardError):
    """Pair of queries is outside the containment domain (FROM clauses differ)."""


class FeaturizationError(ConcardError):
    """Query cannot be encoded in the given feature space."""


class ShapeError(ConcardError):
    """Vector/matrix width mismatch in the network."""


class GenerationError(ConcardError):
    """Workload generator cannot satisfy a request (e.g. nothing to perturb)."""


class NumericError(ConcardError):
    """Non-finite loss or diverging training run."""


class DataError(ConcardError):
    """Malformed or inconsistent data file (workload, pool, checkpoint, dump)."""


class ConfigError(ConcardError):
    """Bad CLI/run configuration (missing paths, invalid flag values)."""

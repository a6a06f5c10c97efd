"""Exception types shared across the package.

The split mirrors how callers are expected to react: ArgumentError means the
call itself was malformed (wrong shape, bad k), DomainError means the inputs
were well formed but outside the regime where the quantity is defined, and
the remaining types mark specific geometric or parametric failures that the
CLI maps to its contract-violation exit path.
"""


class HessqError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(HessqError, ValueError):
    """Malformed call: bad shapes, out-of-range orders, unknown modes."""


class DomainError(HessqError, ValueError):
    """Input outside the admissible regime (wrong cone, nonconvex field)."""


class DegeneracyError(DomainError):
    """Quantity undefined at this input (zero eigenvalue, singular pencil)."""


class ContainmentError(HessqError, ValueError):
    """A level set or section escapes the computational domain."""


class RankError(HessqError, ValueError):
    """Point cloud or constraint set is rank deficient."""


class PreconditionError(HessqError, ValueError):
    """A documented parameter condition fails; message lists which one."""

"""Exception types shared across the package."""


class CdreconError(Exception):
    """Base class for all errors raised by this package."""


class GridError(CdreconError, ValueError):
    """Invalid grid parameters (too few nodes per side)."""


class DimensionError(CdreconError, ValueError):
    """Operands live on different grids or have inconsistent shapes."""


class FormatError(CdreconError, ValueError):
    """Malformed field, image, or config file; the message names the offending part."""


class AssemblyError(CdreconError, ValueError):
    """Discrete system cannot be assembled (e.g. nonpositive conductivity)."""


class SolverError(CdreconError, RuntimeError):
    """Linear solve failed."""


class NotSPDError(SolverError):
    """Conjugate gradients detected a direction of nonpositive curvature."""


class DataError(CdreconError, ValueError):
    """Degenerate or inadmissible input data (zero data, bad transform,
    degenerate scaling, unresolvable smoothing width, bad schedule)."""


class UsageError(CdreconError, ValueError):
    """Command line usage or configuration error."""

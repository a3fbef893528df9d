"""Exception types raised by equiflux."""


class MeshError(ValueError):
    """Invalid mesh topology, geometry or boundary markers."""


class IncompatibleDataError(ValueError):
    """Problem data violate a compatibility condition (e.g. pure Neumann)."""


class SolverError(RuntimeError):
    """A linear solve failed or produced an unacceptable residual."""

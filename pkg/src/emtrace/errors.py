"""Exception types shared across the package."""


class EmtraceError(Exception):
    """Base class for all package-specific errors."""


class EmptyScene(EmtraceError):
    """Raised when an acceleration structure is requested for zero triangles."""


class NoWedge(EmtraceError):
    """Raised when an edge projection is requested for a primitive owning no wedge."""


class DegenerateFrame(EmtraceError):
    """Raised when a polarization frame cannot be constructed from parallel vectors."""


class DegenerateGeometry(EmtraceError):
    """Raised when a diffraction configuration is too close to singular to evaluate."""


class AllZero(EmtraceError):
    """Raised when every enabled interaction probability vanishes."""


class Degenerate(EmtraceError):
    """Raised when a diffraction point has no unique solution (ray collinear with edge)."""


class NoIntersection(EmtraceError):
    """Raised when a ray is parallel to the plane it must cross."""


class ParseError(EmtraceError):
    """Scene or mesh text could not be parsed.

    Carries the offending line number and field when known.
    """

    def __init__(self, message, line=None, field=None):
        detail = message
        if line is not None:
            detail = f"line {line}: {detail}"
        if field is not None:
            detail = f"{detail} (field {field!r})"
        super().__init__(detail)
        self.line = line
        self.field = field


class UnresolvedMaterial(EmtraceError):
    """A scene references a material name that was never defined."""

    def __init__(self, name):
        super().__init__(f"material {name!r} is not defined")
        self.name = name


class MissingMesh(EmtraceError):
    """A scene references a mesh file that does not exist."""

    def __init__(self, path):
        super().__init__(f"mesh file not found: {path}")
        self.path = path


class NonManifoldWarning(UserWarning):
    """Mesh edge shared by more than two faces; collected, not fatal."""

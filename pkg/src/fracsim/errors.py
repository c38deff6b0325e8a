"""Exception types raised across the simulator."""


class FracsimError(Exception):
    """Base class for all simulator errors."""


class InvalidInputError(FracsimError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class DegenerateElementError(FracsimError, ValueError):
    """Tetrahedron is flat, inverted or too ill-conditioned to use."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class MaterialError(FracsimError, ValueError):
    pass


class ConfigurationError(FracsimError):
    """Simulation state cannot be integrated (e.g. a zero-mass node)."""


class SimulationDiverged(FracsimError):
    def __init__(self, step, node, magnitude):
        super().__init__(
            f"simulation diverged at step {step}: node {node} has "
            f"non-finite or exploding state (|x| = {magnitude!r})"
        )
        self.step = step
        self.node = node
        self.magnitude = magnitude


class RemeshAbort(FracsimError):
    """A node split was abandoned; the mesh is left untouched.

    ``reason`` is ``"one_side"`` when the plane leaves every incident element
    on one side (nothing to separate), otherwise ``"degenerate"``.
    """

    def __init__(self, message, reason="degenerate"):
        super().__init__(message)
        self.reason = reason


class ParseError(FracsimError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class OrientationError(ParseError):
    pass


class SceneError(FracsimError, ValueError):
    pass

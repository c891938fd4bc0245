"""Exception types shared across the package."""


class MtledError(Exception):
    """Base class for all solver-specific failures."""


class DegenerateCellError(MtledError):
    """A background cell has (near-)zero volume."""

    def __init__(self, cell_index, volume):
        self.cell_index = int(cell_index)
        self.volume = float(volume)
        super().__init__(
            f"background cell {cell_index} is degenerate (volume {volume:.3e})"
        )


class InadmissibleSupportError(MtledError):
    """A support domain has too few / geometrically deficient nodes."""

    def __init__(self, point, count, reason="fewer than 4 support nodes"):
        self.point = tuple(float(v) for v in point)
        self.count = int(count)
        super().__init__(
            f"inadmissible support at {self.point}: {count} nodes ({reason})"
        )


class SingularMomentMatrixError(MtledError):
    """The (penalized) moment matrix is numerically singular."""

    def __init__(self, point, condition):
        self.point = tuple(float(v) for v in point)
        self.condition = float(condition)
        super().__init__(
            f"moment matrix at {self.point} is singular "
            f"(condition estimate {condition:.3e})"
        )


class DiscretizationError(MtledError):
    """The node/integration layout produced unusable discrete operators.

    The classic trigger is a non-positive lumped mass entry: the row-sum of
    shape functions over the integration points went negative somewhere,
    which means the support radius / integration density combination cannot
    represent a positive density field. Fix the discretization, not the run.
    """


class InvertedElementError(MtledError):
    """det F <= 0 at an integration point: the configuration inverted locally."""

    def __init__(self, point_index, det):
        self.point_index = int(point_index)
        self.det = float(det)
        super().__init__(
            f"deformation gradient inverted at integration point "
            f"{point_index} (det F = {det:.3e})"
        )


class EbcConditioningError(MtledError):
    """The condensed boundary matrix could not be inverted reliably."""


class DivergenceError(MtledError):
    """The explicit time stepping produced non-finite displacements."""

    def __init__(self, step, last_state=None):
        self.step = int(step)
        self.last_state = last_state
        super().__init__(f"non-finite displacement at step {step}")


class ConvergenceError(MtledError):
    """Steady-state iteration hit the step cap before converging."""

    def __init__(self, steps, max_increment, result=None):
        self.steps = int(steps)
        self.max_increment = float(max_increment)
        self.result = result
        super().__init__(
            f"no steady state after {steps} steps "
            f"(last max increment {max_increment:.3e} m)"
        )


class ModelFormatError(MtledError):
    """A model file failed to parse or validate."""

    def __init__(self, message, line=None, section=None):
        self.line = line
        self.section = section
        prefix = ""
        if section is not None:
            prefix += f"[{section}] "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)

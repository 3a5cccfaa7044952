"""Exception hierarchy shared by all stages of the pipeline."""


class InsilicoError(Exception):
    """Base class for pipeline errors."""


class ConfigurationError(InsilicoError, ValueError):
    """Invalid parameters or inconsistent configuration."""


class GenerationError(InsilicoError):
    """A stochastic generator could not meet its target."""

    def __init__(self, message, case_index=None):
        super().__init__(message if case_index is None else f"case {case_index}: {message}")
        self.case_index = case_index


class ResolutionError(ConfigurationError):
    """Object too small to be represented at the requested voxel pitch."""


class DoesNotFitError(InsilicoError):
    """A mass cannot be placed inside the breast tissue."""


class ConsistencyError(InsilicoError):
    """Internal invariant violated (e.g. lesion lost during resampling)."""


class PhysicsError(InsilicoError):
    """Non-finite tallies during transport."""


class DegenerateGeometryError(InsilicoError):
    """No photon reached the detector."""


class UnsupportedModeError(InsilicoError):
    """Operation requested in a transport mode that cannot provide it."""


class DegenerateLabelsError(InsilicoError, ValueError):
    """Training or scoring data contains a single class."""


class DesignError(InsilicoError, ValueError):
    """Reader-study score matrix is not a complete fully-crossed design."""


class FormatError(InsilicoError, ValueError):
    """Malformed file on disk (MHD header, .loc line, layout path)."""

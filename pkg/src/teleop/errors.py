"""Exception taxonomy shared across the package.

Every failure mode a caller may want to branch on gets its own class; plain
misuse of constructors (bad shapes, negative focal lengths) raises ValueError.
"""


class TeleopError(Exception):
    """Base class for all domain errors raised by this package."""


# geometry ------------------------------------------------------------------

class BehindCameraError(TeleopError):
    """Attempted to project a point with non-positive camera-frame depth."""


# calibration ---------------------------------------------------------------

class InsufficientDataError(TeleopError):
    """Fewer samples than the solver needs."""


class DegenerateDataError(TeleopError):
    """Point configuration does not pin down a unique rotation (collinear or worse)."""


class DegenerateAxisError(DegenerateDataError):
    """One source axis carries no energy, so its scale entry is unobservable."""


class SignDegenerateScaleError(TeleopError):
    """Tandem solver converged to a non-positive per-axis scale (mirrored data upstream)."""


class DatasetParseError(TeleopError):
    """Calibration dataset text file is malformed."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


# simworld ------------------------------------------------------------------

class InfeasibleTrajectoryError(TeleopError):
    """Requested exploration poses fall outside the workspace."""


class WorkspaceViolationError(TeleopError):
    """A commanded motion would leave the workspace; state was not advanced."""


# controllers ---------------------------------------------------------------

class InvalidDepthError(TeleopError):
    """Feature depth must be positive."""


class DegenerateFeatureError(TeleopError):
    """Stacked interaction matrix is rank deficient for the requested DOFs."""


class CoarseTimeoutError(TeleopError):
    """Coarse phase hit its step budget before converging."""


class FineTimeoutError(TeleopError):
    """Fine phase hit its step budget before converging."""


class TrackingLostError(TeleopError):
    """A servoed feature left the camera view."""


# netproto ------------------------------------------------------------------

class ProtocolError(TeleopError):
    """Base class for wire-format and delivery errors."""


class OversizeError(ProtocolError):
    """Payload exceeds the per-datagram limit."""


class NotOursError(ProtocolError):
    """Buffer does not start with this protocol's magic (or wrong version)."""


class TruncationError(ProtocolError):
    """Buffer is shorter than its framing claims."""


class CorruptionError(ProtocolError):
    """CRC mismatch."""


class UnknownTypeError(ProtocolError):
    """Well-formed frame with an unrecognized message type."""


class SplitRequiredError(ProtocolError):
    """Batch payload would overflow one datagram; caller must split."""


class DeliveryFailureError(ProtocolError):
    """Retransmissions exhausted without receiving a response."""


# sessions ------------------------------------------------------------------

class InvalidPresetError(TeleopError):
    """Orientation preset index outside 0..3."""


class OperatorAbortError(TeleopError):
    """Scripted or human operator aborted the session."""


class AwaitTimeoutError(TeleopError):
    """Robot agent timed out waiting for an operator command."""


# cli -----------------------------------------------------------------------

class ConfigError(TeleopError):
    """Experiment configuration is invalid."""


class StartupError(TeleopError):
    """Agent could not start (e.g. port already bound)."""

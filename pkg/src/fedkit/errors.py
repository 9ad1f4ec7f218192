"""Exception hierarchy shared across the federation kit."""


class FedkitError(Exception):
    """Base class for all kit-specific failures."""


class UnmappedTopic(FedkitError):
    """A sample topic has no row in the relevant mapping table."""


class IncompatibleUnit(FedkitError):
    """Two units do not share a base symbol and cannot be converted."""


class SchemaError(FedkitError):
    """A document violates the external schema.

    ``code`` is a stable machine-readable slug, ``location`` points at the
    offending field (dotted path) when known.
    """

    def __init__(self, code: str, message: str, location: str = ""):
        self.code = code
        self.location = location
        super().__init__(f"{code}: {message}" + (f" (at {location})" if location else ""))


class DocumentSyntaxError(SchemaError):
    """The document is not even well-formed (bad JSON)."""

    def __init__(self, message: str, location: str = ""):
        super().__init__("syntax", message, location)


class UnknownTopic(FedkitError):
    """A stage guard references a topic that can never be observed."""


class DuplicateParticipant(FedkitError):
    """Registration attempted for an id that already holds a session."""


class UnknownSite(FedkitError):
    """Referenced site is not configured on the hub."""


class NotOffered(FedkitError):
    """A participant published a topic outside its offers list."""


class StaleSeq(FedkitError):
    """Sample sequence number did not increase for (source, topic)."""


class PermissionDenied(FedkitError):
    """Command kind outside the session's granted command set."""


class NoActiveRun(FedkitError):
    """Command requires a running experiment and none is active."""


class InvalidArgument(FedkitError):
    """Command arguments do not satisfy the command's contract."""


class UnknownRun(FedkitError):
    """Trace query referenced a run id the store has never seen."""


class ParticipantTimeout(FedkitError):
    """A participant missed the coordinator's wall-clock watchdog."""


class ParticipantFault(FedkitError):
    """A participant's step function raised."""


class NumericalOverflow(FedkitError):
    """A solver state left the plausible range (instability)."""


class UnsupportedTopology(FedkitError):
    """The monolithic oracle cannot close the coupled system."""


class GridMismatch(FedkitError):
    """Two traces do not share the sim-time grid on compared topics."""


class WRNotConverged(FedkitError):
    """A waveform-relaxation window hit max_iter; carries the residual."""

    def __init__(self, window_index: int, residual: float):
        self.window_index = window_index
        self.residual = residual
        super().__init__(f"window {window_index} not converged, residual {residual:.3e}")


class ConfigError(FedkitError):
    """Sites/registry configuration is unusable."""

"""fedkit: a desk-scale cross-infrastructure federation kit.

Simulated laboratory sites coupled through a hybrid-cloud-style hub, with
pluggable synchronization (conservative, best-effort, waveform relaxation),
emulated HIL participants, information-model translation, PaaS-style
command gating, and a five-layer experiment validator.
"""

from .compare import CompareResult, compare, load_trace
from .errors import (
    ConfigError,
    DuplicateParticipant,
    FedkitError,
    GridMismatch,
    IncompatibleUnit,
    InvalidArgument,
    NoActiveRun,
    NotOffered,
    NumericalOverflow,
    ParticipantFault,
    ParticipantTimeout,
    PermissionDenied,
    SchemaError,
    StaleSeq,
    UnknownRun,
    UnknownSite,
    UnknownTopic,
    UnmappedTopic,
    UnsupportedTopology,
    WRNotConverged,
)
from .experiment import (
    Command,
    CommandKind,
    DomainKind,
    Experiment,
    ExperimentDescription,
    ParticipantDescriptor,
    Registry,
    Route,
    SiteDescriptor,
    Stage,
    StageMachine,
    SyncMode,
    Transition,
    ValidationReport,
    WRConfig,
    load_experiment,
    load_sites,
    parse_experiment,
    parse_sites,
    validate_layers,
)
from .hub import Envelope, Hub, Session, TraceRecord, TraceStore
from .model import (
    CanonicalEntry,
    CanonicalModel,
    Kind,
    MappingTable,
    Quality,
    SignalSample,
    UnitDef,
    from_canonical,
    load_model,
    load_table,
    to_canonical,
    validate_model,
    validate_table,
)
from .netem import Jitter, LinkModel, LinkScheduler, ScheduledDelivery
from .plant import (
    GridModel,
    HilDevice,
    PhilInterfaceConfig,
    PowerState,
    build_participant,
    hil_run,
    ict_step,
    itm_stability,
    monolithic_oracle,
    power_step,
)
from .sync import (
    CausalityViolation,
    RunResult,
    TimeGrant,
    detect_causality_violations,
    run_best_effort,
    run_conservative,
    run_experiment,
    run_wr,
)

__version__ = "0.1.0"

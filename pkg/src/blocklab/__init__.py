"""Budgeted lazy streams, block sequences, and certificate-checked
construction engines, with a scenario-driven command line front end."""

from .errors import (
    CycleError,
    DepthExceeded,
    LabError,
    OracleRequired,
    ParseError,
    PreconditionFailed,
    ResolutionError,
    ScenarioError,
)
from .streams import (
    Budget,
    SetStream,
    arithmetic,
    blocks_union,
    default_budget,
    evens,
    from_indices,
    group_of,
    image,
    intersect,
    naturals,
    periodic,
    preimage,
    rapid_witness_check,
    s_of,
    s_t_eval,
    scripted,
    t_of,
    union,
)
from .blocks import (
    BlockSeq,
    BlockSeqVerdict,
    LeVerdict,
    block_seq_check,
    blocks_from_stream,
    le_at,
    le_some,
    scripted_blocks,
    sset,
    subselect,
    thin,
    triangular,
)
from .maps import (
    FiberBlocks,
    Map,
    NormalTriple,
    NormalVerdict,
    ValueSeq,
    eventual_monotone_bound,
    fiber_blocks,
    normal_check,
)
from .rho import DeltaResult, RhoTriple, delta_rho, running_counts
from .report import Line, Report
from .calibration import (
    Calibration,
    CalibrationInput,
    assemble_input,
    calibrate,
    check_input,
    verify_calibration,
)
from .constructions import (
    DiagonalResult,
    FusionInput,
    FusionResult,
    LiftResult,
    TowerInput,
    diagonal,
    fuse,
    lift,
    lift_system,
)
from .forcing import (
    TOP,
    AddCoordinate,
    Condition,
    DecideSet,
    GenericContext,
    Kill,
    RKPullback,
    Rapidify,
    RestrictImage,
    SealLimit,
    StageResult,
    Thin,
    Trace,
    TraceEntry,
    TripleWitness,
    check_condition,
    extend_condition,
    leq_condition,
    meet_chain,
    run_stage,
    seed_condition,
)
from .scenario import Scenario, parse_scenario, print_scenario

__all__ = [name for name in dir() if not name.startswith("_")]

"""Spatial difference-in-differences toolkit for gridded virtual land markets.

Pipeline in one breath: load wave geometry and transaction dumps
(:mod:`gridhedonic.grid`, :mod:`gridhedonic.ledger`), build the event-window
panel, estimate announcement effects with absorbed fixed effects
(:mod:`gridhedonic.econ`), and validate everything against synthetic markets
with planted coefficients (:mod:`gridhedonic.synth`).
"""

from .econ import (
    AbsorbingOLS,
    DiDEstimator,
    FitResult,
    HedonicIndexEstimator,
    IndexSeries,
    ModelSpec,
    TripleDiffEstimator,
    absorb_fixed_effects,
    build_design,
    estimate_did,
    estimate_triple_diff,
    hedonic_index,
    ols_fit,
    partition_meta,
    residual_trend_series,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    ConversionError,
    DegenerateDesignError,
    DegenerateGroupError,
    GridHedonicError,
    InsufficientDataError,
    InvalidInputError,
    NumericalError,
)
from .grid import (
    AnnouncementGroup,
    Coord,
    Region,
    Wave,
    assign_near,
    contiguity_check,
    distance_to_announcement,
    distance_to_region,
    euclidean_distance,
    group_waves,
    load_waves,
)
from .ledger import (
    EventSample,
    MapMetadata,
    RateTable,
    Rejection,
    Transaction,
    build_event_samples,
    convert_to_usd,
    ingest_transactions,
    summary_stats,
    winsorize,
)
from .synth import DGPConfig, SyntheticMarket, generate_market, recovery_report

__version__ = "0.1.0"

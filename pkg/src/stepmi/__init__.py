"""Missingness classification and multiple imputation for epoch-level step counts."""

from .model import (
    EPOCH_SECONDS,
    EPOCHS_PER_DAY,
    EPOCHS_PER_HOUR,
    EPOCHS_PER_MINUTE,
    EPOCHS_PER_WEEK,
    DAYS_PER_WEEK,
    OBSERVED,
    MISSING,
    IMPUTED,
    Arm,
    ClassifiedPeriod,
    DayOfWeek,
    DayRecord,
    EpochSeries,
    MissingInterval,
    Participant,
    PeriodClass,
    Scope,
    Sex,
    SleepWindow,
    StepDataset,
    Timepoint,
    clock_to_epoch,
    epoch_to_clock,
    weartime_minutes,
)
from .errors import (
    CompletenessError,
    ConstantInput,
    CrossRefError,
    EmptyDonorPool,
    InsufficientPool,
    NoMissingness,
    NoObservedSleep,
    NonConvergence,
    RankDeficientDesign,
    SchemaError,
    SingularCovariance,
    StepMIError,
)
from .classify import (
    ClassifierConfig,
    SeriesClassification,
    ZeroRunClassifier,
    census,
    classify_period,
    classify_series,
    classify_zero_periods,
    derive_missing_intervals,
    detect_zero_count_periods,
    estimate_sleep_window,
    needs_whole_week,
)
from .tobit import (
    IntervalCensoredRegression,
    IntervalRegressionFit,
    draw_parameters,
    fit_interval_regression,
    interval_loglik,
    sample_truncated_normal,
)
from .pooling import (
    OLSFit,
    PooledResult,
    mc_error,
    ols_fit,
    pearson_correlation,
    rubin_pool,
)
from .donor import (
    MATCHING_VARS,
    DonorImputer,
    ImputationSet,
    ProvenanceRecord,
    baseline_summaries_from,
    run_np_mi,
)
from .parametric import (
    DailyFrame,
    DayStatus,
    ParametricImputation,
    ParametricImputer,
    build_daily_frame,
    run_par_mi,
)
from .generate import (
    ActivityProfile,
    MissingnessPattern,
    TruthRecord,
    apply_pattern,
    build_pattern_library,
    extract_pattern,
    generate_complete_dataset,
    load_pattern_library,
    save_pattern_library,
)
from .simulate import (
    ScenarioConfig,
    ScenarioResult,
    estimand_values,
    load_scenario_config,
    run_scenario,
    scenario_1,
    scenario_2,
)
from .dataio import (
    atomic_write,
    ingest,
    read_epoch_file,
    read_participant_file,
    validate_files,
    write_dataset,
    write_epoch_file,
    write_participant_file,
)
from .validation import derived_rng

__version__ = "0.1.0"

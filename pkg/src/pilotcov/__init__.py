"""Covariance estimation for massive MIMO uplink training under pilot
contamination, with time-varying pilot schedules."""

from .channel import (
    ChannelRealization,
    ObservationBlock,
    SquaredObservations,
    draw_channels,
    observe,
    squared_rows,
)
from .errors import (
    ConfigError,
    IdentifiabilityError,
    InfeasibleConstraintError,
    InvalidProfileError,
    PilotCovError,
    SingularSystemError,
)
from .estimators import (
    AdaptiveState,
    CovEstimate,
    MLFixedPointResult,
    ObsCovEstimate,
    adaptive_update,
    estimate_all_rows_ml,
    estimate_obs_covariances,
    llf_gradient,
    ml_fixed_point,
    negative_llf,
    shared_scaling_estimate,
    shared_scaling_fixed_point,
    two_step_reconstruct,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    Record,
    emit_csv,
    load_experiment_config,
    load_result_csv,
    run_experiment,
)
from .linklevel import (
    ls_channel_estimate,
    mmse_channel_estimate,
    mmse_channel_estimate_full,
    rzf_filter,
    uplink_sum_rate,
)
from .scenario import (
    BandLimited,
    CovarianceSet,
    ProfileKind,
    RandomSparse,
    ScenarioConfig,
    Uniform,
    UserGrouping,
    generate_covariance_set,
    genie_covariances,
)
from .schedule import (
    Allocation,
    Schedule,
    load_schedule,
    make_example_schedule_442,
    make_random_schedule,
    min_schedule_length,
    rank_and_condition,
    save_schedule,
)

__version__ = "0.1.0"

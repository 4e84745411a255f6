"""Multiple-instance dictionary learning detector for wideband EMI lanes.

The package covers the full chain: relaxation-frequency response modeling
and lane simulation, greedy/l1 sparse solvers, joint-pursuit prescreening
and alarm generation, latent-variable dictionary + classifier training, and
lane-held-out ROC evaluation, all wired together by the ``tdefumi`` CLI.
"""

from .alarms import (
    Alarm,
    ConfidenceMap,
    alarms_to_bags,
    extract_alarms,
    label_alarms,
    lane_mean_subtract,
    mean_shift,
    percentile_tau,
    prescreen,
    threshold_confidences,
)
from .dsrf import (
    DsrfParams,
    FrequencyGrid,
    GroundTruthObject,
    Lane,
    LaneSpec,
    ObjectSpec,
    SceneConfig,
    build_dsrf_dictionary,
    default_frequency_grid,
    default_scene,
    default_zeta_grid,
    dsrf_atom,
    dsrf_response,
    simulate_lane,
    simulate_scene,
    stack_complex,
    unstack_complex,
)
from .estimator import TdEfumiClassifier
from .evaluation import (
    ComparisonReport,
    Fold,
    RocCurve,
    compare_report,
    ignore_clutter,
    make_folds,
    pd_at_far,
    roc,
)
from .solvers import (
    Dictionary,
    SolverConfig,
    SparseCode,
    jomp,
    lasso,
    matching_pursuit,
    omp,
    sparse_code_latent,
)
from .training import (
    Bag,
    Classifier,
    DataStats,
    EfumiDiagnosticConfig,
    LatentPosterior,
    Model,
    TrainConfig,
    TrainingDivergedError,
    classify,
    classify_alarm,
    classify_points,
    delta_n,
    efumi_objective,
    expected_point_loss,
    gradients,
    latent_posterior,
    objective,
    project_unit_ball,
    train,
)

__version__ = "0.1.0"

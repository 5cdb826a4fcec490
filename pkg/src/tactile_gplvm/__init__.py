"""Online GP-LVM learning for simulated tactile contour following."""

from .controller import (
    ControlConfig,
    EdgeEstimate,
    RunAborted,
    bootstrap,
    default_max_steps,
    exploration_step,
    localisation_step,
    run_contour_following,
)
from .dissimilarity import (
    DissimilarityProfile,
    EdgeOutsideWindowError,
    FlatProfileError,
    LabellingError,
    euclidean_dissim,
    label_line,
    locate_minimum,
)
from .experiments import (
    ExperimentSpec,
    MetricsReport,
    run_offline_eval,
    run_online_experiment,
)
from .gp import (
    CovarianceFactor,
    FactorizationError,
    KernelParams,
    NoiseLevel,
    build_covariance,
    kernel_matrix,
    log_marginal_likelihood,
    lml_gradient,
)
from .model import (
    GplvmModel,
    LatentEstimate,
    augment_model,
    infer_latent,
    infer_phi_for_line,
    optimize_hyperparameters,
)
from .reporting import export_outputs
from .sensor import Pose2D, SensorModel, VirtualRobot, simulate_tap
from .stimulus import SCENARIOS, Stimulus, make_stimulus, signed_edge_distance
from .trajectory import TrajectoryLog

__version__ = "0.1.0"

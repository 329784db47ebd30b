"""Camera velocity estimation from event streams.

Events are batched into fixed-size packets, warped by candidate motion
parameters, accumulated into per-polarity count images, and scored by the
likelihood of the counts under a per-pixel Poisson process whose rate carries
a gamma prior (negative-binomial marginal).  Maximizing that likelihood over
the warp parameters recovers angular velocity, its affine extension, or
linear velocity up to scale.
"""

from .events import (
    AffineOmega,
    CameraModel,
    ConstOmega,
    Event,
    EventPacket,
    Events,
    LinearVel,
    PriorParams,
    WarpParams,
    make_params,
    normalize_time,
    packetize,
)
from .dataset_io import (
    ImuData,
    ParseError,
    PoseData,
    gt_linear_velocity,
    load_dataset,
    parse_calibration,
    parse_events,
    parse_imu,
    parse_poses,
)
from .warp import (
    BearingLUT,
    build_bearing_lut,
    rotation_exp,
    skew,
    warp_affine,
    warp_events,
    warp_rotational,
    warp_translational,
)
from .iwe import CanvasGeometry, CountImage, accumulate, gaussian_taps, smooth, write_pgm
from .likelihood import (
    LossConfig,
    cmax_loss,
    fit_gamma_prior,
    ml_lambda_loss,
    nb_log_pmf,
    poisson_log_pmf,
    stppp_loss,
)
from .loss_kernel import FusedLoss, make_fused_loss
from .optimizer import (
    EstimationError,
    OptimConfig,
    VelocityEstimate,
    adam_minimize,
    estimate_packet,
    fd_gradient,
    run_sequence,
)
from .simulator import SceneModel, SimulationError, generate_scene, simulate_events, write_dataset
from .evaluation import Metrics, compute_metrics, fit_scale, gt_velocity_at

__version__ = "0.1.0"

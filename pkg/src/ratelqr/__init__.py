"""Rate-limited closed-loop sensing and control toolkit.

Noisy linear sensors compress their observations (identity, PCA, or a trained
autoencoder), a fusion center reconstructs them and runs a Kalman filter, and
an LQR controller closes the loop. The experiments module sweeps compression
and observation dimensions and searches multi-sensor transmission-budget
allocations.
"""

from .codecs import (
    AeCodec,
    CodecDescriptor,
    IdentityCodec,
    PcaCodec,
    TrainConfig,
    ae_forward,
    ae_gradient,
    ae_init,
    ae_train,
    codec_roundtrip,
    load_codec,
    pca_fit,
    save_codec,
)
from .controller import LqrSolution, LqrWeights, control, solve_dare, step_cost
from .errors import CheckpointError, ConfigError, NumericsError
from .estimator import (
    FusedObservation,
    KalmanState,
    fuse_observations,
    kf_init,
    kf_predict,
    kf_update,
    steady_state_covariance,
)
from .mathkernel import RngStream, cholesky, gaussian, mat_mul, solve_spd, sym_eig
from .plant import (
    PlantModel,
    SensorModel,
    make_double_integrator,
    make_random_sensor,
    observe,
    step,
)
from .simulation import (
    EpisodeLog,
    MetricsSummary,
    ScenarioConfig,
    SensorSpec,
    collect_dataset,
    compute_metrics,
    evaluate_offline,
    evaluate_online,
    run_episode,
)

__version__ = "0.1.0"

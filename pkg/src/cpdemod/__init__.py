"""Set-valued demodulation with conformal calibration over a simulated channel."""

from .channel import (
    ChannelParams,
    Constellation,
    Frame,
    apply_iq_imbalance,
    generate_frame,
    make_qpsk,
    sample_channel_params,
    transmit,
)
from .conformal import (
    CrossValConformalPredictor,
    NaiveSetPredictor,
    SplitConformalPredictor,
    cv_membership,
    cv_predict,
    empirical_quantile,
    kcv_predict,
    naive_set,
    nc_score,
    quantile_index,
    rank_threshold,
    vb_predict,
)
from .harness import (
    ExperimentConfig,
    MetricsRecord,
    evaluate_frame,
    run_experiment,
    write_csv,
    write_dat,
)
from .mlp import (
    Ensemble,
    GDLearner,
    ModelArch,
    SGLDLearner,
    Weights,
    forward,
    grad,
    init_weights,
    nll_loss,
    predictive,
    train_gd,
    train_sgld,
)

__version__ = "0.1.0"

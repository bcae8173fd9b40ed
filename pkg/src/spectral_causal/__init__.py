"""Spectral low-rank representations and saddle-point estimators for causal
inference with hidden confounders (IV, IV with observed confounders, and
proxy causal learning), plus synthetic benchmarks and exact oracles."""

from .benchdata import (
    Dataset,
    DiscreteJointSpec,
    PCLDiscreteSpec,
    default_pcl_spec,
    default_toy_8x8,
    demand_f,
    demand_h,
    digit_embed,
    digit_index,
    discrete_ratio_oracle,
    gen_demand_design,
    gen_discrete_toy,
    gen_linear_gaussian_iv,
    gen_pcl_discrete,
    load_dataset,
    oos_mse,
    save_dataset,
    solve_bridge_exact,
)
from .config import ConfigError, load_config, validate_config
from .experiment import ResultRecord, records_equal, run_experiment, write_records
from .linalg import kron_apply, pseudo_inverse, ridge_regression
from .nets import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_step,
    backward,
    forward,
    grad_check,
    init_params,
    mlp_spec,
)
from .representations import (
    AdamConfig,
    FeatureNet,
    IVOCRepresentation,
    IVRepresentation,
    PCLRepresentation,
    contrastive_l2_loss,
    contrastive_mle_loss,
    load_representation,
    save_representation,
    score_iv,
    score_ivoc_x,
    score_ivoc_y,
    score_pcl_w,
    score_pcl_y,
    train_representation,
)
from .saddle import (
    GDAConfig,
    IVOCSolution,
    IVSolution,
    PCLSolution,
    RegularizerSpec,
    SaddleNonConvergence,
    baseline_fit,
    pcl_causal_effect,
    predict_structural,
    rank_one_primal,
    solve_iv_saddle,
    solve_ivoc_saddle,
    solve_pcl_saddle,
)

__version__ = "0.1.0"

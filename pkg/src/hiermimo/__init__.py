"""Robust joint precoding for network MIMO with hierarchical per-TX CSI.

A numpy library plus a Monte-Carlo harness: channel and nested-CSI models,
the robust weighted-MMSE sum-rate solver, its hierarchical fixed-block
variants, a naive distributed baseline, and exact rate evaluation.
"""

from .errors import ConfigError, InconsistencyError, PowerViolationError
from .hierarchy import (
    EffectivePrecoder,
    PrecoderPartition,
    Scheme,
    clip_w_opt,
    hierarchical_precode,
    naive_distributed_precode,
    per_tx_normalize,
    perfect_csit_precode,
    precode,
    solve_lambda_bisection,
    update_w_opt,
)
from .harness import (
    ExperimentSpec,
    ResultRow,
    ResultTable,
    TrialRecord,
    emit_outputs,
    parse_config_file,
    run_sweep,
    run_trial,
)
from .metrics import (
    ErrorCovariances,
    MseMatrix,
    RateReport,
    RxFilterBank,
    WeightBank,
    evaluate_rates,
    mmse_rx_filter,
    mse_matrix,
    phi_matrix,
    power_ratios,
    psi_matrix,
)
from .model import (
    ChannelRealization,
    CsiQuality,
    CsiSet,
    NetworkConfig,
    build_config,
    draw_channel,
    draw_csi,
)
from .wmmse import (
    SolverOptions,
    SolverState,
    objective,
    robust_wmmse,
    surrogate_rate_bits,
    update_precoder,
    update_weights,
)

__all__ = [
    "ChannelRealization",
    "ConfigError",
    "CsiQuality",
    "CsiSet",
    "EffectivePrecoder",
    "ErrorCovariances",
    "ExperimentSpec",
    "InconsistencyError",
    "MseMatrix",
    "NetworkConfig",
    "PowerViolationError",
    "PrecoderPartition",
    "RateReport",
    "ResultRow",
    "ResultTable",
    "RxFilterBank",
    "Scheme",
    "SolverOptions",
    "SolverState",
    "TrialRecord",
    "WeightBank",
    "build_config",
    "clip_w_opt",
    "draw_channel",
    "draw_csi",
    "emit_outputs",
    "evaluate_rates",
    "hierarchical_precode",
    "mmse_rx_filter",
    "mse_matrix",
    "naive_distributed_precode",
    "objective",
    "parse_config_file",
    "per_tx_normalize",
    "perfect_csit_precode",
    "phi_matrix",
    "power_ratios",
    "precode",
    "psi_matrix",
    "robust_wmmse",
    "run_sweep",
    "run_trial",
    "solve_lambda_bisection",
    "surrogate_rate_bits",
    "update_precoder",
    "update_w_opt",
    "update_weights",
]

"""Distribution of spot variance from noisy high-frequency prices.

The toolkit estimates the occupation-time distribution of latent spot
variance from microstructure-contaminated, jump-contaminated prices
(pre-averaging, truncation, local blocks), builds the realized empirical
distribution function with its long-run variance, tests parametric marginal
laws with bootstrap critical values, simulates the supporting stochastic
volatility models, and calibrates them by moment matching.
"""

from .ticks import (
    RawTicks,
    TickSeries,
    ReturnSeries,
    read_ticks,
    clean_ticks,
    pretick,
    pretick_days,
    log_returns,
)
from .preavg import (
    kernel_min,
    psi_constants,
    choose_kn,
    PreavgConfig,
    PreavgSeries,
    preaverage,
    preavg_bipower,
    truncation_threshold,
    normal_quantile,
)
from .spotvol import (
    BlockConfig,
    SpotVariancePath,
    day_noise_variance,
    estimate_spot_path,
    path_frame,
)
from .redf import (
    Redf,
    build_redf,
    LongRunVarianceConfig,
    LongRunResult,
    longrun_variance,
    clt_pivot,
)
from .cirlaw import (
    CirParams,
    BASELINE_CIR,
    stationary_law,
    joint_cdf,
    longrun_variance_analytic,
)
from .marginals import (
    GammaMarginal,
    LognormalMarginal,
    InverseGaussianMarginal,
    GigMarginal,
    ig_from_ts,
    make_marginal,
    stationary_marginal,
)
from .sim import (
    SvModelSpec,
    JumpSpec,
    NoiseSpec,
    SimulatedPanel,
    baseline_model,
    calibrate_jump_c,
    simulate_heston,
    simulate_expou,
    simulate_tsou,
    simulate_ts_jumps,
    add_noise,
    assemble_panel,
)
from .calib import (
    IvMomentTargets,
    ModelIvMoments,
    daily_iv_series,
    heston_iv_moments,
    expou_iv_moments,
    tsou_iv_moments,
    gmm_fit,
    GmmFit,
    GmmError,
)
from .gof import (
    GofReport,
    GmmEstimator,
    rks,
    rl2,
    pvalue,
    model_null,
    bootstrap_known,
    bootstrap_estimated,
)
from .parallel import replicate_seeds, indexed_map
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    run_experiment,
    load_return_series,
)

__version__ = "0.1.0"

"""Bridge processes fit to sequences of unpaired population snapshots.

The package fits a pair of drift networks whose forward/backward diffusions
match every observed marginal on a shared time grid, then checks the result
against small exact solvers (discrete chain couplings, closed-form Gaussian
laws) that share no code with the learner.
"""

from .core import (
    ConfigurationError,
    DataError,
    DivergenceError,
    ReferenceConfig,
    RunConfig,
    SampleBatch,
    TimeGrid,
    TrainConfig,
    load_config,
    parse_config,
    seeded_rng,
    worker_rng,
)
from .reference import (
    BridgePairBatch,
    backward_target,
    bridge_moments,
    forward_target,
    interp,
    sample_bridge_times,
)
from .net import (
    DriftNetwork,
    adam_step,
    init_drift_network,
    load_network,
    loss_and_grad,
    save_network,
    time_embed,
)
from .datasets import (
    DATASET_NAMES,
    MarginalDataset,
    load_snapshot_table,
    make_dataset,
    read_samples_csv,
    write_samples_csv,
)
from .integrate import (
    TrajectoryBatch,
    chain_segments,
    make_ode_drift,
    ode_simulate,
    path_energy,
    read_trajectories_csv,
    sde_simulate,
    write_trajectories_csv,
)
from .oracle import (
    DiscreteCoupling,
    InteriorLaw,
    OracleDrift,
    chain_sinkhorn,
    empirical_coupling,
    oracle_interior_marginal,
    total_variation,
)
from .metrics import (
    MetricReport,
    MomentCurves,
    median_bandwidth,
    mmd_rbf,
    moment_track,
    sliced_w,
    w2_exact,
)
from .imff import (
    BridgeModel,
    TrainingHistory,
    build_model,
    evaluate_model,
    generate,
    load_model,
    mm_imf,
    save_model,
    train,
    warmup,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DataError", "DivergenceError",
    "ReferenceConfig", "RunConfig", "TrainConfig", "TimeGrid", "SampleBatch",
    "load_config", "parse_config", "seeded_rng", "worker_rng",
    "BridgePairBatch", "interp", "forward_target", "backward_target",
    "bridge_moments", "sample_bridge_times",
    "DriftNetwork", "init_drift_network", "time_embed", "loss_and_grad",
    "adam_step", "save_network", "load_network",
    "DATASET_NAMES", "MarginalDataset", "make_dataset", "load_snapshot_table",
    "write_samples_csv", "read_samples_csv",
    "TrajectoryBatch", "sde_simulate", "ode_simulate", "make_ode_drift",
    "chain_segments", "path_energy", "write_trajectories_csv",
    "read_trajectories_csv",
    "DiscreteCoupling", "chain_sinkhorn", "InteriorLaw", "OracleDrift",
    "oracle_interior_marginal", "empirical_coupling", "total_variation",
    "MetricReport", "MomentCurves", "w2_exact", "mmd_rbf", "median_bandwidth",
    "sliced_w", "moment_track",
    "BridgeModel", "TrainingHistory", "build_model", "warmup", "mm_imf",
    "train", "generate", "evaluate_model", "save_model", "load_model",
    "__version__",
]

"""Task-parallel exact Gaussian process regression with a tiled
asynchronous Cholesky core, plus a scaling benchmark harness."""

from .gp import (
    DEFAULT_THETA,
    AdamRates,
    AdamState,
    CholeskyFactor,
    GpEngine,
    PredictionResult,
    adam_step,
    cholesky_task_count,
    softplus,
    softplus_inv,
)
from .harness import (
    BenchRecord,
    GroupSummary,
    ScalingSummary,
    benchmark_config,
    emit_plotdata,
    read_records,
    size_scaling,
    strong_scaling,
    summarize,
    tiles_for_size,
    write_records,
)
from .kernels import (
    Dataset,
    Hyperparameters,
    assemble_cov_tile,
    assemble_cross_tile,
    assemble_prior_tile,
    grad_tile,
    se_kernel,
)
from .runtime import PoolConfig, RuntimeHandle, RuntimeStats, TaskFuture, start_pool
from .simulator import (
    DatasetFormatError,
    MsdConfig,
    SimulationUnstableError,
    Standardizer,
    load_dataset,
    make_dataset,
    save_dataset,
    simulate,
    steps_for_samples,
)
from .tile_blas import BACKENDS, FactorizationError, get_backend
from .tiled import (
    TiledPanel,
    TiledSymmetricMatrix,
    TiledVector,
    TileSpec,
    gather_vector,
    make_spec,
    panel_from_dense,
    scatter_vector,
    symmetric_from_dense,
)

__version__ = "0.1.0"

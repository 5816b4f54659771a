"""graphode: learns the right-hand side of time-dependent PDEs from snapshot
data, using attention-weighted graph layers in space and an explicit
Runge-Kutta integrator in time."""

from .autodiff import ParamSet, Tape, Tensor, constant, tensor
from .burgers import (
    SolverConfig,
    central_difference_oracle,
    generate_burgers_dataset,
    sample_ic_1d,
    sample_ic_2d,
    solve_burgers_1d,
    solve_burgers_2d,
    subsample_snapshots,
)
from .data import SnapshotDataset, read_dataset, write_dataset
from .errors import ConfigError, DataIOError, NumericError, ShapeError
from .graph import (
    BoundaryMask,
    GridGraph,
    apply_dirichlet_mask,
    build_periodic_grid_1d,
    build_periodic_grid_2d,
    edge_relative_offsets,
    write_edge_list,
)
from .integrators import IntegratorConfig, Trajectory, euler_step, rk4_38_step, rollout
from .metrics import (
    MetricsTable,
    compute_metrics,
    derivative_capture_report,
    l1_error_field,
    l2_error_per_time_index,
)
from .model import (
    DynamicsModel,
    ModelConfig,
    graph_layer1,
    graph_layer2,
    grid_spacings,
    init_params,
    monomial_exponents,
    taylor_attention_eval,
)
from .training import (
    AdamState,
    TrainReport,
    TrainSchedule,
    calibrate_derivative_scales,
    mse_loss,
    parse_schedule_notation,
    sgd_step,
    train,
)

__version__ = "0.1.0"

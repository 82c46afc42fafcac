//! Mixed-autonomy store-and-forward signal control: network model, queue
//! dynamics with composition-dependent saturation, the MILP formulation, the
//! receding-horizon controller, a stochastic plant, metrics and scenarios.

pub mod dynamics;
pub mod formulation;
pub mod metrics;
pub mod mpc;
pub mod network;
pub mod plant;
pub mod scenario;

pub use dynamics::{
    autonomy_level, saturation_from_autonomy, saturation_rate, signal_flows, step, transport_flows, FlowSet,
    HdvTurning, HeadwayParams, PlanStep, QueueState,
};
pub use formulation::{build_milp, make_partition, MilpInstance, ObjectiveWeights, PartitionScheme, SatMode};
pub use metrics::{approximation_error, mad, mpe, traffic_kpis, Kpis};
pub use mpc::{
    activation_update, extract_cav_turning, mpc_step, smooth_turning, ControllerConfig, ControllerState, Measurements,
    Mode,
};
pub use network::{admissible_successors, build_grid, floyd_warshall, CostMatrix, LinkId, Network, NodeId};
pub use plant::{plant_step, run_closed_loop, LoopSetup, NoiseConfig, PlantState, TrajectoryLog};
pub use scenario::{run_experiment, ExperimentMatrix, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("invalid network: {0}")]
    Network(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("conservation violated on link {link} commodity {commodity}: queue {value}")]
    Conservation { link: usize, commodity: usize, value: f64 },
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("solver: {0}")]
    Solver(#[from] sfm_milp::MilpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

//! Scenario files, controller presets, the experiment runner and the
//! open-loop envelope sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sfm_milp::{backend_solve, Backend, MipLimits};

use crate::dynamics::{HdvTurning, HeadwayParams, LinkCommodity, QueueState};
use crate::formulation::{build_milp, MilpInputs, ObjectiveWeights, PwlForm, SatMode};
use crate::metrics::{approximation_error, mean_std, per_link_fit, traffic_kpis, write_outflow, write_per_link, write_report, Kpis, ReportRow};
use crate::mpc::{fixed_greens, ControllerConfig, Mode};
use crate::network::{build_grid, floyd_warshall, CostMatrix, Link, Network, Node};
use crate::plant::{run_closed_loop, LoopSetup, NoiseConfig, TrajectoryLog};
use crate::ControlError;

/// Free-flow speed behind the delay KPI, km/h.
pub const FREE_FLOW_KMH: f64 = 50.0;

const TABLE2: &str = include_str!("../scenarios/table2.toml");
const GRID2X2_MIXED: &str = include_str!("../scenarios/grid2x2_mixed.toml");

/// Bundled scenario text by name.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "table2" => Some(TABLE2),
        "grid2x2_mixed" => Some(GRID2X2_MIXED),
        _ => None,
    }
}

pub const BUILTINS: [&str; 2] = ["table2", "grid2x2_mixed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleClass {
    CAV,
    HDV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    /// Minutes from the start of the run.
    pub start: f64,
    pub end: f64,
    /// veh/h.
    pub rate: f64,
}

/// One OD row. Links are 1-based; HDV rows use destination 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandRow {
    pub class: VehicleClass,
    pub origin: usize,
    pub destination: usize,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    #[serde(default = "two")]
    pub phases: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lost_time: Option<f64>,
}

/// Explicit link. Nodes are 1-based, 0 is outside the network. `phase` is
/// the 1-based phase of `to` that serves the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: usize,
    pub to: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    /// [rows, cols] of the alternating grid. Used when no explicit links are given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    pub link_length: f64,
    pub x_max: f64,
    pub lost_time: f64,
    /// 1-based CAV destination links; empty means every exit.
    pub destinations: Vec<usize>,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            grid: None,
            link_length: 200.0,
            x_max: 40.0,
            lost_time: 10.0,
            destinations: Vec::new(),
            nodes: Vec::new(),
            links: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    pub cycle: f64,
    pub g_min: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec { cycle: 120.0, g_min: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub mode: Mode,
    pub horizon: usize,
    pub envelopes: usize,
    /// ConstantSF saturation rate, veh/h.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_s: Option<f64>,
    pub x_act: f64,
    pub x_deact: f64,
    pub activation: bool,
    pub alpha: f64,
    pub pwl_segments: usize,
    pub pwl_form: PwlForm,
    pub epsilon: f64,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        let p = ControllerConfig::preset(Mode::DynamicSF);
        ControllerSpec {
            mode: Mode::DynamicSF,
            horizon: p.horizon,
            envelopes: p.envelopes,
            constant_s: None,
            x_act: p.x_act,
            x_deact: p.x_deact,
            activation: p.activation,
            alpha: p.alpha,
            pwl_segments: p.pwl_segments,
            pwl_form: p.pwl_form,
            epsilon: p.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    /// "internal", "microlp" or an executable path; unset defers to the environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    pub rel_gap: f64,
    pub node_limit: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit_s: Option<f64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let l = MipLimits::default();
        SolverSpec { backend: None, rel_gap: l.rel_gap, node_limit: l.node_cap, time_limit_s: None }
    }
}

impl SolverSpec {
    pub fn limits(&self) -> MipLimits {
        MipLimits {
            rel_gap: self.rel_gap,
            node_cap: self.node_limit,
            time_cap: self.time_limit_s.map(std::time::Duration::from_secs_f64),
        }
    }

    pub fn backend(&self) -> Backend {
        match &self.backend {
            Some(b) => Backend::parse(b),
            None => Backend::from_env(),
        }
    }
}

/// Plant HDV turning. Rows override the uniform split for single links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurningSpec {
    /// Share of HDVs leaving the network from a non-exit link.
    pub exit_share: f64,
    pub rows: Vec<TurningRow>,
}

impl Default for TurningSpec {
    fn default() -> Self {
        TurningSpec { exit_share: 0.0, rows: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurningRow {
    pub link: usize,
    /// Shares over the link's successors, in link order.
    pub shares: Vec<f64>,
    #[serde(default)]
    pub exit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenLoopSpec {
    /// FixedTime cycles run without noise before the measured state is frozen.
    pub warmup_cycles: usize,
    pub envelopes: Vec<usize>,
    pub reference: usize,
}

impl Default for OpenLoopSpec {
    fn default() -> Self {
        OpenLoopSpec { warmup_cycles: 10, envelopes: vec![5, 7, 9], reference: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "thirty")]
    pub cycles: usize,
    #[serde(default = "five")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub headways: HeadwayParams,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub turning: TurningSpec,
    #[serde(default)]
    pub open_loop: OpenLoopSpec,
    /// CSV with columns class,origin,destination,start,end,rate; merged into
    /// `demand` at load, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_csv: Option<PathBuf>,
    #[serde(default)]
    pub demand: Vec<DemandRow>,
}

fn two() -> usize {
    2
}
fn five() -> usize {
    5
}
fn thirty() -> usize {
    30
}

fn bad(msg: impl Into<String>) -> ControlError {
    ControlError::Scenario(msg.into())
}

impl Scenario {
    /// Parses and validates. A `demand_csv` is resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ControlError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if let Some(rel) = s.demand_csv.take() {
            let path = match base_dir {
                Some(d) if rel.is_relative() => d.join(&rel),
                _ => rel,
            };
            s.demand.extend(read_demand_csv(&path)?);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String, ControlError> {
        toml::to_string(self).map_err(|e| bad(e.to_string()))
    }

    /// Loads a file, or a bundled scenario written as `builtin:<name>`.
    pub fn load(spec: &str) -> Result<Self, ControlError> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            let text = builtin(name).ok_or_else(|| bad(format!("no bundled scenario '{name}'")))?;
            return Scenario::from_toml_str(text, None);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text, path.parent()).map_err(|e| match e {
            ControlError::Scenario(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ControlError> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn network(&self) -> Result<Network, ControlError> {
        let ns = &self.network;
        let mut net = if ns.links.is_empty() {
            let [r, c] = ns.grid.unwrap_or([4, 4]);
            build_grid(r, c, ns.link_length, ns.x_max, ns.lost_time)?
        } else {
            if ns.grid.is_some() {
                return Err(bad("network gives both a grid and explicit links"));
            }
            let nodes: Vec<Node> = ns
                .nodes
                .iter()
                .map(|n| Node { phases: n.phases, lost_time: n.lost_time.unwrap_or(ns.lost_time) })
                .collect();
            let mut links = Vec::with_capacity(ns.links.len());
            for (i, l) in ns.links.iter().enumerate() {
                let node = |v: usize| -> Result<Option<usize>, ControlError> {
                    match v {
                        0 => Ok(None),
                        v if v <= nodes.len() => Ok(Some(v - 1)),
                        v => Err(bad(format!("link {} refers to node {v}, which does not exist", i + 1))),
                    }
                };
                let downstream = node(l.to)?;
                let row_phases = match (downstream, l.phase) {
                    (None, _) => Vec::new(),
                    (Some(_), Some(p)) if p >= 1 => vec![p - 1],
                    (Some(_), _) => return Err(bad(format!("link {} needs a 1-based phase", i + 1))),
                };
                links.push(Link {
                    length: l.length.unwrap_or(ns.link_length),
                    x_max: l.x_max.unwrap_or(ns.x_max),
                    upstream: node(l.from)?,
                    downstream,
                    row_phases,
                    arc_cost: l.arc_cost,
                });
            }
            Network::new(nodes, links, Vec::new())?
        };
        if !ns.destinations.is_empty() {
            let n = net.num_links();
            let mut d = Vec::with_capacity(ns.destinations.len());
            for &l in &ns.destinations {
                if l == 0 || l > n {
                    return Err(bad(format!("destination link {l} does not exist")));
                }
                d.push(l - 1);
            }
            net.destinations = d;
            net.finish()?;
        }
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.cycles == 0 || self.replications == 0 {
            return Err(bad("cycles and replications must be positive"));
        }
        self.headways.validate()?;
        self.weights.validate()?;
        self.noise.validate()?;
        if self.controller.mode == Mode::ConstantSF && self.controller.constant_s.is_none() {
            return Err(bad("ConstantSF mode requires controller.constant_s"));
        }
        if let Some(s) = self.controller.constant_s {
            if !(s > 0.0) {
                return Err(bad(format!("constant_s {s} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.turning.exit_share) {
            return Err(bad(format!("exit share {} outside [0, 1)", self.turning.exit_share)));
        }
        if self.open_loop.envelopes.is_empty() || self.open_loop.envelopes.contains(&0) || self.open_loop.reference == 0 {
            return Err(bad("open-loop envelope counts must be positive"));
        }
        let net = self.network()?;
        let cost = floyd_warshall(&net);
        let n = net.num_links();
        for (i, row) in self.demand.iter().enumerate() {
            let tag = format!("demand row {} ({:?} {} -> {})", i + 1, row.class, row.origin, row.destination);
            if row.origin == 0 || row.origin > n || !net.links[row.origin - 1].is_entry() {
                return Err(bad(format!("{tag}: origin must be an entry link")));
            }
            match row.class {
                VehicleClass::HDV if row.destination != 0 => {
                    return Err(bad(format!("{tag}: HDV rows take destination 0")));
                }
                VehicleClass::CAV => {
                    let d = row.destination.wrapping_sub(1);
                    if net.commodity_of(d).is_none() {
                        return Err(bad(format!("{tag}: destination is not a CAV destination link")));
                    }
                    if !cost.is_reachable(row.origin - 1, d) {
                        return Err(bad(format!("{tag}: destination unreachable from origin")));
                    }
                }
                _ => {}
            }
            let mut iv: Vec<&Interval> = row.intervals.iter().collect();
            for v in &iv {
                if !(v.start >= 0.0 && v.end > v.start && v.rate >= 0.0 && v.rate.is_finite()) {
                    return Err(bad(format!("{tag}: bad interval {}..{} at {} veh/h", v.start, v.end, v.rate)));
                }
            }
            iv.sort_by(|a, b| a.start.total_cmp(&b.start));
            if let Some(w) = iv.windows(2).find(|w| w[1].start < w[0].end) {
                return Err(bad(format!(
                    "{tag}: intervals {}..{} and {}..{} overlap",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        self.plant_turning(&net)?;
        self.controller_config(self.controller.mode)?;
        Ok(())
    }

    /// Nominal demand per cycle in veh/s, interval edges snapped to whole cycles.
    pub fn demand_schedule(&self, net: &Network) -> Result<Vec<LinkCommodity>, ControlError> {
        let c = self.signal.cycle;
        let nc = net.num_commodities();
        let mut sched = vec![vec![vec![0.0; nc]; net.num_links()]; self.cycles];
        for row in &self.demand {
            let z = row.origin - 1;
            let col = match row.class {
                VehicleClass::HDV => 0,
                VehicleClass::CAV => net
                    .commodity_of(row.destination - 1)
                    .ok_or_else(|| bad(format!("link {} is not a destination", row.destination)))?,
            };
            for v in &row.intervals {
                let k0 = (v.start * 60.0 / c).round() as usize;
                let k1 = ((v.end * 60.0 / c).round() as usize).min(self.cycles);
                for cell in sched.iter_mut().take(k1).skip(k0) {
                    cell[z][col] += v.rate / 3600.0;
                }
            }
        }
        Ok(sched)
    }

    /// True HDV turning of the plant.
    pub fn plant_turning(&self, net: &Network) -> Result<HdvTurning, ControlError> {
        let mut t = HdvTurning::uniform(net, self.turning.exit_share);
        for row in &self.turning.rows {
            if row.link == 0 || row.link > net.num_links() {
                return Err(bad(format!("turning row for missing link {}", row.link)));
            }
            let z = row.link - 1;
            t.t[z] = row.shares.clone();
            t.e[z] = row.exit;
        }
        t.validate(net)?;
        Ok(t)
    }

    pub fn setup(&self, net: &Network) -> Result<LoopSetup, ControlError> {
        Ok(LoopSetup {
            demand: self.demand_schedule(net)?,
            turning: self.plant_turning(net)?,
            initial_estimate: HdvTurning::uniform(net, self.turning.exit_share),
            initial: QueueState::zeros(net),
            cycles: self.cycles,
            noise: self.noise,
        })
    }

    /// Preset for `mode` with this scenario's overrides.
    pub fn controller_config(&self, mode: Mode) -> Result<ControllerConfig, ControlError> {
        let c = &self.controller;
        let mut cfg = ControllerConfig::preset(mode);
        cfg.horizon = c.horizon;
        cfg.envelopes = c.envelopes;
        cfg.cycle = self.signal.cycle;
        cfg.g_min = self.signal.g_min;
        cfg.weights = self.weights;
        cfg.headways = self.headways;
        if mode == Mode::ConstantSF {
            cfg.constant_s = c.constant_s.ok_or_else(|| bad("ConstantSF mode requires controller.constant_s"))? / 3600.0;
        }
        cfg.x_act = c.x_act;
        cfg.x_deact = c.x_deact;
        cfg.activation = c.activation;
        cfg.alpha = c.alpha;
        cfg.pwl_segments = c.pwl_segments;
        cfg.pwl_form = c.pwl_form;
        cfg.epsilon = c.epsilon;
        cfg.backend = self.solver.backend();
        cfg.limits = self.solver.limits();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_demand_csv(path: &Path) -> Result<Vec<DemandRow>, ControlError> {
    #[derive(Deserialize)]
    struct Rec {
        class: VehicleClass,
        origin: usize,
        destination: usize,
        start: f64,
        end: f64,
        rate: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<DemandRow> = Vec::new();
    for rec in rdr.deserialize() {
        let r: Rec = rec?;
        let iv = Interval { start: r.start, end: r.end, rate: r.rate };
        match rows.iter_mut().find(|d| d.class == r.class && d.origin == r.origin && d.destination == r.destination) {
            Some(d) => d.intervals.push(iv),
            None => rows.push(DemandRow { class: r.class, origin: r.origin, destination: r.destination, intervals: vec![iv] }),
        }
    }
    Ok(rows)
}

/// One controller variant of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub mode: Mode,
    pub horizon: usize,
    pub envelopes: usize,
    pub weights: ObjectiveWeights,
    /// Position in the weight grid, when there is more than one entry.
    pub weight_index: Option<usize>,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        let mut s = format!("{}_K{}_N{}", self.mode, self.horizon, self.envelopes);
        if let Some(i) = self.weight_index {
            let _ = write!(s, "_W{i}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentMatrix {
    pub scenario: Scenario,
    pub modes: Vec<Mode>,
    pub horizons: Vec<usize>,
    pub envelopes: Vec<usize>,
    pub weights: Vec<ObjectiveWeights>,
    pub seeds: usize,
    pub out: PathBuf,
}

impl ExperimentMatrix {
    /// The scenario's own mode, K, N and weights.
    pub fn single(scenario: Scenario, out: PathBuf) -> Self {
        ExperimentMatrix {
            modes: vec![scenario.controller.mode],
            horizons: vec![scenario.controller.horizon],
            envelopes: vec![scenario.controller.envelopes],
            weights: vec![scenario.weights],
            seeds: scenario.replications,
            scenario,
            out,
        }
    }

    /// FixedTime ignores K and N, ConstantSF ignores N; those cells are not repeated.
    pub fn cells(&self) -> Result<Vec<Cell>, ControlError> {
        if self.modes.is_empty() || self.horizons.is_empty() || self.envelopes.is_empty() || self.weights.is_empty() {
            return Err(bad("every sweep axis needs at least one value"));
        }
        if self.seeds == 0 {
            return Err(bad("at least one replication is needed"));
        }
        let multi_w = self.weights.len() > 1;
        let mut cells: Vec<Cell> = Vec::new();
        for &mode in &self.modes {
            for (wi, &w) in self.weights.iter().enumerate() {
                for &k in &self.horizons {
                    for &n in &self.envelopes {
                        let (k, n, wi) = match mode {
                            Mode::FixedTime => (0, 0, None),
                            Mode::ConstantSF => (k, 0, multi_w.then_some(wi)),
                            Mode::DynamicSF => (k, n, multi_w.then_some(wi)),
                        };
                        let cell = Cell { mode, horizon: k, envelopes: n, weights: w, weight_index: wi };
                        if !cells.iter().any(|c| c.dir_name() == cell.dir_name()) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    fn config(&self, cell: &Cell) -> Result<ControllerConfig, ControlError> {
        let mut cfg = self.scenario.controller_config(cell.mode)?;
        if cell.mode != Mode::FixedTime {
            cfg.horizon = cell.horizon;
            cfg.weights = cell.weights;
        }
        if cell.mode == Mode::DynamicSF {
            cfg.envelopes = cell.envelopes;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Result of one (cell, replication) job.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub cell: Cell,
    pub replication: usize,
    pub seed: u64,
    pub kpis: Kpis,
    pub row: ReportRow,
    pub max_conservation_error: f64,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<(String, usize, ControlError)>,
}

impl ExperimentOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs one replication in memory. Replication r uses seed base_seed + r.
pub fn run_replication(
    scenario: &Scenario,
    net: &Network,
    cost: &CostMatrix,
    cfg: &ControllerConfig,
    replication: usize,
) -> Result<TrajectoryLog, ControlError> {
    let setup = scenario.setup(net)?;
    run_closed_loop(net, cost, &setup, cfg, scenario.base_seed + replication as u64)
}

/// Every cell and replication, replications in parallel. Per-run CSVs go to
/// `out/<cell>/seed<r>/`, the report to `out/report.csv`. Failed jobs are
/// collected; finished ones are still written.
pub fn run_experiment(m: &ExperimentMatrix) -> Result<ExperimentOutcome, ControlError> {
    let cells = m.cells()?;
    let net = m.scenario.network()?;
    let cost = floyd_warshall(&net);
    std::fs::create_dir_all(&m.out)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..m.seeds).map(move |r| (c, r))).collect();
    let results: Vec<Result<RunRecord, ControlError>> = jobs
        .par_iter()
        .map(|&(ci, r)| {
            let cell = &cells[ci];
            let cfg = m.config(cell)?;
            let log = run_replication(&m.scenario, &net, &cost, &cfg, r)?;
            let kpis = traffic_kpis(&log, &net, FREE_FLOW_KMH)?;
            let dir = m.out.join(cell.dir_name()).join(format!("seed{r}"));
            std::fs::create_dir_all(&dir)?;
            log.write_csv(&dir)?;
            write_per_link(&dir.join("per_link.csv"), &per_link_fit(&log, &net))?;
            write_outflow(&dir.join("outflow.csv"), &kpis.cumulative_outflow)?;
            let row = ReportRow::new(&m.scenario.name, &cell.dir_name(), cell.horizon, cell.envelopes, &log, &kpis);
            Ok(RunRecord {
                cell: cell.clone(),
                replication: r,
                seed: log.seed,
                kpis,
                row,
                max_conservation_error: log.max_conservation_error,
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (res, &(ci, r)) in results.into_iter().zip(&jobs) {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((cells[ci].dir_name(), r, e)),
        }
    }
    let rows: Vec<ReportRow> = records.iter().map(|r| r.row.clone()).collect();
    write_report(&m.out.join("report.csv"), &rows)?;
    Ok(ExperimentOutcome { records, failures })
}

/// Mode, K, N and mean +- std of TMQ, ATT and delay per cell, in first-seen order.
pub fn summary_table(rows: &[ReportRow]) -> String {
    let mut groups: Vec<(&ReportRow, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(first, _)| first.cell == r.cell) {
            Some((_, g)) => g.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    let mut s = format!(
        "{:<18} {:>3} {:>3} {:>4} {:>19} {:>19} {:>19}\n",
        "Cell", "K", "N", "runs", "TMQ (veh)", "ATT (h)", "Delay (s/km)"
    );
    for (first, rs) in &groups {
        let col = |f: fn(&ReportRow) -> f64| {
            let v: Vec<f64> = rs.iter().map(|r| f(r)).collect();
            let (m, sd) = mean_std(&v);
            format!("{m:>9.2} +- {sd:<6.2}")
        };
        let _ = writeln!(
            s,
            "{:<18} {:>3} {:>3} {:>4} {:>19} {:>19} {:>19}",
            first.cell,
            first.horizon,
            first.envelopes,
            rs.len(),
            col(|r| r.tmq),
            col(|r| r.att_total_h),
            col(|r| r.delay_s_per_km)
        );
    }
    s
}

/// Weight grids varying one weight at a time around `base`.
pub fn weight_sweep(base: ObjectiveWeights, which: usize, values: &[f64]) -> Result<Vec<ObjectiveWeights>, ControlError> {
    values
        .iter()
        .map(|&v| {
            let mut w = base;
            match which {
                1 => w.w1 = v,
                2 => w.w2 = v,
                3 => w.w3 = v,
                4 => w.w4 = v,
                _ => return Err(bad(format!("no weight w{which}"))),
            }
            w.validate()?;
            Ok(w)
        })
        .collect()
}

/// Frozen measured state for open-loop solves.
#[derive(Debug, Clone)]
pub struct OpenLoopInstance {
    pub net: Network,
    pub cost: CostMatrix,
    pub x0: QueueState,
    pub forecast: Vec<LinkCommodity>,
    pub turning: HdvTurning,
    pub g_prev: Vec<Vec<f64>>,
}

impl OpenLoopInstance {
    /// Runs `warmup_cycles` of FixedTime on the noise-free plant and freezes the state.
    pub fn from_scenario(s: &Scenario) -> Result<Self, ControlError> {
        let net = s.network()?;
        let cost = floyd_warshall(&net);
        let mut setup = s.setup(&net)?;
        setup.noise = NoiseConfig::off();
        let w = s.open_loop.warmup_cycles;
        let x0 = if w == 0 {
            setup.initial.clone()
        } else {
            setup.cycles = w;
            let cfg = s.controller_config(Mode::FixedTime)?;
            let log = run_closed_loop(&net, &cost, &setup, &cfg, s.base_seed)?;
            let mut x = log.states.last().expect("warm-up states").clone();
            x.step = 0;
            x
        };
        let k = s.controller.horizon;
        let forecast: Vec<LinkCommodity> = vec![setup.demand[w.min(setup.demand.len() - 1)].clone(); k];
        let turning = setup.turning.clone();
        let g_prev = fixed_greens(&net, s.signal.cycle);
        Ok(OpenLoopInstance { net, cost, x0, forecast, turning, g_prev })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub envelopes: usize,
    pub seconds: f64,
    pub objective: f64,
    pub approx_error_pct: Option<f64>,
    pub status: String,
    pub nodes: usize,
}

/// Solves the frozen instance for each N and for the reference; errors are
/// relative to the reference objective.
pub fn open_loop_sweep(
    s: &Scenario,
    inst: &OpenLoopInstance,
    envelopes: &[usize],
    reference: usize,
    backend: &Backend,
) -> Result<(SweepRow, Vec<SweepRow>), ControlError> {
    let cfg = s.controller_config(Mode::DynamicSF)?;
    let solve = |n: usize| -> Result<SweepRow, ControlError> {
        let mut p = cfg.milp_params().expect("DynamicSF has MILP parameters");
        p.mode = SatMode::Dynamic { envelopes: n };
        let inputs = MilpInputs {
            net: &inst.net,
            cost: &inst.cost,
            x0: &inst.x0,
            demand: &inst.forecast,
            turning: &inst.turning,
            g_prev: &inst.g_prev,
        };
        let t0 = Instant::now();
        let model = build_milp(&inputs, &p)?;
        let sol = backend_solve(&model.model, backend, cfg.limits)?;
        Ok(SweepRow {
            envelopes: n,
            seconds: t0.elapsed().as_secs_f64(),
            objective: sol.objective,
            approx_error_pct: None,
            status: sol.status.as_str().into(),
            nodes: sol.nodes,
        })
    };
    let mut refrow = solve(reference)?;
    refrow.approx_error_pct = Some(0.0);
    let mut rows = Vec::with_capacity(envelopes.len());
    for &n in envelopes {
        let mut r = solve(n)?;
        r.approx_error_pct = approximation_error(r.objective, refrow.objective).ok();
        rows.push(r);
    }
    Ok((refrow, rows))
}

/// Envelopes (N) / Computation time (s) / Objective value / Approx. error (%).
pub fn sweep_table(reference: &SweepRow, rows: &[SweepRow]) -> String {
    let mut s = format!("{:>13} {:>20} {:>16} {:>17}\n", "Envelopes (N)", "Computation time (s)", "Objective value", "Approx. error (%)");
    for r in rows.iter().chain(std::iter::once(reference)) {
        let err = r.approx_error_pct.map_or("-".to_string(), |e| format!("{e:.2}"));
        let _ = writeln!(s, "{:>13} {:>20.2} {:>16.2} {:>17}", r.envelopes, r.seconds, r.objective, err);
    }
    s
}

pub fn write_sweep(path: &Path, reference: &SweepRow, rows: &[SweepRow]) -> Result<(), ControlError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["envelopes", "computation_time_s", "objective_value", "approx_error_pct", "status", "nodes"])?;
    for r in rows.iter().chain(std::iter::once(reference)) {
        w.write_record([
            r.envelopes.to_string(),
            format!("{:.3}", r.seconds),
            r.objective.to_string(),
            r.approx_error_pct.map_or(String::new(), |e| e.to_string()),
            r.status.clone(),
            r.nodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

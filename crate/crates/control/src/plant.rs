//! Stochastic macroscopic plant and the lock-step closed loop.
//!
//! The plant discharges each link at its realized saturation rate, computed
//! from the queue composition with per-link jittered headways, and moves
//! vehicles with the same capped store-and-forward update as the model. Demand
//! blocked by a full entry link waits outside the network in a backlog.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{signal_flows, step, FlowSet, HdvTurning, HeadwayParams, LinkCommodity, Movement, PlanStep, QueueState};
use crate::mpc::{mpc_step, ControllerConfig, ControllerState, Diagnostics, Measurements};
use crate::network::{CostMatrix, Network};
use crate::ControlError;

/// Headway jitter is a normal factor truncated at this many deviations.
const JITTER_TRUNC: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Coefficient of variation of the mean-one lognormal demand factor.
    pub demand_cv: f64,
    /// Dirichlet concentration of realized turning rows; 0 disables.
    pub turning_concentration: f64,
    /// Coefficient of variation of the per-link headway factor.
    pub headway_jitter_cv: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { demand_cv: 0.1, turning_concentration: 50.0, headway_jitter_cv: 0.05 }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig { demand_cv: 0.0, turning_concentration: 0.0, headway_jitter_cv: 0.0 }
    }

    pub fn is_off(&self) -> bool {
        self.demand_cv == 0.0 && self.turning_concentration == 0.0 && self.headway_jitter_cv == 0.0
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.demand_cv) && ok(self.turning_concentration) && ok(self.headway_jitter_cv)) {
            return Err(ControlError::Parameter(format!("noise parameters must be nonnegative: {self:?}")));
        }
        if JITTER_TRUNC * self.headway_jitter_cv >= 1.0 {
            return Err(ControlError::Parameter("headway jitter could make headways nonpositive".into()));
        }
        Ok(())
    }

    /// Bounds of the jittered headway factor.
    pub fn jitter_bounds(&self) -> (f64, f64) {
        (1.0 - JITTER_TRUNC * self.headway_jitter_cv, 1.0 + JITTER_TRUNC * self.headway_jitter_cv)
    }
}

#[derive(Debug, Clone)]
pub struct PlantState {
    pub queues: QueueState,
    /// Vehicles present before the first step.
    pub initial_stock: f64,
    rng: ChaCha8Rng,
    /// Cumulative vehicles admitted, per commodity.
    pub entered: Vec<f64>,
    /// Cumulative vehicles that left the network, per commodity.
    pub exited: Vec<f64>,
    /// Demand waiting outside full entry links, `[z][c]` vehicles.
    pub backlog: LinkCommodity,
    /// Realized saturation of occupied links in the last step, veh/s.
    pub s_sim: Vec<Option<f64>>,
}

impl PlantState {
    pub fn new(net: &Network, initial: QueueState, seed: u64) -> Result<Self, ControlError> {
        initial.check_shape(net)?;
        let nc = net.num_commodities();
        Ok(PlantState {
            initial_stock: initial.network_total(),
            queues: initial,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entered: vec![0.0; nc],
            exited: vec![0.0; nc],
            backlog: vec![vec![0.0; nc]; net.num_links()],
            s_sim: vec![None; net.num_links()],
        })
    }

    pub fn stored(&self) -> f64 {
        self.queues.network_total()
    }

    /// initial + entered - exited - stored, veh.
    pub fn conservation_residual(&self) -> f64 {
        self.initial_stock + self.entered.iter().sum::<f64>() - self.exited.iter().sum::<f64>() - self.stored()
    }
}

fn sample_turning(rng: &mut ChaCha8Rng, base: &HdvTurning, kappa: f64) -> HdvTurning {
    if kappa <= 0.0 {
        return base.clone();
    }
    let mut out = base.clone();
    for z in 0..base.t.len() {
        let mut parts: Vec<f64> = base.t[z].iter().copied().chain(std::iter::once(base.e[z])).collect();
        if parts.iter().filter(|&&p| p > 0.0).count() < 2 {
            continue;
        }
        for p in parts.iter_mut() {
            if *p > 0.0 {
                *p = Gamma::new(kappa * *p, 1.0).expect("positive shape").sample(rng);
            }
        }
        let sum: f64 = parts.iter().sum();
        if sum <= 0.0 {
            continue;
        }
        let n = parts.len() - 1;
        for k in 0..n {
            out.t[z][k] = parts[k] / sum;
        }
        out.e[z] = parts[n] / sum;
    }
    out
}

fn jitter(rng: &mut ChaCha8Rng, cv: f64) -> f64 {
    if cv <= 0.0 {
        return 1.0;
    }
    loop {
        let xi: f64 = StandardNormal.sample(rng);
        if xi.abs() <= JITTER_TRUNC {
            return 1.0 + cv * xi;
        }
    }
}

/// Advances the plant by one cycle under the applied plan and CAV routing.
#[allow(clippy::too_many_arguments)]
pub fn plant_step(
    net: &Network,
    plant: &mut PlantState,
    plan: &PlanStep,
    routing: &Movement,
    base_turning: &HdvTurning,
    demand: &LinkCommodity,
    noise: &NoiseConfig,
    h: HeadwayParams,
    cycle: f64,
) -> Result<(Measurements, FlowSet), ControlError> {
    noise.validate()?;
    let nz = net.num_links();
    let nc = net.num_commodities();
    let rng = &mut plant.rng;

    let turning = sample_turning(rng, base_turning, noise.turning_concentration);

    let mut offered = vec![vec![0.0; nc]; nz];
    for z in 0..nz {
        for c in 0..nc {
            let mut b = demand[z][c];
            if b > 0.0 {
                b *= sample_demand_factor(rng, noise.demand_cv);
            }
            offered[z][c] = b + plant.backlog[z][c] / cycle;
        }
    }

    let mut sat = vec![0.0; nz];
    for z in 0..nz {
        let hc = h.h_cav * jitter(rng, noise.headway_jitter_cv);
        let hh = h.h_hdv * jitter(rng, noise.headway_jitter_cv);
        let (xc, xh) = (plant.queues.cav(z), plant.queues.hdv(z));
        let total = xc + xh;
        if total > 0.0 {
            sat[z] = total / (hc * xc + hh * xh);
            plant.s_sim[z] = Some(sat[z]);
        } else {
            sat[z] = 1.0 / hh;
            plant.s_sim[z] = None;
        }
    }

    let flows = signal_flows(&plant.queues, plan, routing, &turning, &sat, net, cycle, &offered)?;
    let next = step(&plant.queues, &flows, cycle)?;
    for z in 0..nz {
        for c in 0..nc {
            plant.entered[c] += flows.b[z][c] * cycle;
            plant.backlog[z][c] = ((offered[z][c] - flows.b[z][c]) * cycle).max(0.0);
        }
        plant.exited[0] += flows.r[z][0] * cycle;
    }
    for c in 1..nc {
        plant.exited[c] += flows.q[net.destination(c)][c] * cycle;
    }
    plant.queues = next;
    let meas = Measurements { x: plant.queues.clone(), turning, step: plant.queues.step };
    Ok((meas, flows))
}

/// Everything the loop needs besides the controller.
#[derive(Debug, Clone)]
pub struct LoopSetup {
    /// Nominal demand per cycle (veh/s); held at its last entry beyond the end.
    pub demand: Vec<LinkCommodity>,
    /// True mean HDV turning of the plant.
    pub turning: HdvTurning,
    /// Controller's turning estimate before the first observation.
    pub initial_estimate: HdvTurning,
    pub initial: QueueState,
    pub cycles: usize,
    pub noise: NoiseConfig,
}

impl LoopSetup {
    fn demand_at(&self, k: usize) -> &LinkCommodity {
        &self.demand[k.min(self.demand.len() - 1)]
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub mode: String,
    pub seed: u64,
    pub cycle: f64,
    /// Queues at the start of every cycle and after the last, `cycles + 1` entries.
    pub states: Vec<QueueState>,
    pub plans: Vec<PlanStep>,
    pub diagnostics: Vec<Diagnostics>,
    pub flows: Vec<FlowSet>,
    /// Per step and link: (modeled, realized) saturation, veh/s.
    pub saturation: Vec<Vec<(Option<f64>, Option<f64>)>>,
    /// Cumulative vehicles served after each step.
    pub served: Vec<f64>,
    /// Cumulative vehicles admitted after each step.
    pub entered: Vec<f64>,
    /// Vehicles waiting outside the network after each step.
    pub backlog: Vec<f64>,
    /// Worst |initial + entered - exited - stored| over the run.
    pub max_conservation_error: f64,
}

impl TrajectoryLog {
    pub fn steps(&self) -> usize {
        self.plans.len()
    }

    pub fn faults(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.fault.is_some()).count()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), ControlError> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("states.csv"))?;
        w.write_record(["step", "link", "commodity", "queue"])?;
        for (k, s) in self.states.iter().enumerate() {
            for (z, row) in s.x.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    w.write_record([k.to_string(), (z + 1).to_string(), c.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("control.csv"))?;
        w.write_record(["step", "gamma", "status", "objective", "bound", "gap", "nodes", "seconds", "greens", "fault"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for d in &self.diagnostics {
            let greens: Vec<String> = d
                .greens
                .iter()
                .map(|r| r.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("/"))
                .collect();
            w.write_record([
                d.step.to_string(),
                u8::from(d.gamma).to_string(),
                d.status.clone(),
                opt(d.objective),
                opt(d.bound),
                opt(d.gap),
                d.nodes.to_string(),
                format!("{:.6}", d.seconds),
                greens.join(" "),
                d.fault.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("saturation.csv"))?;
        w.write_record(["step", "link", "s_model", "s_sim"])?;
        let vph = |v: Option<f64>| v.map(|x| (x * 3600.0).to_string()).unwrap_or_default();
        for (k, row) in self.saturation.iter().enumerate() {
            for (z, &(m, s)) in row.iter().enumerate() {
                w.write_record([k.to_string(), (z + 1).to_string(), vph(m), vph(s)])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("flows.csv"))?;
        w.write_record(["step", "link", "commodity", "inflow", "outflow", "demand", "exit"])?;
        for (k, f) in self.flows.iter().enumerate() {
            for z in 0..f.p.len() {
                for c in 0..f.p[z].len() {
                    let vals = [f.p[z][c], f.q[z][c], f.b[z][c], f.r[z][c]];
                    if vals.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let mut rec = vec![k.to_string(), (z + 1).to_string(), c.to_string()];
                    rec.extend(vals.iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// measure -> control -> plant, for `setup.cycles` cycles.
pub fn run_closed_loop(
    net: &Network,
    cost: &CostMatrix,
    setup: &LoopSetup,
    cfg: &ControllerConfig,
    seed: u64,
) -> Result<TrajectoryLog, ControlError> {
    cfg.validate()?;
    setup.turning.validate(net)?;
    setup.initial_estimate.validate(net)?;
    if setup.demand.is_empty() {
        return Err(ControlError::Scenario("demand schedule is empty".into()));
    }
    let mut plant = PlantState::new(net, setup.initial.clone(), seed)?;
    let mut ctrl = ControllerState::new(net, setup.initial_estimate.clone(), cfg.cycle);
    let mut meas = Measurements { x: setup.initial.clone(), turning: setup.initial_estimate.clone(), step: 0 };
    let mut log = TrajectoryLog {
        mode: cfg.mode.as_str().into(),
        seed,
        cycle: cfg.cycle,
        states: vec![setup.initial.clone()],
        plans: Vec::with_capacity(setup.cycles),
        diagnostics: Vec::with_capacity(setup.cycles),
        flows: Vec::with_capacity(setup.cycles),
        saturation: Vec::with_capacity(setup.cycles),
        served: Vec::with_capacity(setup.cycles),
        entered: Vec::with_capacity(setup.cycles),
        backlog: Vec::with_capacity(setup.cycles),
        max_conservation_error: 0.0,
    };
    for k in 0..setup.cycles {
        // No prediction model: the current rate is held over the horizon.
        let forecast: Vec<LinkCommodity> = vec![setup.demand_at(k).clone(); cfg.horizon];
        let out = mpc_step(net, cost, cfg, &mut ctrl, &meas, &forecast)?;
        let (next, flows) = plant_step(
            net,
            &mut plant,
            &out.plan,
            &out.routing,
            &setup.turning,
            setup.demand_at(k),
            &setup.noise,
            cfg.headways,
            cfg.cycle,
        )?;
        log.saturation.push(out.s_model.iter().zip(&plant.s_sim).map(|(&m, &s)| (m, s)).collect());
        log.plans.push(out.plan);
        log.diagnostics.push(out.diag);
        log.flows.push(flows);
        log.states.push(next.x.clone());
        log.served.push(plant.exited.iter().sum());
        log.entered.push(plant.entered.iter().sum());
        log.backlog.push(plant.backlog.iter().flatten().sum());
        log.max_conservation_error = log.max_conservation_error.max(plant.conservation_residual().abs());
        meas = next;
    }
    Ok(log)
}

/// Mean-one lognormal factor with coefficient of variation `cv`.
pub fn sample_demand_factor(rng: &mut impl Rng, cv: f64) -> f64 {
    if cv <= 0.0 {
        return 1.0;
    }
    let sigma2 = (1.0 + cv * cv).ln();
    LogNormal::new(-0.5 * sigma2, sigma2.sqrt()).expect("finite parameters").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{fixed_plan, shortest_routing};
    use crate::network::{build_grid, floyd_warshall};

    #[test]
    fn sampled_rows_are_stochastic() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let base = HdvTurning::uniform(&net, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = sample_turning(&mut rng, &base, 20.0);
            t.validate(&net).unwrap();
        }
        assert_eq!(sample_turning(&mut rng, &base, 0.0), base);
    }

    #[test]
    fn all_hdv_plant_rate() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let cost = floyd_warshall(&net);
        let mut x0 = QueueState::zeros(&net);
        x0.x[0][0] = 12.0;
        x0.x[3][0] = 5.0;
        let mut p = PlantState::new(&net, x0, 1).unwrap();
        let demand = vec![vec![0.0; net.num_commodities()]; net.num_links()];
        plant_step(
            &net,
            &mut p,
            &fixed_plan(&net, 120.0),
            &shortest_routing(&net, &cost, 0.0),
            &HdvTurning::uniform(&net, 0.0),
            &demand,
            &NoiseConfig::off(),
            HeadwayParams::default(),
            120.0,
        )
        .unwrap();
        for z in [0usize, 3] {
            assert!((p.s_sim[z].unwrap() * 3600.0 - 1333.333_333).abs() < 1e-3);
        }
        assert!(p.s_sim[1].is_none());
        assert!(p.conservation_residual().abs() < 1e-9);
    }

    #[test]
    fn demand_factor_has_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_demand_factor(&mut rng, 0.1)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 2e-3, "{mean}");
    }
}

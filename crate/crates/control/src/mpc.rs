//! Receding-horizon controller: turning smoothing, activation hysteresis,
//! MILP solve, plan repair and CAV routing commands.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sfm_milp::{backend_solve, Backend, MipLimits};

use crate::dynamics::{HdvTurning, HeadwayParams, LinkCommodity, Movement, PlanStep, QueueState};
use crate::formulation::{build_milp, MilpInputs, MilpParams, ObjectiveWeights, PwlForm, SatMode};
use crate::network::{admissible_successors, shortest_successor, CostMatrix, Network};
use crate::ControlError;

/// Denominator below which a routing row falls back to the shortest path (s).
const ROUTE_EPS: f64 = 1e-9;
/// Greens are snapped to multiples of 2^-20 s so phase sums are exact.
const GREEN_GRID: f64 = 1_048_576.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    FixedTime,
    ConstantSF,
    DynamicSF,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::FixedTime, Mode::ConstantSF, Mode::DynamicSF];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FixedTime => "FixedTime",
            Mode::ConstantSF => "ConstantSF",
            Mode::DynamicSF => "DynamicSF",
        }
    }

    pub fn parse(s: &str) -> Result<Mode, ControlError> {
        match s.to_ascii_lowercase().as_str() {
            "fixedtime" | "fixed" => Ok(Mode::FixedTime),
            "constantsf" | "constant" => Ok(Mode::ConstantSF),
            "dynamicsf" | "dynamic" => Ok(Mode::DynamicSF),
            _ => Err(ControlError::Parameter(format!("unknown controller mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub mode: Mode,
    pub horizon: usize,
    pub envelopes: usize,
    pub cycle: f64,
    pub g_min: f64,
    pub weights: ObjectiveWeights,
    pub headways: HeadwayParams,
    /// ConstantSF rate, veh/s.
    pub constant_s: f64,
    pub x_act: f64,
    pub x_deact: f64,
    /// When false the controller solves every cycle.
    pub activation: bool,
    pub alpha: f64,
    pub pwl_segments: usize,
    pub pwl_form: PwlForm,
    pub epsilon: f64,
    pub backend: Backend,
    pub limits: MipLimits,
}

impl ControllerConfig {
    pub fn preset(mode: Mode) -> Self {
        ControllerConfig {
            mode,
            horizon: 2,
            envelopes: 5,
            cycle: 120.0,
            g_min: 30.0,
            weights: ObjectiveWeights::default(),
            headways: HeadwayParams::default(),
            constant_s: 1600.0 / 3600.0,
            x_act: 20.0,
            x_deact: 10.0,
            activation: true,
            alpha: 0.9,
            pwl_segments: 8,
            pwl_form: PwlForm::Incremental,
            epsilon: 0.0,
            backend: Backend::Internal,
            limits: MipLimits::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        self.headways.validate()?;
        self.weights.validate()?;
        if self.horizon == 0 || self.envelopes == 0 || self.pwl_segments == 0 {
            return Err(ControlError::Parameter("horizon, envelopes and PWL segments must be positive".into()));
        }
        if !(self.cycle > 0.0) || !(self.g_min >= 0.0) {
            return Err(ControlError::Parameter(format!("bad cycle {} or minimum green {}", self.cycle, self.g_min)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ControlError::Parameter(format!("smoothing factor {} outside [0, 1]", self.alpha)));
        }
        if self.mode == Mode::ConstantSF && !(self.constant_s > 0.0) {
            return Err(ControlError::Parameter("ConstantSF needs a positive constant saturation rate".into()));
        }
        check_thresholds(self.x_act, self.x_deact)
    }

    /// MILP parameters for the controlled modes.
    pub fn milp_params(&self) -> Option<MilpParams> {
        let mode = match self.mode {
            Mode::FixedTime => return None,
            Mode::ConstantSF => SatMode::Constant { s: self.constant_s },
            Mode::DynamicSF => SatMode::Dynamic { envelopes: self.envelopes },
        };
        Some(MilpParams {
            horizon: self.horizon,
            mode,
            cycle: self.cycle,
            g_min: self.g_min,
            weights: self.weights,
            headways: self.headways,
            pwl_segments: self.pwl_segments,
            pwl_form: self.pwl_form,
            epsilon: self.epsilon,
        })
    }
}

fn check_thresholds(x_act: f64, x_deact: f64) -> Result<(), ControlError> {
    if !(x_act > x_deact && x_deact >= 0.0) {
        return Err(ControlError::Parameter(format!(
            "activation thresholds need X_act > X_deact >= 0, got ({x_act}, {x_deact})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Smoothed HDV turning rows and exit shares.
    pub turning: HdvTurning,
    pub gamma: bool,
    /// Greens applied last cycle, `[j][i]`.
    pub g_prev: Vec<Vec<f64>>,
    pub step: usize,
}

impl ControllerState {
    pub fn new(net: &Network, initial: HdvTurning, cycle: f64) -> Self {
        ControllerState { turning: initial, gamma: false, g_prev: fixed_greens(net, cycle), step: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub x: QueueState,
    /// Observed HDV turning rows and exit shares.
    pub turning: HdvTurning,
    pub step: usize,
}

/// Per-step solve record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub step: usize,
    pub gamma: bool,
    pub solved: bool,
    pub status: String,
    pub objective: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub seconds: f64,
    pub greens: Vec<Vec<f64>>,
    pub fault: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub plan: PlanStep,
    /// CAV routing fractions `[z][slot][c]`; column 0 is unused.
    pub routing: Movement,
    /// Modeled saturation at the measured step, veh/s, where the model set one.
    pub s_model: Vec<Option<f64>>,
    pub diag: Diagnostics,
}

pub fn smooth_turning(prev: f64, observed: f64, alpha: f64) -> f64 {
    alpha * observed + (1.0 - alpha) * prev
}

/// Elementwise smoothing of every row, then renormalization of row plus exit share.
pub fn smooth_rows(prev: &HdvTurning, observed: &HdvTurning, alpha: f64) -> HdvTurning {
    let mut out = prev.clone();
    for z in 0..prev.t.len() {
        for (k, v) in out.t[z].iter_mut().enumerate() {
            *v = smooth_turning(prev.t[z][k], observed.t[z][k], alpha);
        }
        out.e[z] = smooth_turning(prev.e[z], observed.e[z], alpha);
        let sum: f64 = out.t[z].iter().sum::<f64>() + out.e[z];
        if sum > 0.0 {
            out.t[z].iter_mut().for_each(|v| *v /= sum);
            out.e[z] /= sum;
        }
    }
    out
}

pub fn activation_update(max_queue: f64, prev: bool, x_act: f64, x_deact: f64) -> Result<bool, ControlError> {
    check_thresholds(x_act, x_deact)?;
    Ok(if max_queue > x_act {
        true
    } else if max_queue < x_deact {
        false
    } else {
        prev
    })
}

/// CAV turning fractions from operational greens; rows with no green follow
/// the cheapest admissible successor.
pub fn extract_cav_turning(net: &Network, cost: &CostMatrix, big_g: &Movement, epsilon: f64) -> Movement {
    let nc = net.num_commodities();
    let mut t: Movement = (0..net.num_links())
        .map(|z| vec![vec![0.0; nc]; net.successors(z).len()])
        .collect();
    for z in 0..net.num_links() {
        let succ = net.successors(z);
        if succ.is_empty() {
            continue;
        }
        for c in 1..nc {
            let d = net.destination(c);
            if d == z || !cost.is_reachable(z, d) {
                continue;
            }
            let adm = admissible_successors(net, cost, z, d, epsilon);
            let g_of = |k: usize| -> f64 {
                big_g.get(z).and_then(|r| r.get(k)).and_then(|r| r.get(c)).copied().unwrap_or(0.0).max(0.0)
            };
            let denom: f64 = (0..succ.len()).filter(|&k| adm.contains(&succ[k])).map(g_of).sum();
            if denom > ROUTE_EPS {
                for (k, m) in succ.iter().enumerate() {
                    if adm.contains(m) {
                        t[z][k][c] = g_of(k) / denom;
                    }
                }
            } else if let Some(m) = shortest_successor(net, cost, z, d, epsilon) {
                let k = succ.iter().position(|&s| s == m).unwrap();
                t[z][k][c] = 1.0;
            }
        }
    }
    t
}

/// Shortest-path CAV routing.
pub fn shortest_routing(net: &Network, cost: &CostMatrix, epsilon: f64) -> Movement {
    extract_cav_turning(net, cost, &Vec::new(), epsilon)
}

/// Equal split of each node's green budget over its phases.
pub fn fixed_greens(net: &Network, cycle: f64) -> Vec<Vec<f64>> {
    (0..net.num_nodes())
        .map(|j| {
            let p = net.nodes[j].phases;
            vec![net.green_budget(j, cycle) / p as f64; p]
        })
        .collect()
}

pub fn fixed_plan(net: &Network, cycle: f64) -> PlanStep {
    PlanStep { g: fixed_greens(net, cycle), big_g: Vec::new() }
}

/// Snaps greens to the dyadic grid, enforces the minimum and gives the
/// remainder to the longest phase, so each node sums to C - L exactly.
pub fn repair_greens(net: &Network, g: &[Vec<f64>], cycle: f64, g_min: f64) -> Vec<Vec<f64>> {
    g.iter()
        .enumerate()
        .map(|(j, row)| {
            let budget = net.green_budget(j, cycle);
            let mut v: Vec<f64> = row.iter().map(|&x| ((x * GREEN_GRID).round() / GREEN_GRID).max(g_min)).collect();
            if v.is_empty() {
                return v;
            }
            let big = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            let rest: f64 = (0..v.len()).filter(|&i| i != big).map(|i| v[i]).sum();
            v[big] = budget - rest;
            v
        })
        .collect()
}

/// Clips operational greens at zero and scales rows down to the link's green.
fn repair_operational(net: &Network, plan: &mut PlanStep) {
    for z in 0..plan.big_g.len() {
        let avail = plan.link_green(net, z);
        let row = &mut plan.big_g[z];
        row.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
        let total: f64 = row.iter().flatten().sum();
        if total > avail && total > 0.0 {
            let k = avail / total;
            row.iter_mut().flatten().for_each(|v| *v *= k);
        }
    }
}

fn fallback(net: &Network, cost: &CostMatrix, cfg: &ControllerConfig, diag: Diagnostics) -> StepOutput {
    let plan = fixed_plan(net, cfg.cycle);
    let routing = shortest_routing(net, cost, cfg.epsilon);
    let diag = Diagnostics { greens: plan.g.clone(), ..diag };
    StepOutput { plan, routing, s_model: vec![None; net.num_links()], diag }
}

/// One controller cycle. `forecast[k]` is the demand expected k steps ahead (veh/s).
pub fn mpc_step(
    net: &Network,
    cost: &CostMatrix,
    cfg: &ControllerConfig,
    state: &mut ControllerState,
    meas: &Measurements,
    forecast: &[LinkCommodity],
) -> Result<StepOutput, ControlError> {
    meas.x.check_shape(net)?;
    if forecast.is_empty() {
        return Err(ControlError::Dimension("demand forecast is empty".into()));
    }
    state.turning = smooth_rows(&state.turning, &meas.turning, cfg.alpha);
    let gamma = match cfg.mode {
        Mode::FixedTime => false,
        _ if !cfg.activation => true,
        _ => activation_update(meas.x.max_link_total(), state.gamma, cfg.x_act, cfg.x_deact)?,
    };
    state.gamma = gamma;
    let base = Diagnostics {
        step: meas.step,
        gamma,
        solved: false,
        status: "inactive".into(),
        objective: None,
        bound: None,
        gap: None,
        nodes: 0,
        seconds: 0.0,
        greens: Vec::new(),
        fault: None,
    };

    let out = match cfg.milp_params() {
        Some(params) if gamma => {
            let inputs = MilpInputs {
                net,
                cost,
                x0: &meas.x,
                demand: forecast,
                turning: &state.turning,
                g_prev: &state.g_prev,
            };
            let t0 = Instant::now();
            let inst = build_milp(&inputs, &params)?;
            match backend_solve(&inst.model, &cfg.backend, cfg.limits) {
                Ok(sol) if sol.status.has_solution() => {
                    let mut plan = inst.plan_steps(&sol.x).swap_remove(0);
                    plan.g = repair_greens(net, &plan.g, cfg.cycle, cfg.g_min);
                    repair_operational(net, &mut plan);
                    let routing = extract_cav_turning(net, cost, &plan.big_g, cfg.epsilon);
                    let s_model = (0..net.num_links()).map(|z| Some(inst.saturation(&sol.x, z, 0))).collect();
                    let diag = Diagnostics {
                        solved: true,
                        status: sol.status.as_str().into(),
                        objective: Some(sol.objective),
                        bound: Some(sol.best_bound),
                        gap: Some(sol.gap),
                        nodes: sol.nodes,
                        seconds: t0.elapsed().as_secs_f64(),
                        greens: plan.g.clone(),
                        ..base
                    };
                    StepOutput { plan, routing, s_model, diag }
                }
                Ok(sol) => {
                    let diag = Diagnostics {
                        status: sol.status.as_str().into(),
                        nodes: sol.nodes,
                        seconds: t0.elapsed().as_secs_f64(),
                        fault: Some(format!("solver returned {}", sol.status.as_str())),
                        ..base
                    };
                    fallback(net, cost, cfg, diag)
                }
                Err(e) => {
                    let diag = Diagnostics {
                        status: "error".into(),
                        seconds: t0.elapsed().as_secs_f64(),
                        fault: Some(e.to_string()),
                        ..base
                    };
                    fallback(net, cost, cfg, diag)
                }
            }
        }
        _ => fallback(net, cost, cfg, base),
    };
    state.g_prev = out.plan.g.clone();
    state.step += 1;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_grid, floyd_warshall};

    #[test]
    fn smoothing_values() {
        assert!((smooth_turning(0.5, 1.0, 0.9) - 0.95).abs() < 1e-15);
        assert_eq!(smooth_turning(0.3, 0.3, 0.9), 0.3);
        assert_eq!(smooth_turning(0.2, 0.7, 1.0), 0.7);
    }

    #[test]
    fn hysteresis_rule() {
        assert!(activation_update(25.0, false, 20.0, 10.0).unwrap());
        assert!(activation_update(15.0, true, 20.0, 10.0).unwrap());
        assert!(!activation_update(15.0, false, 20.0, 10.0).unwrap());
        assert!(!activation_update(5.0, true, 20.0, 10.0).unwrap());
        assert!(activation_update(5.0, true, 10.0, 20.0).is_err());
    }

    #[test]
    fn repaired_greens_sum_exactly() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let g = vec![vec![61.234_567_89, 48.765_432_1 + 3e-7]; 4];
        let r = repair_greens(&net, &g, 120.0, 30.0);
        for row in &r {
            assert_eq!(row[0] + row[1], 110.0);
            assert_eq!(row[1] + row[0], 110.0);
            assert!((row[0] - 61.234_567_89).abs() < 1e-6);
        }
        let low = repair_greens(&net, &vec![vec![29.999_999_9, 80.000_000_1]; 4], 120.0, 30.0);
        assert!(low.iter().all(|r| r[0] == 30.0 && r[1] == 80.0));
    }

    #[test]
    fn routing_splits_and_falls_back() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let cost = floyd_warshall(&net);
        let nc = net.num_commodities();
        // Link 1 enters node 1, which feeds links 3 and 4; commodity toward exit 10.
        let c = net.commodity_of(9).unwrap();
        let mut g: Movement = (0..net.num_links()).map(|z| vec![vec![0.0; nc]; net.successors(z).len()]).collect();
        let adm = admissible_successors(&net, &cost, 0, 9, 0.0);
        assert_eq!(adm, vec![3]);
        g[0][1][c] = 55.0;
        let t = extract_cav_turning(&net, &cost, &g, 0.0);
        assert_eq!(t[0][1][c], 1.0);
        assert_eq!(t[0][0][c], 0.0);
        let t0 = shortest_routing(&net, &cost, 0.0);
        assert_eq!(t0[0][1][c], 1.0);
        for z in 0..net.num_links() {
            for cc in 1..nc {
                let d = net.destination(cc);
                let sum: f64 = t0[z].iter().map(|r| r[cc]).sum();
                if d != z && !net.successors(z).is_empty() && cost.is_reachable(z, d) {
                    assert_eq!(sum, 1.0, "link {} commodity {cc}", z + 1);
                }
            }
        }
    }

    #[test]
    fn rows_stay_stochastic_after_smoothing() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let a = HdvTurning::uniform(&net, 0.0);
        let mut b = HdvTurning::uniform(&net, 0.1);
        b.t[0] = vec![0.7, 0.2];
        let s = smooth_rows(&a, &b, 0.9);
        s.validate(&net).unwrap();
        assert!((s.t[0][0] - (0.9 * 0.7 + 0.1 * 0.5)).abs() < 1e-12);
    }
}

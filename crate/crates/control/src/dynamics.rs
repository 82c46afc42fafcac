//! Store-and-forward queue dynamics. Units are vehicles and seconds.
//!
//! Commodity 0 is the aggregate HDV queue; commodity `c >= 1` is the CAV
//! queue bound for destination link `net.destination(c)`.

use serde::{Deserialize, Serialize};

use crate::network::{admissible_successors, CostMatrix, LinkId, Network};
use crate::ControlError;

/// `[z][c]` array of per-link, per-commodity values.
pub type LinkCommodity = Vec<Vec<f64>>;
/// `[z][k][c]` over the successors `net.successors(z)[k]`.
pub type Movement = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadwayParams {
    pub h_cav: f64,
    pub h_hdv: f64,
}

impl Default for HeadwayParams {
    fn default() -> Self {
        HeadwayParams { h_cav: 1.8, h_hdv: 2.7 }
    }
}

impl HeadwayParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.h_cav > 0.0 && self.h_cav <= self.h_hdv) {
            return Err(ControlError::Parameter(format!(
                "headways must satisfy 0 < h_cav <= h_hdv, got {} and {}",
                self.h_cav, self.h_hdv
            )));
        }
        Ok(())
    }

    pub fn s_min(&self) -> f64 {
        1.0 / self.h_hdv
    }

    pub fn s_max(&self) -> f64 {
        1.0 / self.h_cav
    }
}

/// Saturation flow (veh/s) of a queue with the given composition.
pub fn saturation_rate(x_cav: f64, x_hdv: f64, h: HeadwayParams) -> f64 {
    let total = x_cav + x_hdv;
    if total <= 0.0 {
        return h.s_min();
    }
    let phi = h.h_cav * x_cav + h.h_hdv * x_hdv;
    (total / phi).clamp(h.s_min(), h.s_max())
}

/// CAV share of a queue; 0 for an empty queue.
pub fn autonomy_level(x_cav: f64, total: f64) -> f64 {
    if total <= 0.0 {
        0.0
    } else {
        x_cav / total
    }
}

pub fn saturation_from_autonomy(theta: f64, h: HeadwayParams) -> f64 {
    1.0 / (theta * h.h_cav + (1.0 - theta) * h.h_hdv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// `x[z][c]` in vehicles.
    pub x: LinkCommodity,
    pub step: usize,
}

impl QueueState {
    pub fn zeros(net: &Network) -> Self {
        QueueState {
            x: vec![vec![0.0; net.num_commodities()]; net.num_links()],
            step: 0,
        }
    }

    pub fn total(&self, z: LinkId) -> f64 {
        self.x[z].iter().sum()
    }

    pub fn cav(&self, z: LinkId) -> f64 {
        self.x[z][1..].iter().sum()
    }

    pub fn hdv(&self, z: LinkId) -> f64 {
        self.x[z][0]
    }

    pub fn network_total(&self) -> f64 {
        self.x.iter().flatten().sum()
    }

    pub fn max_link_total(&self) -> f64 {
        (0..self.x.len()).map(|z| self.total(z)).fold(0.0, f64::max)
    }

    pub fn check_shape(&self, net: &Network) -> Result<(), ControlError> {
        if self.x.len() != net.num_links() || self.x.iter().any(|r| r.len() != net.num_commodities()) {
            return Err(ControlError::Dimension(format!(
                "queue state must be {} links x {} commodities",
                net.num_links(),
                net.num_commodities()
            )));
        }
        Ok(())
    }
}

/// Flows (veh/s) for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet {
    pub f: Movement,
    pub p: LinkCommodity,
    pub q: LinkCommodity,
    pub b: LinkCommodity,
    pub r: LinkCommodity,
}

impl FlowSet {
    pub fn zeros(net: &Network) -> Self {
        let nc = net.num_commodities();
        let lc = vec![vec![0.0; nc]; net.num_links()];
        FlowSet {
            f: (0..net.num_links()).map(|z| vec![vec![0.0; nc]; net.successors(z).len()]).collect(),
            p: lc.clone(),
            q: lc.clone(),
            b: lc.clone(),
            r: lc,
        }
    }

    /// Vehicles leaving the network per second: destination arrivals plus HDV exits.
    pub fn network_outflow(&self, net: &Network) -> f64 {
        let arrivals: f64 = (1..net.num_commodities()).map(|c| self.q[net.destination(c)][c]).sum();
        arrivals + self.r.iter().map(|r| r[0]).sum::<f64>()
    }
}

/// HDV turning rows and exit shares; each row of `t` plus `e` sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdvTurning {
    /// `t[z][k]` over `net.successors(z)`.
    pub t: Vec<Vec<f64>>,
    pub e: Vec<f64>,
}

impl HdvTurning {
    /// Uniform turning; exit links drain fully, interior links lose `exit_share`.
    pub fn uniform(net: &Network, exit_share: f64) -> Self {
        let mut t = Vec::with_capacity(net.num_links());
        let mut e = Vec::with_capacity(net.num_links());
        for z in 0..net.num_links() {
            let n = net.successors(z).len();
            if n == 0 {
                t.push(Vec::new());
                e.push(1.0);
            } else {
                t.push(vec![(1.0 - exit_share) / n as f64; n]);
                e.push(exit_share);
            }
        }
        HdvTurning { t, e }
    }

    pub fn validate(&self, net: &Network) -> Result<(), ControlError> {
        if self.t.len() != net.num_links() || self.e.len() != net.num_links() {
            return Err(ControlError::Dimension("turning table must cover every link".into()));
        }
        for z in 0..net.num_links() {
            if self.t[z].len() != net.successors(z).len() {
                return Err(ControlError::Dimension(format!("turning row of link {} has wrong length", z + 1)));
            }
            if self.t[z].iter().chain(std::iter::once(&self.e[z])).any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(ControlError::Parameter(format!("turning row of link {} leaves [0, 1]", z + 1)));
            }
            let sum: f64 = self.t[z].iter().sum::<f64>() + self.e[z];
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ControlError::Parameter(format!(
                    "turning row of link {} plus exit share sums to {sum}",
                    z + 1
                )));
            }
        }
        Ok(())
    }

    /// Split of the HDV transport outflow, t / (1 - e); zeros if nothing turns.
    pub fn split(&self, z: LinkId) -> Vec<f64> {
        let s: f64 = self.t[z].iter().sum();
        if s <= 0.0 {
            vec![0.0; self.t[z].len()]
        } else {
            self.t[z].iter().map(|v| v / s).collect()
        }
    }
}

/// Controls applied during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    /// `g[j][i]`, seconds of green per phase.
    pub g: Vec<Vec<f64>>,
    /// Operational greens `G[z][k][c]`, seconds; empty when the plan has none.
    #[serde(default)]
    pub big_g: Movement,
}

impl PlanStep {
    /// Right-of-way green available to link z.
    pub fn link_green(&self, net: &Network, z: LinkId) -> f64 {
        match net.links[z].downstream {
            Some(j) => net.links[z].row_phases.iter().map(|&i| self.g[j][i]).sum(),
            None => 0.0,
        }
    }
}

fn check_demand(net: &Network, demand: &LinkCommodity) -> Result<(), ControlError> {
    if demand.len() != net.num_links() || demand.iter().any(|r| r.len() != net.num_commodities()) {
        return Err(ControlError::Dimension("demand must be links x commodities".into()));
    }
    Ok(())
}

/// Outflows following the operational greens: CAV commodity flow toward m is
/// `G * s / C` on admissible successors; HDV discharge is `s * sum_m G(z,m,0) / C`
/// split by the HDV turning rows. Flows are then capped (see `cap_and_close`).
#[allow(clippy::too_many_arguments)]
pub fn transport_flows(
    state: &QueueState,
    plan: &PlanStep,
    turning: &HdvTurning,
    cost: &CostMatrix,
    net: &Network,
    h: HeadwayParams,
    cycle: f64,
    demand: &LinkCommodity,
    epsilon: f64,
) -> Result<FlowSet, ControlError> {
    state.check_shape(net)?;
    check_demand(net, demand)?;
    if plan.big_g.len() != net.num_links() {
        return Err(ControlError::Dimension("plan has no operational greens for every link".into()));
    }
    let nc = net.num_commodities();
    let mut fl = FlowSet::zeros(net);
    for z in 0..net.num_links() {
        let succ = net.successors(z);
        if succ.is_empty() {
            continue;
        }
        if plan.big_g[z].len() != succ.len() || plan.big_g[z].iter().any(|r| r.len() != nc) {
            return Err(ControlError::Dimension(format!("operational greens of link {} have wrong shape", z + 1)));
        }
        let s = saturation_rate(state.cav(z), state.hdv(z), h);
        for c in 1..nc {
            let d = net.destination(c);
            if d == z {
                continue;
            }
            let adm = admissible_successors(net, cost, z, d, epsilon);
            for (k, m) in succ.iter().enumerate() {
                if adm.contains(m) {
                    fl.f[z][k][c] = plan.big_g[z][k][c] * s / cycle;
                }
            }
        }
        let q0: f64 = plan.big_g[z].iter().map(|g| g[0]).sum::<f64>() * s / cycle;
        for (k, t) in turning.split(z).into_iter().enumerate() {
            fl.f[z][k][0] = t * q0;
        }
    }
    cap_and_close(state, &mut fl, turning, net, cycle, demand);
    Ok(fl)
}

/// Outflows of a signal plan with a fixed per-link discharge rate `sat` (veh/s).
/// Each link discharges up to `sat * green` vehicles per cycle, shared across
/// its commodities in proportion to their queued vehicles; CAVs then follow
/// `routing[z][k][c]` and HDVs the turning rows.
#[allow(clippy::too_many_arguments)]
pub fn signal_flows(
    state: &QueueState,
    g: &PlanStep,
    routing: &Movement,
    turning: &HdvTurning,
    sat: &[f64],
    net: &Network,
    cycle: f64,
    demand: &LinkCommodity,
) -> Result<FlowSet, ControlError> {
    state.check_shape(net)?;
    check_demand(net, demand)?;
    if sat.len() != net.num_links() || routing.len() != net.num_links() {
        return Err(ControlError::Dimension("saturation and routing must cover every link".into()));
    }
    let nc = net.num_commodities();
    let mut fl = FlowSet::zeros(net);
    for z in 0..net.num_links() {
        let succ = net.successors(z);
        if succ.is_empty() {
            continue;
        }
        let split0 = turning.split(z);
        let mut movable = vec![0.0; nc];
        for c in 0..nc {
            let routed = if c == 0 {
                split0.iter().sum::<f64>()
            } else if net.destination(c) == z {
                0.0
            } else {
                routing[z].iter().map(|r| r[c]).sum::<f64>()
            };
            if routed > 0.0 {
                movable[c] = if c == 0 { (1.0 - turning.e[z]) * state.x[z][0] } else { state.x[z][c] };
            }
        }
        let total: f64 = movable.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let discharge = (sat[z] * g.link_green(net, z)).min(total);
        for c in 0..nc {
            if movable[c] <= 0.0 {
                continue;
            }
            let out = discharge * movable[c] / total / cycle;
            for k in 0..succ.len() {
                let share = if c == 0 { split0[k] } else { routing[z][k][c] };
                fl.f[z][k][c] = out * share;
            }
        }
    }
    cap_and_close(state, &mut fl, turning, net, cycle, demand);
    Ok(fl)
}

/// Caps raw transport flows so no queue is overdrawn and no link exceeds its
/// storage, then fills in p, q, b and r.
///
/// Outflow of each (z, c) is limited to what is queued. Inflow into a link
/// that would overflow is scaled down proportionally (transfers and external
/// demand alike); since that lowers upstream outflows, the scaling repeats
/// until stable. If it does not settle, every link's inflow is bounded by its
/// free space, which is always safe.
fn cap_and_close(
    state: &QueueState,
    fl: &mut FlowSet,
    turning: &HdvTurning,
    net: &Network,
    cycle: f64,
    demand: &LinkCommodity,
) {
    let nz = net.num_links();
    let nc = net.num_commodities();
    for z in 0..nz {
        for c in 0..nc {
            let avail = if c == 0 { (1.0 - turning.e[z]) * state.x[z][0] } else { state.x[z][c] };
            let want: f64 = fl.f[z].iter().map(|r| r[c]).sum::<f64>() * cycle;
            if want > avail {
                let k = if want > 0.0 { avail.max(0.0) / want } else { 0.0 };
                for r in fl.f[z].iter_mut() {
                    r[c] *= k;
                }
            }
        }
        fl.b[z].clone_from(&demand[z]);
    }

    // Incoming-transfer index: (from link, successor slot) per link.
    let mut feeders: Vec<Vec<(LinkId, usize)>> = vec![Vec::new(); nz];
    for z in 0..nz {
        for (k, &m) in net.successors(z).iter().enumerate() {
            feeders[m].push((z, k));
        }
    }
    let outflow = |fl: &FlowSet, z: LinkId| -> f64 {
        let mut out: f64 = fl.f[z].iter().flatten().sum();
        out += turning.e[z] * state.x[z][0] / cycle;
        if let Some(c) = net.commodity_of(z) {
            out += state.x[z][c] / cycle;
        }
        out
    };
    let inflow = |fl: &FlowSet, m: LinkId| -> f64 {
        feeders[m].iter().map(|&(z, k)| fl.f[z][k].iter().sum::<f64>()).sum::<f64>() + fl.b[m].iter().sum::<f64>()
    };
    let scale_in = |fl: &mut FlowSet, m: LinkId, k: f64| {
        for &(z, s) in &feeders[m] {
            for v in fl.f[z][s].iter_mut() {
                *v *= k;
            }
        }
        for v in fl.b[m].iter_mut() {
            *v *= k;
        }
    };

    let mut settled = false;
    for _ in 0..200 {
        let mut changed = false;
        for m in 0..nz {
            let inc = inflow(fl, m) * cycle;
            if inc <= 0.0 {
                continue;
            }
            let room = net.links[m].x_max - state.total(m) + outflow(fl, m) * cycle;
            if inc > room + 1e-12 {
                scale_in(fl, m, (room / inc).clamp(0.0, 1.0));
                changed = true;
            }
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        for m in 0..nz {
            let inc = inflow(fl, m) * cycle;
            let room = (net.links[m].x_max - state.total(m)).max(0.0);
            if inc > room {
                scale_in(fl, m, room / inc);
            }
        }
    }

    for z in 0..nz {
        for c in 0..nc {
            fl.q[z][c] = fl.f[z].iter().map(|r| r[c]).sum();
            fl.r[z][c] = 0.0;
        }
        fl.r[z][0] = turning.e[z] * state.x[z][0] / cycle;
        if let Some(c) = net.commodity_of(z) {
            fl.q[z][c] = state.x[z][c] / cycle;
        }
        for c in 0..nc {
            fl.p[z][c] = 0.0;
        }
    }
    for z in 0..nz {
        for (k, &m) in net.successors(z).iter().enumerate() {
            for c in 0..nc {
                fl.p[m][c] += fl.f[z][k][c];
            }
        }
    }
}

/// Advances queues by one cycle: x' = x + C (p - q + b - r).
pub fn step(state: &QueueState, flows: &FlowSet, cycle: f64) -> Result<QueueState, ControlError> {
    let mut next = state.clone();
    next.step += 1;
    for (z, row) in next.x.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let nv = *v + cycle * (flows.p[z][c] - flows.q[z][c] + flows.b[z][c] - flows.r[z][c]);
            if nv < -1e-9 {
                return Err(ControlError::Conservation { link: z + 1, commodity: c, value: nv });
            }
            *v = nv.max(0.0);
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_grid, floyd_warshall, Link, Node};

    const H: HeadwayParams = HeadwayParams { h_cav: 1.8, h_hdv: 2.7 };

    #[test]
    fn saturation_endpoints() {
        assert!((saturation_rate(0.0, 10.0, H) * 3600.0 - 1333.333_333).abs() < 1e-3);
        assert!((saturation_rate(10.0, 0.0, H) * 3600.0 - 2000.0).abs() < 1e-9);
        assert!((saturation_rate(5.0, 5.0, H) * 3600.0 - 1600.0).abs() < 1e-9);
        assert_eq!(saturation_rate(0.0, 0.0, H), 1.0 / 2.7);
    }

    #[test]
    fn autonomy_composition() {
        let theta = autonomy_level(3.0, 10.0);
        assert_eq!(theta, 0.3);
        let direct = 1.0 / (0.3 * 1.8 + 0.7 * 2.7);
        assert!((saturation_from_autonomy(theta, H) - direct).abs() < 1e-15);
        assert!((saturation_rate(3.0, 7.0, H) - direct).abs() < 1e-15);
        assert_eq!(autonomy_level(0.0, 0.0), 0.0);
    }

    #[test]
    fn saturation_monotone_in_cav_share() {
        let mut prev = 0.0;
        for i in 0..=20 {
            let xc = i as f64;
            let s = saturation_rate(xc, 20.0 - xc, H);
            assert!(s >= prev);
            assert!((H.s_min()..=H.s_max()).contains(&s));
            prev = s;
        }
    }

    fn chain() -> Network {
        // entry a -> J1 -> b -> J2 -> c (exit)
        let nodes = vec![Node { phases: 1, lost_time: 0.0 }; 2];
        let mk = |u, d| Link {
            length: 100.0,
            x_max: 40.0,
            upstream: u,
            downstream: d,
            row_phases: if d.is_some() { vec![0] } else { vec![] },
            arc_cost: None,
        };
        Network::new(nodes, vec![mk(None, Some(0)), mk(Some(0), Some(1)), mk(Some(1), None)], vec![]).unwrap()
    }

    #[test]
    fn destination_arrival_rate() {
        let net = chain();
        let f = floyd_warshall(&net);
        let mut st = QueueState::zeros(&net);
        st.x[2][1] = 12.0;
        let big_g = vec![vec![vec![0.0; 2]], vec![vec![0.0; 2]], vec![]];
        let plan = PlanStep { g: vec![vec![60.0]; 2], big_g };
        let turning = HdvTurning::uniform(&net, 0.0);
        let fl = transport_flows(&st, &plan, &turning, &f, &net, H, 120.0, &vec![vec![0.0; 2]; 3], 0.0).unwrap();
        assert!((fl.q[2][1] - 0.1).abs() < 1e-15);
        let next = step(&st, &fl, 120.0).unwrap();
        assert_eq!(next.x[2][1], 0.0);
    }

    #[test]
    fn empty_state_no_flows() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let f = floyd_warshall(&net);
        let st = QueueState::zeros(&net);
        let nc = net.num_commodities();
        let big_g = (0..12).map(|z| vec![vec![30.0; nc]; net.successors(z).len()]).collect();
        let plan = PlanStep { g: vec![vec![55.0, 55.0]; 4], big_g };
        let turning = HdvTurning::uniform(&net, 0.0);
        let fl = transport_flows(&st, &plan, &turning, &f, &net, H, 120.0, &vec![vec![0.0; nc]; 12], 0.0).unwrap();
        assert!(fl.f.iter().flatten().flatten().all(|&v| v == 0.0));
        assert!(fl.q.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn demand_adds_vehicles() {
        let net = chain();
        let st = QueueState::zeros(&net);
        let mut fl = FlowSet::zeros(&net);
        fl.b[0][1] = 0.05;
        let next = step(&st, &fl, 120.0).unwrap();
        assert!((next.x[0][1] - 6.0).abs() < 1e-12);
        let same = step(&st, &FlowSet::zeros(&net), 120.0).unwrap();
        assert_eq!(same.x, st.x);
    }

    #[test]
    fn overdraw_is_reported() {
        let net = chain();
        let st = QueueState::zeros(&net);
        let mut fl = FlowSet::zeros(&net);
        fl.q[1][0] = 1.0;
        assert!(matches!(step(&st, &fl, 120.0), Err(ControlError::Conservation { .. })));
    }

    #[test]
    fn turning_split_normalizes_exit_share() {
        let net = build_grid(2, 2, 200.0, 40.0, 10.0).unwrap();
        let t = HdvTurning::uniform(&net, 0.2);
        t.validate(&net).unwrap();
        assert_eq!(t.split(0), vec![0.5, 0.5]);
        assert_eq!(t.e[4], 1.0);
    }

    #[test]
    fn spillback_holds_upstream() {
        let net = chain();
        let mut st = QueueState::zeros(&net);
        st.x[0][0] = 30.0;
        st.x[1][0] = 38.0;
        let turning = HdvTurning::uniform(&net, 0.0);
        let routing: Movement = (0..3).map(|z| vec![vec![0.0; 2]; net.successors(z).len()]).collect();
        // Link b is red, so only 2 vehicles of room exist downstream of a.
        let g = PlanStep { g: vec![vec![100.0], vec![0.0]], big_g: vec![] };
        let sat = vec![0.5; 3];
        let fl = signal_flows(&st, &g, &routing, &turning, &sat, &net, 120.0, &vec![vec![0.0; 2]; 3]).unwrap();
        let next = step(&st, &fl, 120.0).unwrap();
        assert!((next.total(1) - 40.0).abs() < 1e-9);
        assert!((next.total(0) - 28.0).abs() < 1e-9);
    }
}

//! Finite-horizon MILP for the mixed-autonomy network.
//!
//! The bilinear saturation law X = s * phi is replaced by a piecewise
//! convex-hull relaxation with one segment binary per envelope, transport flows
//! f = G * s / C by McCormick envelopes, and the quadratic objective terms by
//! convex piecewise-linear interpolants.

use serde::{Deserialize, Serialize};
use sfm_milp::{Model, Sense, VarId};

use crate::dynamics::{HdvTurning, HeadwayParams, LinkCommodity, Movement, PlanStep, QueueState};
use crate::network::{admissible_successors, CostMatrix, LinkId, Network};
use crate::ControlError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { w1: 1.0, w2: 10.0, w3: 100.0, w4: 0.001 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), ControlError> {
        if [self.w1, self.w2, self.w3, self.w4].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(ControlError::Parameter(format!("objective weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Uniform partition of the saturation range into N segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionScheme {
    pub n: usize,
    pub beta: f64,
    /// N + 1 breakpoints from 1/h_hdv to 1/h_cav.
    pub lambda: Vec<f64>,
}

pub fn make_partition(n: usize, h: HeadwayParams) -> Result<PartitionScheme, ControlError> {
    if n == 0 {
        return Err(ControlError::Parameter("envelope count must be at least 1".into()));
    }
    h.validate()?;
    let beta = (h.s_max() - h.s_min()) / n as f64;
    let mut lambda: Vec<f64> = (0..=n).map(|i| h.s_min() + i as f64 * beta).collect();
    lambda[n] = h.s_max();
    Ok(PartitionScheme { n, beta, lambda })
}

/// How the saturation rate enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SatMode {
    /// Composition-dependent rate, relaxed with `envelopes` segments.
    Dynamic { envelopes: usize },
    /// Fixed rate in veh/s; flows are then exactly linear in G.
    Constant { s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PwlForm {
    /// x = lo + sum of segment increments, one linking row per term.
    #[default]
    Incremental,
    /// t >= chord of each segment, one row per segment.
    Epigraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpParams {
    pub horizon: usize,
    pub mode: SatMode,
    pub cycle: f64,
    pub g_min: f64,
    pub weights: ObjectiveWeights,
    pub headways: HeadwayParams,
    pub pwl_segments: usize,
    pub pwl_form: PwlForm,
    pub epsilon: f64,
}

impl Default for MilpParams {
    fn default() -> Self {
        MilpParams {
            horizon: 2,
            mode: SatMode::Dynamic { envelopes: 5 },
            cycle: 120.0,
            g_min: 30.0,
            weights: ObjectiveWeights::default(),
            headways: HeadwayParams::default(),
            pwl_segments: 8,
            pwl_form: PwlForm::Incremental,
            epsilon: 0.0,
        }
    }
}

pub struct MilpInputs<'a> {
    pub net: &'a Network,
    pub cost: &'a CostMatrix,
    pub x0: &'a QueueState,
    /// Demand per step (veh/s), `[k][z][c]`; the last entry is held if shorter than K.
    pub demand: &'a [LinkCommodity],
    pub turning: &'a HdvTurning,
    /// Greens applied in the previous cycle, `[j][i]`.
    pub g_prev: &'a [Vec<f64>],
}

/// Variables taking part in one link-step saturation hull.
#[derive(Debug, Clone)]
pub struct HullVars {
    pub x_cav: Vec<VarId>,
    pub x_hdv: VarId,
    pub total: VarId,
    pub s: VarId,
    pub phi: VarId,
}

#[derive(Debug, Clone)]
pub struct HullHandle {
    pub omega: Vec<VarId>,
    pub ds: VarId,
    pub dphi: Vec<VarId>,
    pub dx: VarId,
}

/// Adds the segment binaries, the decomposition of s, phi and X, and the
/// envelope rows of the bilinear X = s * phi. `phi` ranges over [0, phi_max];
/// s must already carry bounds [1/h_hdv, 1/h_cav].
pub fn add_saturation_hull(
    model: &mut Model,
    hv: &HullVars,
    scheme: &PartitionScheme,
    h: HeadwayParams,
    phi_max: f64,
    tag: &str,
) -> HullHandle {
    let n = scheme.n;
    let beta = scheme.beta;
    let span = phi_max;
    {
        let phi = &mut model.vars[hv.phi.0];
        phi.lb = 0.0;
        phi.ub = phi_max;
    }
    let omega: Vec<VarId> = (1..=n).map(|i| model.add_binary(format!("w_{tag}_{i}"))).collect();
    let ds = model.add_var(format!("ds_{tag}"), 0.0, beta);
    let dphi: Vec<VarId> = (1..=n).map(|i| model.add_var(format!("dp_{tag}_{i}"), 0.0, phi_max)).collect();
    let dx = model.add_var(format!("dx_{tag}"), 0.0, beta * phi_max);

    let mut row: Vec<(VarId, f64)> = vec![(hv.phi, 1.0), (hv.x_hdv, -h.h_hdv)];
    row.extend(hv.x_cav.iter().map(|&v| (v, -h.h_cav)));
    model.add_row(format!("phidef_{tag}"), &row, Sense::Eq, 0.0);

    let mut row = vec![(hv.s, 1.0), (ds, -1.0)];
    row.extend(omega.iter().enumerate().map(|(i, &w)| (w, -beta * i as f64)));
    model.add_row(format!("sdec_{tag}"), &row, Sense::Eq, scheme.lambda[0]);

    let row: Vec<(VarId, f64)> = omega.iter().map(|&w| (w, 1.0)).collect();
    model.add_row(format!("wsum_{tag}"), &row, Sense::Eq, 1.0);

    let mut row = vec![(hv.phi, 1.0)];
    row.extend(dphi.iter().map(|&v| (v, -1.0)));
    model.add_row(format!("pdec_{tag}"), &row, Sense::Eq, 0.0);

    for i in 0..n {
        model.add_row(format!("pseg_{tag}_{}", i + 1), &[(dphi[i], 1.0), (omega[i], -span)], Sense::Le, 0.0);
    }
    model.add_row(format!("dxa_{tag}"), &[(dx, 1.0), (ds, -span)], Sense::Le, 0.0);
    model.add_row(format!("dxb_{tag}"), &[(dx, 1.0), (hv.phi, -beta)], Sense::Le, 0.0);
    model.add_row(
        format!("dxc_{tag}"),
        &[(dx, 1.0), (ds, -span), (hv.phi, -beta)],
        Sense::Ge,
        -beta * phi_max,
    );

    let mut row = vec![(hv.total, 1.0), (hv.phi, -scheme.lambda[0]), (dx, -1.0)];
    row.extend(dphi.iter().enumerate().map(|(i, &v)| (v, -beta * i as f64)));
    model.add_row(format!("xrec_{tag}"), &row, Sense::Eq, 0.0);

    HullHandle { omega, ds, dphi, dx }
}

/// The four McCormick rows of f = G * s / C with G in [g_lo, g_hi] and s in
/// [1/h_hdv, 1/h_cav].
#[allow(clippy::too_many_arguments)]
pub fn add_mccormick_transport(
    model: &mut Model,
    f: VarId,
    g: VarId,
    s: VarId,
    g_lo: f64,
    g_hi: f64,
    h: HeadwayParams,
    cycle: f64,
    tag: &str,
) -> Result<(), ControlError> {
    if g_lo > g_hi {
        return Err(ControlError::Parameter(format!("green bounds out of order: {g_lo} > {g_hi}")));
    }
    let (s_lo, s_hi) = (h.s_min(), h.s_max());
    // C f >= g_lo s + s_lo G - g_lo s_lo
    model.add_row(format!("mc1_{tag}"), &[(f, cycle), (s, -g_lo), (g, -s_lo)], Sense::Ge, -g_lo * s_lo);
    // C f >= g_hi s + s_hi G - g_hi s_hi
    model.add_row(format!("mc2_{tag}"), &[(f, cycle), (s, -g_hi), (g, -s_hi)], Sense::Ge, -g_hi * s_hi);
    // C f <= g_hi s + s_lo G - g_hi s_lo
    model.add_row(format!("mc3_{tag}"), &[(f, cycle), (s, -g_hi), (g, -s_lo)], Sense::Le, -g_hi * s_lo);
    // C f <= g_lo s + s_hi G - g_lo s_hi
    model.add_row(format!("mc4_{tag}"), &[(f, cycle), (s, -g_lo), (g, -s_hi)], Sense::Le, -g_lo * s_hi);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PwlHandle {
    pub breakpoints: Vec<f64>,
    pub coef: f64,
    pub vars: Vec<VarId>,
}

impl PwlHandle {
    /// Interpolant of v^2 at v.
    pub fn eval(&self, v: f64) -> f64 {
        pwl_square(&self.breakpoints, v)
    }
}

/// Linear interpolation of v^2 on the given breakpoints.
pub fn pwl_square(bp: &[f64], v: f64) -> f64 {
    let last = bp.len() - 1;
    let i = bp.windows(2).position(|w| v <= w[1]).unwrap_or(last - 1);
    let (a, b) = (bp[i], bp[i + 1]);
    (a + b) * v - a * b
}

/// Adds `coef * (expr + constant)^2` to the objective as a convex piecewise
/// linear interpolant with `segments` uniform pieces over [lo, hi].
#[allow(clippy::too_many_arguments)]
pub fn add_pwl_quadratic(
    model: &mut Model,
    expr: &[(VarId, f64)],
    constant: f64,
    lo: f64,
    hi: f64,
    coef: f64,
    segments: usize,
    form: PwlForm,
    tag: &str,
) -> Result<PwlHandle, ControlError> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(ControlError::Parameter(format!("quadratic term {tag} needs a finite range, got [{lo}, {hi}]")));
    }
    if segments == 0 {
        return Err(ControlError::Parameter("at least one linearization segment is required".into()));
    }
    let w = (hi - lo) / segments as f64;
    let mut bp: Vec<f64> = (0..=segments).map(|i| lo + w * i as f64).collect();
    bp[segments] = hi;
    let mut vars = Vec::with_capacity(segments);
    match form {
        PwlForm::Incremental => {
            let mut row: Vec<(VarId, f64)> = expr.to_vec();
            for i in 0..segments {
                let d = model.add_var(format!("pw_{tag}_{i}"), 0.0, bp[i + 1] - bp[i]);
                model.add_objective(d, coef * (bp[i] + bp[i + 1]));
                row.push((d, -1.0));
                vars.push(d);
            }
            model.add_row(format!("pwl_{tag}"), &row, Sense::Eq, lo - constant);
            model.obj_constant += coef * lo * lo;
        }
        PwlForm::Epigraph => {
            let t = model.add_var(format!("pt_{tag}"), 0.0, f64::INFINITY);
            model.add_objective(t, coef);
            for i in 0..segments {
                let slope = bp[i] + bp[i + 1];
                let mut row = vec![(t, 1.0)];
                row.extend(expr.iter().map(|&(v, a)| (v, -slope * a)));
                model.add_row(format!("pwl_{tag}_{i}"), &row, Sense::Ge, -bp[i] * bp[i + 1] + slope * constant);
            }
            vars.push(t);
        }
    }
    Ok(PwlHandle { breakpoints: bp, coef, vars })
}

/// Variable lookup for a built model. Indices: link z, successor slot, commodity c, step k.
#[derive(Debug, Clone)]
pub struct VarIndex {
    /// `[z][c][k]`, k = 0..=K; `None` where the commodity cannot be present.
    pub x: Vec<Vec<Vec<Option<VarId>>>>,
    /// `[z][k]`, k = 0..=K.
    pub total: Vec<Vec<VarId>>,
    /// `[j][i][k]`, k = 0..K.
    pub g: Vec<Vec<Vec<VarId>>>,
    /// `[z][slot][c][k]`
    pub big_g: Vec<Vec<Vec<Vec<Option<VarId>>>>>,
    pub f: Vec<Vec<Vec<Vec<Option<VarId>>>>>,
    /// HDV transport outflow `[z][k]`.
    pub q0: Vec<Vec<Option<VarId>>>,
    /// `[z][k]`, dynamic mode only.
    pub s: Vec<Vec<Option<VarId>>>,
    pub hulls: Vec<Vec<Option<HullHandle>>>,
}

#[derive(Debug, Clone)]
pub struct MilpInstance {
    pub model: Model,
    pub index: VarIndex,
    pub params: MilpParams,
    /// `active[z][c]`: commodity c can occupy link z within the horizon.
    pub active: Vec<Vec<bool>>,
}

impl MilpInstance {
    pub fn num_binaries(&self) -> usize {
        self.model.vars.iter().filter(|v| v.binary).count()
    }

    /// Greens and operational greens of every horizon step.
    pub fn plan_steps(&self, x: &[f64]) -> Vec<PlanStep> {
        (0..self.params.horizon)
            .map(|k| {
                let g = self.index.g.iter().map(|ph| ph.iter().map(|v| x[v[k].0]).collect()).collect();
                let big_g: Movement = self
                    .index
                    .big_g
                    .iter()
                    .map(|slots| {
                        slots
                            .iter()
                            .map(|cs| cs.iter().map(|v| v[k].map_or(0.0, |id| x[id.0].max(0.0))).collect())
                            .collect()
                    })
                    .collect();
                PlanStep { g, big_g }
            })
            .collect()
    }

    /// Modeled saturation rate (veh/s) of link z at step k.
    pub fn saturation(&self, x: &[f64], z: LinkId, k: usize) -> f64 {
        match self.params.mode {
            SatMode::Constant { s } => s,
            SatMode::Dynamic { .. } => self.index.s[z][k].map_or(self.params.headways.s_min(), |v| x[v.0]),
        }
    }

    /// Predicted queue of (z, c) at step k.
    pub fn queue(&self, x: &[f64], z: LinkId, c: usize, k: usize) -> f64 {
        self.index.x[z][c][k].map_or(0.0, |v| x[v.0])
    }
}

/// At the measured step X and phi are data, so only segments whose envelope
/// contains X / phi stay selectable. An empty link keeps every segment.
fn fix_known_segments(m: &mut Model, hull: &HullHandle, scheme: &PartitionScheme, x0: &QueueState, z: LinkId, h: HeadwayParams) {
    let phi = h.h_hdv * x0.hdv(z) + h.h_cav * x0.cav(z);
    if phi <= 0.0 {
        return;
    }
    let r = x0.total(z) / phi;
    let tol = 1e-9 * scheme.beta.max(1e-12);
    let allowed: Vec<bool> = (0..scheme.n)
        .map(|i| r >= scheme.lambda[i] - tol && r <= scheme.lambda[i + 1] + tol)
        .collect();
    let count = allowed.iter().filter(|&&a| a).count();
    if count == 0 {
        return;
    }
    for (i, &w) in hull.omega.iter().enumerate() {
        if !allowed[i] {
            m.vars[w.0].ub = 0.0;
        } else if count == 1 {
            m.vars[w.0].lb = 1.0;
        }
    }
}

/// Which commodities can appear on which links: HDVs everywhere, CAVs on links
/// reachable over admissible moves from where they are queued or injected.
fn active_sets(inp: &MilpInputs, k_steps: usize, epsilon: f64) -> Vec<Vec<bool>> {
    let net = inp.net;
    let nc = net.num_commodities();
    let mut active = vec![vec![false; nc]; net.num_links()];
    for row in active.iter_mut() {
        row[0] = true;
    }
    for c in 1..nc {
        let d = net.destination(c);
        let mut stack: Vec<LinkId> = Vec::new();
        for z in 0..net.num_links() {
            let injected = (0..k_steps).any(|k| demand_at(inp.demand, k)[z][c] > 0.0);
            if inp.x0.x[z][c] > 0.0 || injected {
                stack.push(z);
            }
        }
        while let Some(z) = stack.pop() {
            if active[z][c] {
                continue;
            }
            active[z][c] = true;
            if z == d {
                continue;
            }
            for m in admissible_successors(net, inp.cost, z, d, epsilon) {
                if !active[m][c] {
                    stack.push(m);
                }
            }
        }
    }
    active
}

fn demand_at(demand: &[LinkCommodity], k: usize) -> &LinkCommodity {
    &demand[k.min(demand.len() - 1)]
}

pub fn build_milp(inp: &MilpInputs, p: &MilpParams) -> Result<MilpInstance, ControlError> {
    let net = inp.net;
    let nz = net.num_links();
    let nc = net.num_commodities();
    let kh = p.horizon;
    let h = p.headways;
    let cyc = p.cycle;
    if kh == 0 {
        return Err(ControlError::Parameter("horizon must be at least 1".into()));
    }
    if inp.demand.is_empty() {
        return Err(ControlError::Dimension("demand forecast is empty".into()));
    }
    h.validate()?;
    p.weights.validate()?;
    inp.x0.check_shape(net)?;
    inp.turning.validate(net)?;
    for d in inp.demand {
        if d.len() != nz || d.iter().any(|r| r.len() != nc) {
            return Err(ControlError::Dimension("demand must be links x commodities".into()));
        }
        if d.iter().flatten().any(|&v| v < 0.0) {
            return Err(ControlError::Parameter("demand must be nonnegative".into()));
        }
    }
    if inp.g_prev.len() != net.num_nodes() || (0..net.num_nodes()).any(|j| inp.g_prev[j].len() != net.nodes[j].phases) {
        return Err(ControlError::Dimension("previous greens must be nodes x phases".into()));
    }
    for (j, node) in net.nodes.iter().enumerate() {
        let budget = net.green_budget(j, cyc);
        if node.phases as f64 * p.g_min > budget + 1e-9 {
            return Err(ControlError::InfeasibleBounds(format!(
                "node {}: {} phases x {} s minimum green exceeds the {} s budget",
                j + 1,
                node.phases,
                p.g_min,
                budget
            )));
        }
    }
    let scheme = match p.mode {
        SatMode::Dynamic { envelopes } => Some(make_partition(envelopes, h)?),
        SatMode::Constant { s } => {
            if !(s > 0.0) {
                return Err(ControlError::Parameter(format!("constant saturation rate {s} must be positive")));
            }
            None
        }
    };

    let active = active_sets(inp, kh, p.epsilon);
    let mut m = Model::new("sfm");

    // Queues and totals.
    let mut xv = vec![vec![vec![None; kh + 1]; nc]; nz];
    let mut total = vec![Vec::with_capacity(kh + 1); nz];
    for z in 0..nz {
        let xmax = net.links[z].x_max;
        for c in 0..nc {
            if !active[z][c] {
                continue;
            }
            for k in 0..=kh {
                let (lb, ub) = if k == 0 { (inp.x0.x[z][c], inp.x0.x[z][c]) } else { (0.0, xmax) };
                xv[z][c][k] = Some(m.add_var(format!("x_{}_{c}_{k}", z + 1), lb, ub));
            }
        }
        let x0 = inp.x0.total(z);
        for k in 0..=kh {
            let (lb, ub) = if k == 0 { (x0, x0) } else { (0.0, xmax) };
            let v = m.add_var(format!("X_{}_{k}", z + 1), lb, ub);
            total[z].push(v);
            if k > 0 {
                let mut row = vec![(v, 1.0)];
                row.extend((0..nc).filter_map(|c| xv[z][c][k]).map(|x| (x, -1.0)));
                m.add_row(format!("tot_{}_{k}", z + 1), &row, Sense::Eq, 0.0);
            }
        }
    }

    // Signal greens and cycle rows.
    let mut gv: Vec<Vec<Vec<VarId>>> = Vec::with_capacity(net.num_nodes());
    for (j, node) in net.nodes.iter().enumerate() {
        let budget = net.green_budget(j, cyc);
        let ub = budget - (node.phases - 1) as f64 * p.g_min;
        let mut phases = Vec::with_capacity(node.phases);
        for i in 0..node.phases {
            phases.push((0..kh).map(|k| m.add_var(format!("g_{}_{i}_{k}", j + 1), p.g_min, ub)).collect::<Vec<_>>());
        }
        for k in 0..kh {
            let row: Vec<(VarId, f64)> = phases.iter().map(|ph| (ph[k], 1.0)).collect();
            m.add_row(format!("cyc_{}_{k}", j + 1), &row, Sense::Eq, budget);
        }
        gv.push(phases);
    }

    // Saturation rate and hull.
    let mut sv = vec![vec![None; kh]; nz];
    let mut hulls = vec![vec![None; kh]; nz];
    if let Some(scheme) = &scheme {
        for z in 0..nz {
            let phi_max = h.h_hdv * net.links[z].x_max;
            for k in 0..kh {
                let tag = format!("{}_{k}", z + 1);
                let s = m.add_var(format!("s_{tag}"), h.s_min(), h.s_max());
                let phi = m.add_var(format!("phi_{tag}"), 0.0, phi_max);
                let hv = HullVars {
                    x_cav: (1..nc).filter_map(|c| xv[z][c][k]).collect(),
                    x_hdv: xv[z][0][k].expect("HDV queue exists on every link"),
                    total: total[z][k],
                    s,
                    phi,
                };
                let hull = add_saturation_hull(&mut m, &hv, scheme, h, phi_max, &tag);
                if k == 0 {
                    fix_known_segments(&mut m, &hull, scheme, inp.x0, z, h);
                }
                hulls[z][k] = Some(hull);
                sv[z][k] = Some(s);
            }
        }
    }

    // Operational greens and transport flows.
    let mut big_g: Vec<Vec<Vec<Vec<Option<VarId>>>>> = Vec::with_capacity(nz);
    let mut fv: Vec<Vec<Vec<Vec<Option<VarId>>>>> = Vec::with_capacity(nz);
    let mut q0 = vec![vec![None; kh]; nz];
    for z in 0..nz {
        let succ = net.successors(z);
        let mut gz = vec![vec![vec![None; kh]; nc]; succ.len()];
        let mut fz = vec![vec![vec![None; kh]; nc]; succ.len()];
        if let Some(j) = net.links[z].downstream {
            let g_hi = net.green_budget(j, cyc);
            let split = inp.turning.split(z);
            for c in 0..nc {
                if !active[z][c] {
                    continue;
                }
                let allowed: Vec<bool> = if c == 0 {
                    split.iter().map(|&t| t > 0.0).collect()
                } else {
                    let d = net.destination(c);
                    if d == z {
                        vec![false; succ.len()]
                    } else {
                        let adm = admissible_successors(net, inp.cost, z, d, p.epsilon);
                        succ.iter().map(|mm| adm.contains(mm)).collect()
                    }
                };
                for (slot, &ok) in allowed.iter().enumerate() {
                    if !ok {
                        continue;
                    }
                    for k in 0..kh {
                        let tag = format!("{}_{}_{c}_{k}", z + 1, succ[slot] + 1);
                        let g = m.add_var(format!("G_{tag}"), 0.0, g_hi);
                        let f = m.add_var(format!("f_{tag}"), 0.0, g_hi * h.s_max() / cyc);
                        match (p.mode, sv[z][k]) {
                            (SatMode::Constant { s }, _) => {
                                m.add_row(format!("fl_{tag}"), &[(f, cyc), (g, -s)], Sense::Eq, 0.0);
                            }
                            (SatMode::Dynamic { .. }, Some(s)) => {
                                add_mccormick_transport(&mut m, f, g, s, 0.0, g_hi, h, cyc, &tag)?;
                            }
                            (SatMode::Dynamic { .. }, None) => unreachable!("dynamic mode defines s on every link"),
                        }
                        gz[slot][c][k] = Some(g);
                        fz[slot][c][k] = Some(f);
                    }
                }
            }
            if allowed_any(&split) {
                for k in 0..kh {
                    let q = m.add_var(format!("q0_{}_{k}", z + 1), 0.0, f64::INFINITY);
                    for (slot, &t) in split.iter().enumerate() {
                        if let Some(f) = fz[slot][0][k] {
                            m.add_row(format!("hsplit_{}_{}_{k}", z + 1, succ[slot] + 1), &[(f, 1.0), (q, -t)], Sense::Eq, 0.0);
                        }
                    }
                    q0[z][k] = Some(q);
                }
            }
            // Green distribution.
            for k in 0..kh {
                let mut row: Vec<(VarId, f64)> = gz.iter().flatten().filter_map(|v| v[k]).map(|v| (v, 1.0)).collect();
                if row.is_empty() {
                    continue;
                }
                row.extend(net.links[z].row_phases.iter().map(|&i| (gv[j][i][k], -1.0)));
                m.add_row(format!("gdist_{}_{k}", z + 1), &row, Sense::Le, 0.0);
            }
        }
        big_g.push(gz);
        fv.push(fz);
    }

    // Conservation.
    for z in 0..nz {
        let succ_len = net.successors(z).len();
        for c in 0..nc {
            if !active[z][c] {
                continue;
            }
            let dest_here = c >= 1 && net.destination(c) == z;
            let keep = if c == 0 { 1.0 - inp.turning.e[z] } else if dest_here { 0.0 } else { 1.0 };
            for k in 0..kh {
                let mut row = vec![(xv[z][c][k + 1].unwrap(), 1.0), (xv[z][c][k].unwrap(), -keep)];
                for &i in net.predecessors(z) {
                    let slot = net.successors(i).iter().position(|&mm| mm == z).unwrap();
                    if let Some(f) = fv[i][slot][c][k] {
                        row.push((f, -cyc));
                    }
                }
                if c == 0 {
                    if let Some(q) = q0[z][k] {
                        row.push((q, cyc));
                    }
                } else if !dest_here {
                    for slot in 0..succ_len {
                        if let Some(f) = fv[z][slot][c][k] {
                            row.push((f, cyc));
                        }
                    }
                }
                let b = demand_at(inp.demand, k)[z][c];
                m.add_row(format!("dyn_{}_{c}_{k}", z + 1), &row, Sense::Eq, cyc * b);
            }
        }
    }

    // Objective.
    let w = p.weights;
    let seg = p.pwl_segments;
    for z in 0..nz {
        let xmax = net.links[z].x_max;
        for c in 0..nc {
            if !active[z][c] {
                continue;
            }
            let wc = if c == 0 { w.w1 } else { 1.0 };
            let x0 = inp.x0.x[z][c];
            m.obj_constant += wc * x0 * x0 / xmax;
            if wc > 0.0 {
                for k in 1..=kh {
                    let v = xv[z][c][k].unwrap();
                    add_pwl_quadratic(&mut m, &[(v, 1.0)], 0.0, 0.0, xmax, wc / xmax, seg, p.pwl_form, &format!("x_{}_{c}_{k}", z + 1))?;
                }
            }
            if c >= 1 && w.w2 > 0.0 {
                let fz = inp.cost.get(z, net.destination(c));
                if fz.is_finite() && fz > 0.0 {
                    m.add_objective(xv[z][c][kh].unwrap(), w.w2 * fz);
                }
            }
        }
        if w.w3 > 0.0 {
            add_pwl_quadratic(&mut m, &[(total[z][kh], 1.0)], 0.0, 0.0, xmax, w.w3 / xmax, seg, p.pwl_form, &format!("X_{}", z + 1))?;
        }
    }
    if w.w4 > 0.0 {
        for (j, phases) in gv.iter().enumerate() {
            let range = net.green_budget(j, cyc);
            for (i, g) in phases.iter().enumerate() {
                for k in 0..kh {
                    let tag = format!("dg_{}_{i}_{k}", j + 1);
                    if k == 0 {
                        add_pwl_quadratic(&mut m, &[(g[0], 1.0)], -inp.g_prev[j][i], -range, range, w.w4, seg, p.pwl_form, &tag)?;
                    } else {
                        add_pwl_quadratic(&mut m, &[(g[k], 1.0), (g[k - 1], -1.0)], 0.0, -range, range, w.w4, seg, p.pwl_form, &tag)?;
                    }
                }
            }
        }
    }
    m.normalize_objective();
    m.validate()?;

    Ok(MilpInstance {
        model: m,
        index: VarIndex {
            x: xv,
            total,
            g: gv,
            big_g,
            f: fv,
            q0,
            s: sv,
            hulls,
        },
        params: p.clone(),
        active,
    })
}

fn allowed_any(split: &[f64]) -> bool {
    split.iter().any(|&t| t > 0.0)
}

use std::time::{Duration, Instant};

use crate::model::Model;
use crate::simplex::{default_iteration_cap, solve_lp, DualSimplex, LpStatus};
use crate::MilpError;

const INT_TOL: f64 = 1e-6;
const CERT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipLimits {
    pub rel_gap: f64,
    pub node_cap: usize,
    pub time_cap: Option<Duration>,
}

impl Default for MipLimits {
    fn default() -> Self {
        MipLimits {
            rel_gap: 1e-6,
            node_cap: 200_000,
            time_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    Unbounded,
    GapLimit,
    NodeLimit,
    TimeLimit,
}

impl MipStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MipStatus::Optimal => "optimal",
            MipStatus::Infeasible => "infeasible",
            MipStatus::Unbounded => "unbounded",
            MipStatus::GapLimit => "gap_limit",
            MipStatus::NodeLimit => "node_limit",
            MipStatus::TimeLimit => "time_limit",
        }
    }

    pub fn parse(s: &str) -> Option<MipStatus> {
        Some(match s {
            "optimal" => MipStatus::Optimal,
            "infeasible" => MipStatus::Infeasible,
            "unbounded" => MipStatus::Unbounded,
            "gap_limit" => MipStatus::GapLimit,
            "node_limit" => MipStatus::NodeLimit,
            "time_limit" => MipStatus::TimeLimit,
            _ => return None,
        })
    }

    /// True when an incumbent is available.
    pub fn has_solution(self) -> bool {
        matches!(
            self,
            MipStatus::Optimal | MipStatus::GapLimit | MipStatus::NodeLimit | MipStatus::TimeLimit
        )
    }
}

#[derive(Debug, Clone)]
pub struct MipSolution {
    pub status: MipStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub best_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time: f64,
}

impl MipSolution {
    pub(crate) fn empty(status: MipStatus, n: usize) -> Self {
        MipSolution {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            best_bound: f64::NAN,
            gap: f64::NAN,
            nodes: 0,
            lp_iterations: 0,
            wall_time: 0.0,
        }
    }
}

pub fn relative_gap(objective: f64, bound: f64) -> f64 {
    ((objective - bound) / objective.abs().max(1.0)).max(0.0)
}

struct Node {
    fix: Vec<(usize, f64)>,
    bound: f64,
    seq: usize,
}

struct Search<'a> {
    model: &'a Model,
    eng: DualSimplex,
    bins: Vec<usize>,
    orig: Vec<(f64, f64)>,
    current: Vec<Option<f64>>,
    cap: usize,
    incumbent: Option<(Vec<f64>, f64)>,
}

impl Search<'_> {
    /// Moves the engine to the fixing set `fix` (indices into `bins`).
    fn apply(&mut self, fix: &[(usize, f64)]) {
        let mut want: Vec<Option<f64>> = vec![None; self.bins.len()];
        for &(b, v) in fix {
            want[b] = Some(v);
        }
        for b in 0..self.bins.len() {
            if want[b] != self.current[b] {
                let j = self.bins[b];
                match want[b] {
                    Some(v) => self.eng.set_bounds(j, v, v),
                    None => self.eng.set_bounds(j, self.orig[b].0, self.orig[b].1),
                }
                self.current[b] = want[b];
            }
        }
    }

    fn solve(&mut self) -> Result<LpStatus, MilpError> {
        match self.eng.solve(self.cap) {
            LpStatus::IterationLimit => {
                self.eng.refactor();
                match self.eng.solve(self.cap) {
                    LpStatus::IterationLimit => Err(MilpError::Numerical(
                        "LP iteration cap reached inside branch-and-bound".into(),
                    )),
                    s => Ok(s),
                }
            }
            s => Ok(s),
        }
    }

    /// With every binary fixed, re-solves and records a certified incumbent.
    fn try_integral(&mut self, rounded: &[(usize, f64)]) -> Result<bool, MilpError> {
        let saved = self.current.clone();
        self.apply(rounded);
        let mut st = self.solve()?;
        let mut ok = false;
        if st == LpStatus::Optimal {
            let mut x = self.eng.primal();
            if self.model.max_row_violation(&x) > CERT_TOL {
                self.eng.refactor();
                st = self.solve()?;
                x = self.eng.primal();
            }
            if st == LpStatus::Optimal && self.model.max_row_violation(&x) <= CERT_TOL {
                for &(b, v) in rounded {
                    x[self.bins[b]] = v;
                }
                let obj = self.model.objective_value(&x);
                if self.incumbent.as_ref().is_none_or(|(_, o)| obj < *o) {
                    self.incumbent = Some((x, obj));
                    ok = true;
                }
            }
        }
        let restore: Vec<(usize, f64)> = saved
            .iter()
            .enumerate()
            .filter_map(|(b, v)| v.map(|v| (b, v)))
            .collect();
        self.apply(&restore);
        Ok(ok)
    }

    fn rounded(&self, x: &[f64]) -> Vec<(usize, f64)> {
        self.bins
            .iter()
            .enumerate()
            .map(|(b, &j)| (b, if x[j] >= 0.5 { 1.0 } else { 0.0 }))
            .collect()
    }

    fn most_fractional(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (b, &j) in self.bins.iter().enumerate() {
            if self.current[b].is_some() || self.orig[b].0 == self.orig[b].1 {
                continue;
            }
            let f = (x[j] - x[j].round()).abs();
            if f > INT_TOL && best.is_none_or(|(_, bf)| f > bf) {
                best = Some((b, f));
            }
        }
        best.map(|(b, _)| b)
    }

    fn prune_level(&self, rel_gap: f64) -> f64 {
        match &self.incumbent {
            Some((_, o)) => o - rel_gap * o.abs().max(1.0),
            None => f64::INFINITY,
        }
    }
}

/// Branch-and-bound on the most fractional binary (ties: lowest index), diving
/// toward the nearer rounding and backtracking to the best-bound open node.
pub fn solve_milp(model: &Model, limits: MipLimits) -> Result<MipSolution, MilpError> {
    model.validate()?;
    let t0 = Instant::now();
    let bins: Vec<usize> = model.binaries().iter().map(|v| v.0).collect();
    let orig: Vec<(f64, f64)> = bins
        .iter()
        .map(|&j| (model.vars[j].lb, model.vars[j].ub))
        .collect();
    let mut s = Search {
        model,
        eng: DualSimplex::new(model),
        current: vec![None; bins.len()],
        bins,
        orig,
        cap: default_iteration_cap(model),
        incumbent: None,
    };
    let n = model.vars.len();
    let finish = |s: &Search, status: MipStatus, bound: f64, nodes: usize| -> MipSolution {
        let wall_time = t0.elapsed().as_secs_f64();
        match &s.incumbent {
            Some((x, obj)) => {
                let best_bound = bound.min(*obj);
                MipSolution {
                    status,
                    x: x.clone(),
                    objective: *obj,
                    best_bound,
                    gap: relative_gap(*obj, best_bound),
                    nodes,
                    lp_iterations: s.eng.iterations,
                    wall_time,
                }
            }
            None => {
                let mut e = MipSolution::empty(status, n);
                e.nodes = nodes;
                e.lp_iterations = s.eng.iterations;
                e.wall_time = wall_time;
                e
            }
        }
    };

    match s.solve()? {
        LpStatus::Infeasible => return Ok(finish(&s, MipStatus::Infeasible, f64::INFINITY, 1)),
        LpStatus::Unbounded => return Ok(finish(&s, MipStatus::Unbounded, f64::NEG_INFINITY, 1)),
        _ => {}
    }
    let root_x = s.eng.primal();
    let mut solved = true;
    if !s.bins.is_empty() {
        let r = s.rounded(&root_x);
        s.try_integral(&r)?;
        solved = false;
    }

    let mut open: Vec<Node> = Vec::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut best_bound = f64::NEG_INFINITY;
    // The node currently loaded in the engine and its parent's bound.
    let mut cur_fix: Vec<(usize, f64)> = Vec::new();
    let mut cur_bound = f64::NEG_INFINITY;
    let mut have_current = true;

    loop {
        if have_current {
            nodes += 1;
            let st = if solved { LpStatus::Optimal } else { s.solve()? };
            solved = false;
            let mut dive: Option<Vec<(usize, f64)>> = None;
            if st == LpStatus::Optimal {
                let obj = s.eng.objective();
                if obj < s.prune_level(limits.rel_gap) {
                    let x = s.eng.primal();
                    match s.most_fractional(&x) {
                        None => {
                            let r = s.rounded(&x);
                            s.try_integral(&r)?;
                        }
                        Some(b) => {
                            let up_first = x[s.bins[b]] >= 0.5;
                            let (first, second) = if up_first { (1.0, 0.0) } else { (0.0, 1.0) };
                            let mut other = cur_fix.clone();
                            other.push((b, second));
                            seq += 1;
                            open.push(Node { fix: other, bound: obj, seq });
                            let mut next = cur_fix.clone();
                            next.push((b, first));
                            dive = Some(next);
                            cur_bound = obj;
                        }
                    }
                }
            } else if st == LpStatus::Unbounded {
                return Ok(finish(&s, MipStatus::Unbounded, f64::NEG_INFINITY, nodes));
            }
            match dive {
                Some(next) => {
                    let (b, v) = *next.last().unwrap();
                    s.eng.set_bounds(s.bins[b], v, v);
                    s.current[b] = Some(v);
                    cur_fix = next;
                }
                None => {
                    have_current = false;
                }
            }
        }

        let level = s.prune_level(limits.rel_gap);
        open.retain(|nd| nd.bound < level);
        let open_min = open.iter().map(|nd| nd.bound).fold(f64::INFINITY, f64::min);
        let global = if have_current { open_min.min(cur_bound) } else { open_min };
        if global.is_finite() {
            best_bound = best_bound.max(global);
        }

        if !have_current && open.is_empty() {
            let status = if s.incumbent.is_some() { MipStatus::Optimal } else { MipStatus::Infeasible };
            let bound = s.incumbent.as_ref().map(|i| i.1).unwrap_or(f64::INFINITY);
            return Ok(finish(&s, status, bound, nodes));
        }
        if let Some((_, inc)) = &s.incumbent {
            if relative_gap(*inc, best_bound) <= limits.rel_gap {
                return Ok(finish(&s, MipStatus::GapLimit, best_bound, nodes));
            }
        }
        if nodes >= limits.node_cap {
            return Ok(finish(&s, MipStatus::NodeLimit, best_bound, nodes));
        }
        if limits.time_cap.is_some_and(|cap| t0.elapsed() >= cap) {
            return Ok(finish(&s, MipStatus::TimeLimit, best_bound, nodes));
        }

        if !have_current {
            let k = open
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    a.1.bound
                        .partial_cmp(&b.1.bound)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.1.seq.cmp(&b.1.seq))
                })
                .map(|(k, _)| k)
                .unwrap();
            let nd = open.swap_remove(k);
            s.apply(&nd.fix);
            cur_fix = nd.fix;
            cur_bound = nd.bound;
            have_current = true;
        }
    }
}

/// Exhaustive reference: every binary assignment solved as an independent LP.
pub fn enumerate_oracle(model: &Model) -> Result<MipSolution, MilpError> {
    model.validate()?;
    let t0 = Instant::now();
    let bins = model.binaries();
    if bins.len() > 20 {
        return Err(MilpError::TooManyBinaries(bins.len()));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut count = 0usize;
    let mut iters = 0usize;
    let mut unbounded = false;
    for mask in 0u32..(1u32 << bins.len()) {
        let mut m = model.clone();
        let mut skip = false;
        for (k, v) in bins.iter().enumerate() {
            let val = f64::from((mask >> k) & 1);
            let var = &mut m.vars[v.0];
            if val < var.lb || val > var.ub {
                skip = true;
                break;
            }
            var.lb = val;
            var.ub = val;
        }
        if skip {
            continue;
        }
        count += 1;
        let sol = solve_lp(&m);
        iters += sol.iterations;
        match sol.status {
            LpStatus::Optimal => {
                if best.as_ref().is_none_or(|(_, o)| sol.objective < *o) {
                    best = Some((sol.x, sol.objective));
                }
            }
            LpStatus::Unbounded => unbounded = true,
            LpStatus::Infeasible => {}
            LpStatus::IterationLimit => {
                return Err(MilpError::Numerical("oracle LP hit the iteration cap".into()));
            }
        }
    }
    let wall_time = t0.elapsed().as_secs_f64();
    if unbounded {
        let mut e = MipSolution::empty(MipStatus::Unbounded, model.vars.len());
        e.nodes = count;
        return Ok(e);
    }
    Ok(match best {
        Some((x, obj)) => MipSolution {
            status: MipStatus::Optimal,
            x,
            objective: obj,
            best_bound: obj,
            gap: 0.0,
            nodes: count,
            lp_iterations: iters,
            wall_time,
        },
        None => {
            let mut e = MipSolution::empty(MipStatus::Infeasible, model.vars.len());
            e.nodes = count;
            e.lp_iterations = iters;
            e.wall_time = wall_time;
            e
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sense;

    fn knapsack() -> Model {
        // max 5a + 4b + 3c  s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8
        let mut m = Model::new("k");
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        let c = m.add_binary("c");
        m.add_row("r1", &[(a, 2.0), (b, 3.0), (c, 1.0)], Sense::Le, 5.0);
        m.add_row("r2", &[(a, 4.0), (b, 1.0), (c, 2.0)], Sense::Le, 11.0);
        m.add_row("r3", &[(a, 3.0), (b, 4.0), (c, 2.0)], Sense::Le, 8.0);
        m.add_objective(a, -5.0);
        m.add_objective(b, -4.0);
        m.add_objective(c, -3.0);
        m
    }

    #[test]
    fn knapsack_matches_oracle() {
        let m = knapsack();
        let s = solve_milp(&m, MipLimits::default()).unwrap();
        let o = enumerate_oracle(&m).unwrap();
        assert_eq!(s.status, MipStatus::Optimal);
        assert!((s.objective - o.objective).abs() < 1e-9);
        assert!((s.objective + 9.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_binaries_equal_lp() {
        let mut m = knapsack();
        for v in &mut m.vars {
            v.lb = 1.0;
            v.ub = 1.0;
        }
        m.rows.clear();
        let s = solve_milp(&m, MipLimits::default()).unwrap();
        let l = solve_lp(&m);
        assert_eq!(s.objective, l.objective);
        assert!(s.nodes <= 1);
    }

    #[test]
    fn oracle_case_split() {
        // b = 0 forces x >= 1.5 with x <= 1 (infeasible); b = 1 leaves x >= 0.5.
        let mut m = Model::new("split");
        let b = m.add_binary("b");
        let x = m.add_var("x", 0.0, 1.0);
        m.add_row("r", &[(x, 1.0), (b, 1.0)], Sense::Ge, 1.5);
        m.add_objective(x, 1.0);
        let o = enumerate_oracle(&m).unwrap();
        assert_eq!(o.status, MipStatus::Optimal);
        assert_eq!(o.x[0], 1.0);
        assert!((o.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_large_models() {
        let mut m = Model::new("big");
        for i in 0..21 {
            m.add_binary(format!("b{i}"));
        }
        assert!(matches!(enumerate_oracle(&m), Err(MilpError::TooManyBinaries(21))));
    }

    #[test]
    fn infeasible_milp() {
        let mut m = Model::new("inf");
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        m.add_row("r", &[(a, 1.0), (b, 1.0)], Sense::Eq, 1.5);
        let s = solve_milp(&m, MipLimits::default()).unwrap();
        assert_eq!(s.status, MipStatus::Infeasible);
    }
}

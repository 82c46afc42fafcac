//! Bounded dual simplex with the basis inverse kept in product form.
//!
//! Every row `a·x (<=|=|>=) rhs` gets a logical variable `r = a·x` whose
//! bounds encode the sense, so the working system is `[A | -I] (x, r) = 0`
//! and the all-logical basis is always a valid start. Nonbasic variables sit
//! at the bound their reduced-cost sign asks for, which makes the start dual
//! feasible; an infinite bound that is needed is replaced by an artificial
//! box at `BIG` and any solution resting on such a box is reported unbounded.
//!
//! B^-1 = E_k ... E_1 (-I): each eta E replaces one column of the identity.
//! Reinversion rebuilds the file from the all-logical basis, sparsest
//! structural columns first.

use crate::model::{Model, Sense};

const BIG: f64 = 1e7;
const TOL_PRIMAL: f64 = 1e-9;
const TOL_DUAL: f64 = 1e-9;
const TOL_PIVOT: f64 = 1e-9;
const REFRESH_EVERY: usize = 50;
const REINVERT_EVERY: usize = 100;
const BLAND_AFTER: usize = 1000;
/// Updates tolerated before a final check also rebuilds the inverse.
const STALE_INVERSE: usize = 20;
/// Relative pivot size below which a column is left out on reinversion.
const TOL_SINGULAR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Basic,
    Lower,
    Upper,
    Free,
}

/// Sequence of column etas in flat storage.
#[derive(Clone, Default)]
struct EtaFile {
    row: Vec<usize>,
    pivot: Vec<f64>,
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl EtaFile {
    fn clear(&mut self) {
        self.row.clear();
        self.pivot.clear();
        self.start.clear();
        self.idx.clear();
        self.val.clear();
    }

    /// Appends the eta that pivots the transformed column `alpha` on row `p`.
    fn push(&mut self, p: usize, alpha: &[f64]) {
        let a = alpha[p];
        self.row.push(p);
        self.pivot.push(1.0 / a);
        self.start.push(self.idx.len());
        for (i, &v) in alpha.iter().enumerate() {
            if i != p && v != 0.0 {
                self.idx.push(i);
                self.val.push(-v / a);
            }
        }
    }

    fn end(&self, k: usize) -> usize {
        self.start.get(k + 1).copied().unwrap_or(self.idx.len())
    }

    /// v <- B^-1 v.
    fn ftran(&self, v: &mut [f64]) {
        v.iter_mut().for_each(|x| *x = -*x);
        for k in 0..self.row.len() {
            let p = self.row[k];
            let vp = v[p];
            if vp == 0.0 {
                continue;
            }
            v[p] = self.pivot[k] * vp;
            for t in self.start[k]..self.end(k) {
                v[self.idx[t]] += self.val[t] * vp;
            }
        }
    }

    /// u <- u B^-1 for a row vector u.
    fn btran(&self, u: &mut [f64]) {
        for k in (0..self.row.len()).rev() {
            let p = self.row[k];
            let mut s = self.pivot[k] * u[p];
            for t in self.start[k]..self.end(k) {
                s += self.val[t] * u[self.idx[t]];
            }
            u[p] = s;
        }
        u.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Clone)]
pub struct DualSimplex {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    d: Vec<f64>,
    pos: Vec<Pos>,
    head: Vec<usize>,
    row_of: Vec<usize>,
    etas: EtaFile,
    obj_constant: f64,
    pub iterations: usize,
    since_refresh: usize,
    since_reinvert: usize,
    degenerate_run: usize,
    bland: bool,
    alpha_row: Vec<f64>,
    alpha_col: Vec<f64>,
    rho: Vec<f64>,
}

impl DualSimplex {
    /// Builds the engine with binaries relaxed to their box.
    pub fn new(model: &Model) -> Self {
        let n = model.vars.len();
        let m = model.rows.len();
        let mut cols = vec![Vec::new(); n];
        let mut rows = vec![Vec::new(); m];
        for (i, r) in model.rows.iter().enumerate() {
            for &(v, a) in &r.coefs {
                cols[v.0].push((i, a));
                rows[i].push((v.0, a));
            }
        }
        let mut cost = model.dense_objective();
        cost.extend(std::iter::repeat_n(0.0, m));
        let mut lb: Vec<f64> = model.vars.iter().map(|v| v.lb).collect();
        let mut ub: Vec<f64> = model.vars.iter().map(|v| v.ub).collect();
        for r in &model.rows {
            let (l, u) = match r.sense {
                Sense::Le => (f64::NEG_INFINITY, r.rhs),
                Sense::Ge => (r.rhs, f64::INFINITY),
                Sense::Eq => (r.rhs, r.rhs),
            };
            lb.push(l);
            ub.push(u);
        }
        let total = n + m;
        let mut s = DualSimplex {
            n,
            m,
            cols,
            rows,
            d: cost.clone(),
            cost,
            lb,
            ub,
            x: vec![0.0; total],
            pos: vec![Pos::Lower; total],
            head: (n..total).collect(),
            row_of: vec![usize::MAX; total],
            etas: EtaFile::default(),
            obj_constant: model.obj_constant,
            iterations: 0,
            since_refresh: 0,
            since_reinvert: 0,
            degenerate_run: 0,
            bland: false,
            alpha_row: vec![0.0; total],
            alpha_col: vec![0.0; m],
            rho: vec![0.0; m],
        };
        for i in 0..m {
            s.pos[n + i] = Pos::Basic;
            s.row_of[n + i] = i;
            s.d[n + i] = 0.0;
        }
        for j in 0..n {
            s.place_nonbasic(j);
        }
        s.recompute_primal();
        s
    }

    pub fn num_structural(&self) -> usize {
        self.n
    }

    fn place_nonbasic(&mut self, j: usize) {
        let (l, u, dj) = (self.lb[j], self.ub[j], self.d[j]);
        let (p, v) = if l == u {
            (Pos::Lower, l)
        } else if dj > TOL_DUAL {
            (Pos::Lower, if l.is_finite() { l } else { -BIG })
        } else if dj < -TOL_DUAL {
            (Pos::Upper, if u.is_finite() { u } else { BIG })
        } else if self.pos[j] == Pos::Upper && u.is_finite() {
            (Pos::Upper, u)
        } else if l.is_finite() {
            (Pos::Lower, l)
        } else if u.is_finite() {
            (Pos::Upper, u)
        } else {
            (Pos::Free, 0.0)
        };
        self.pos[j] = p;
        self.x[j] = v;
    }

    /// x_B = B^-1 (-N x_N).
    fn recompute_primal(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.n {
            if self.pos[j] != Pos::Basic && self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    rhs[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            let j = self.n + i;
            if self.pos[j] != Pos::Basic && self.x[j] != 0.0 {
                rhs[i] += self.x[j];
            }
        }
        self.etas.ftran(&mut rhs);
        for (r, v) in rhs.into_iter().enumerate() {
            self.x[self.head[r]] = v;
        }
    }

    /// y = c_B B^-1, d_j = c_j - y·a_j.
    fn recompute_duals(&mut self) {
        let m = self.m;
        let mut y: Vec<f64> = (0..m).map(|r| self.cost[self.head[r]]).collect();
        self.etas.btran(&mut y);
        for j in 0..self.n + m {
            if self.pos[j] == Pos::Basic {
                self.d[j] = 0.0;
            } else if j < self.n {
                let ya: f64 = self.cols[j].iter().map(|&(i, a)| y[i] * a).sum();
                self.d[j] = self.cost[j] - ya;
            } else {
                self.d[j] = self.cost[j] + y[j - self.n];
            }
        }
    }

    /// Rebuilds the eta file for the current basic set. Logical columns take
    /// their own rows; structurals are pivoted in by partial pivoting over the
    /// rows still free. A column that is numerically dependent is dropped and
    /// its row goes back to the logical. Returns false if that happened.
    fn reinvert(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        self.etas.clear();
        let mut free = vec![true; m];
        let mut structural: Vec<usize> = Vec::new();
        for &j in &self.head {
            if j >= n {
                free[j - n] = false;
            } else {
                structural.push(j);
            }
        }
        structural.sort_by_key(|&j| (self.cols[j].len(), j));
        let mut head = vec![usize::MAX; m];
        for i in 0..m {
            if !free[i] {
                head[i] = n + i;
            }
        }
        let mut work = vec![0.0; m];
        let mut dropped = Vec::new();
        for &j in &structural {
            work.iter_mut().for_each(|w| *w = 0.0);
            for &(i, a) in &self.cols[j] {
                work[i] = a;
            }
            self.etas.ftran(&mut work);
            let scale = work.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut best: Option<(usize, f64)> = None;
            for (i, &v) in work.iter().enumerate() {
                if free[i] && best.is_none_or(|(_, b)| v.abs() > b) {
                    best = Some((i, v.abs()));
                }
            }
            match best {
                Some((p, b)) if b > TOL_SINGULAR * scale.max(1.0) => {
                    self.etas.push(p, &work);
                    free[p] = false;
                    head[p] = j;
                }
                _ => dropped.push(j),
            }
        }
        for i in 0..m {
            if free[i] {
                head[i] = n + i;
            }
        }
        for &j in &head {
            self.pos[j] = Pos::Basic;
        }
        for (r, &j) in head.iter().enumerate() {
            self.row_of[j] = r;
        }
        self.head = head;
        for &j in &dropped {
            self.row_of[j] = usize::MAX;
            self.pos[j] = Pos::Lower;
            self.d[j] = 0.0;
            self.place_nonbasic(j);
        }
        dropped.is_empty()
    }

    fn refresh(&mut self, reinvert: bool) {
        if reinvert {
            self.reinvert();
            self.since_reinvert = 0;
        }
        self.recompute_primal();
        self.recompute_duals();
        self.since_refresh = 0;
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lb[j] - TOL_PRIMAL {
            self.lb[j] - v
        } else if v > self.ub[j] + TOL_PRIMAL {
            v - self.ub[j]
        } else {
            0.0
        }
    }

    fn choose_leaving(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.m {
            let j = self.head[r];
            let inf = self.infeasibility(j);
            if inf <= 0.0 {
                continue;
            }
            let key = if self.bland { -(j as f64) } else { inf };
            match best {
                Some((_, bk)) if bk >= key => {}
                _ => best = Some((r, key)),
            }
        }
        best.map(|(r, _)| r)
    }

    fn compute_alpha_row(&mut self, r: usize) {
        let n = self.n;
        self.alpha_row.iter_mut().for_each(|a| *a = 0.0);
        let rho = &mut self.rho;
        rho.iter_mut().for_each(|v| *v = 0.0);
        rho[r] = 1.0;
        self.etas.btran(rho);
        for (i, &p) in rho.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(j, a) in &self.rows[i] {
                self.alpha_row[j] += p * a;
            }
            self.alpha_row[n + i] = -p;
        }
    }

    fn compute_alpha_col(&mut self, q: usize) {
        self.alpha_col.iter_mut().for_each(|a| *a = 0.0);
        if q < self.n {
            for &(i, a) in &self.cols[q] {
                self.alpha_col[i] = a;
            }
        } else {
            self.alpha_col[q - self.n] = -1.0;
        }
        self.etas.ftran(&mut self.alpha_col);
    }

    /// Changes the bounds of variable `j` (structural index) keeping dual
    /// feasibility; basic values follow any move of a nonbasic variable.
    pub fn set_bounds(&mut self, j: usize, l: f64, u: f64) {
        self.lb[j] = l;
        self.ub[j] = u;
        if self.pos[j] == Pos::Basic {
            return;
        }
        let old = self.x[j];
        self.place_nonbasic(j);
        let delta = self.x[j] - old;
        if delta != 0.0 {
            self.compute_alpha_col(j);
            for r in 0..self.m {
                let a = self.alpha_col[r];
                if a != 0.0 {
                    self.x[self.head[r]] -= a * delta;
                }
            }
        }
    }

    /// Rebuilds the basis inverse and recomputes primal and dual values.
    pub fn refactor(&mut self) {
        self.refresh(true);
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lb[j], self.ub[j])
    }

    /// Runs dual simplex iterations until optimality, infeasibility or the
    /// iteration cap.
    pub fn solve(&mut self, max_iter: usize) -> LpStatus {
        let start = self.iterations;
        let mut cleanups = 0usize;
        loop {
            if self.iterations - start >= max_iter {
                return LpStatus::IterationLimit;
            }
            if self.since_reinvert >= REINVERT_EVERY {
                self.refresh(true);
            } else if self.since_refresh >= REFRESH_EVERY {
                self.refresh(false);
            }
            let Some(r) = self.choose_leaving() else {
                match self.finish(&mut cleanups) {
                    Some(st) => return st,
                    None => continue,
                }
            };
            let leaving = self.head[r];
            let increase = self.x[leaving] < self.lb[leaving];
            self.compute_alpha_row(r);
            let Some(q) = self.ratio_test(increase) else {
                // Row r cannot be repaired. Confirm against a fresh basis
                // before declaring infeasibility.
                if self.since_refresh > 0 || self.since_reinvert > STALE_INVERSE {
                    self.refresh(self.since_reinvert > STALE_INVERSE);
                    if self.infeasibility(leaving) > 0.0 {
                        self.compute_alpha_row(r);
                        if self.ratio_test(increase).is_none() {
                            return LpStatus::Infeasible;
                        }
                    }
                    continue;
                }
                return LpStatus::Infeasible;
            };
            self.iterations += 1;
            self.since_refresh += 1;
            self.since_reinvert += 1;
            let arq = self.alpha_row[q];
            let theta_d = self.d[q] / arq;
            if theta_d.abs() < 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > BLAND_AFTER {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
            // Dual update.
            if theta_d != 0.0 {
                for j in 0..self.n + self.m {
                    if self.pos[j] != Pos::Basic && self.alpha_row[j] != 0.0 {
                        self.d[j] -= theta_d * self.alpha_row[j];
                    }
                }
            }
            self.d[q] = 0.0;
            self.d[leaving] = -theta_d;
            // Primal update.
            self.compute_alpha_col(q);
            let target = if increase { self.lb[leaving] } else { self.ub[leaving] };
            let t = (self.x[leaving] - target) / self.alpha_col[r];
            for i in 0..self.m {
                let a = self.alpha_col[i];
                if a != 0.0 {
                    self.x[self.head[i]] -= a * t;
                }
            }
            self.x[q] += t;
            self.x[leaving] = target;
            self.pos[leaving] = if increase { Pos::Lower } else { Pos::Upper };
            self.row_of[leaving] = usize::MAX;
            self.pos[q] = Pos::Basic;
            self.row_of[q] = r;
            self.head[r] = q;
            self.etas.push(r, &self.alpha_col);
        }
    }

    fn ratio_test(&self, increase: bool) -> Option<usize> {
        let mut cands: Vec<(usize, f64, f64)> = Vec::new();
        for j in 0..self.n + self.m {
            let a = self.alpha_row[j];
            if a.abs() <= TOL_PIVOT || self.lb[j] == self.ub[j] {
                continue;
            }
            let ok = match self.pos[j] {
                Pos::Basic => false,
                Pos::Free => true,
                Pos::Lower => (a < 0.0) == increase,
                Pos::Upper => (a > 0.0) == increase,
            };
            if ok {
                cands.push((j, self.d[j].abs(), a.abs()));
            }
        }
        if cands.is_empty() {
            return None;
        }
        if self.bland {
            let mut best: Option<(usize, f64)> = None;
            for &(j, dj, aj) in &cands {
                let ratio = dj / aj;
                match best {
                    Some((_, b)) if ratio >= b - 1e-15 => {}
                    _ => best = Some((j, ratio)),
                }
            }
            return best.map(|b| b.0);
        }
        let bound = cands
            .iter()
            .map(|&(_, dj, aj)| (dj + TOL_DUAL) / aj)
            .fold(f64::INFINITY, f64::min);
        let mut best: Option<(usize, f64)> = None;
        for &(j, dj, aj) in &cands {
            if dj / aj <= bound {
                match best {
                    Some((_, ba)) if ba >= aj => {}
                    _ => best = Some((j, aj)),
                }
            }
        }
        best.map(|b| b.0)
    }

    /// Called once no basic variable is out of bounds. Returns a final
    /// status, or `None` when cleanup moved variables and iterations resume.
    fn finish(&mut self, cleanups: &mut usize) -> Option<LpStatus> {
        if self.since_refresh > 0 {
            self.refresh(self.since_reinvert > STALE_INVERSE);
            if self.choose_leaving().is_some() {
                return None;
            }
        }
        let mut moved = false;
        let mut unbounded = false;
        for j in 0..self.n + self.m {
            match self.pos[j] {
                Pos::Basic => {}
                Pos::Free => {
                    if self.d[j].abs() > TOL_DUAL {
                        unbounded = true;
                    }
                }
                Pos::Lower | Pos::Upper => {
                    let on_box = (self.pos[j] == Pos::Lower && !self.lb[j].is_finite())
                        || (self.pos[j] == Pos::Upper && !self.ub[j].is_finite());
                    let wrong = (self.pos[j] == Pos::Lower && self.d[j] < -TOL_DUAL)
                        || (self.pos[j] == Pos::Upper && self.d[j] > TOL_DUAL);
                    if wrong && self.lb[j] != self.ub[j] {
                        // Drifted dual sign: flip to the other bound if finite.
                        let other_finite = if self.pos[j] == Pos::Lower {
                            self.ub[j].is_finite()
                        } else {
                            self.lb[j].is_finite()
                        };
                        if other_finite {
                            let (l, u) = (self.lb[j], self.ub[j]);
                            self.set_bounds(j, l, u);
                            moved = true;
                        } else {
                            unbounded = true;
                        }
                    } else if on_box {
                        if self.d[j].abs() <= TOL_DUAL {
                            let (l, u) = (self.lb[j], self.ub[j]);
                            let old = self.x[j];
                            self.pos[j] = if l.is_finite() || u.is_finite() {
                                if l.is_finite() { Pos::Lower } else { Pos::Upper }
                            } else {
                                Pos::Free
                            };
                            let nv = match self.pos[j] {
                                Pos::Lower => l,
                                Pos::Upper => u,
                                _ => 0.0,
                            };
                            self.x[j] = old;
                            self.shift_nonbasic(j, nv);
                            moved = true;
                        } else {
                            unbounded = true;
                        }
                    }
                }
            }
        }
        if unbounded {
            return Some(LpStatus::Unbounded);
        }
        if moved {
            *cleanups += 1;
            if *cleanups > 50 {
                return Some(LpStatus::IterationLimit);
            }
            return None;
        }
        if self.head.iter().any(|&j| self.x[j].abs() >= BIG * 0.5) {
            return Some(LpStatus::Unbounded);
        }
        Some(LpStatus::Optimal)
    }

    fn shift_nonbasic(&mut self, j: usize, value: f64) {
        let delta = value - self.x[j];
        self.x[j] = value;
        if delta != 0.0 {
            self.compute_alpha_col(j);
            for r in 0..self.m {
                let a = self.alpha_col[r];
                if a != 0.0 {
                    self.x[self.head[r]] -= a * delta;
                }
            }
        }
    }

    /// Structural values, clipped onto their bounds.
    pub fn primal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let v = self.x[j];
                if v < self.lb[j] {
                    self.lb[j]
                } else if v > self.ub[j] {
                    self.ub[j]
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn objective(&self) -> f64 {
        self.obj_constant
            + (0..self.n)
                .map(|j| self.cost[j] * self.x[j])
                .sum::<f64>()
    }
}

pub fn default_iteration_cap(model: &Model) -> usize {
    50 * (model.vars.len() + model.rows.len()) + 10_000
}

/// Solves the LP relaxation of `model` (binaries treated as [lb, ub]).
pub fn solve_lp(model: &Model) -> LpSolution {
    let mut eng = DualSimplex::new(model);
    let status = eng.solve(default_iteration_cap(model));
    let x = eng.primal();
    let objective = if status == LpStatus::Optimal {
        model.objective_value(&x)
    } else {
        f64::NAN
    };
    LpSolution {
        status,
        x,
        objective,
        iterations: eng.iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sense;

    #[test]
    fn toy_max_form() {
        let mut m = Model::new("toy");
        let x = m.add_var("x", 0.0, 1.0);
        let y = m.add_var("y", 0.0, 1.0);
        m.add_row("c", &[(x, 1.0), (y, 1.0)], Sense::Le, 1.0);
        m.add_objective(x, -1.0);
        m.add_objective(y, -1.0);
        let s = solve_lp(&m);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows() {
        let mut m = Model::new("inf");
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        m.add_row("a", &[(x, 1.0)], Sense::Ge, 1.0);
        m.add_row("b", &[(x, 1.0)], Sense::Le, 0.0);
        assert_eq!(solve_lp(&m).status, LpStatus::Infeasible);
    }

    #[test]
    fn free_variable_unbounded() {
        let mut m = Model::new("unb");
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        m.add_objective(x, -1.0);
        assert_eq!(solve_lp(&m).status, LpStatus::Unbounded);
    }

    #[test]
    fn unbounded_through_row() {
        let mut m = Model::new("unb2");
        let x = m.add_var("x", 0.0, f64::INFINITY);
        let y = m.add_var("y", 0.0, f64::INFINITY);
        m.add_row("r", &[(x, 1.0), (y, -1.0)], Sense::Le, 2.0);
        m.add_objective(x, -1.0);
        assert_eq!(solve_lp(&m).status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_free_vars() {
        // min x + 2y  s.t. x + y = 3, x - y >= -1, x free, y in [0, 10]
        let mut m = Model::new("eq");
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = m.add_var("y", 0.0, 10.0);
        m.add_row("e", &[(x, 1.0), (y, 1.0)], Sense::Eq, 3.0);
        m.add_row("g", &[(x, 1.0), (y, -1.0)], Sense::Ge, -1.0);
        m.add_objective(x, 1.0);
        m.add_objective(y, 2.0);
        let s = solve_lp(&m);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-9 && s.x[1].abs() < 1e-9);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn bound_change_resolves_warm() {
        let mut m = Model::new("w");
        let x = m.add_var("x", 0.0, 4.0);
        let y = m.add_var("y", 0.0, 4.0);
        m.add_row("c", &[(x, 1.0), (y, 1.0)], Sense::Ge, 3.0);
        m.add_objective(x, 1.0);
        m.add_objective(y, 2.0);
        let mut e = DualSimplex::new(&m);
        assert_eq!(e.solve(1000), LpStatus::Optimal);
        assert!((e.objective() - 3.0).abs() < 1e-12);
        e.set_bounds(0, 0.0, 1.0);
        assert_eq!(e.solve(1000), LpStatus::Optimal);
        assert!((e.objective() - 5.0).abs() < 1e-12);
        e.set_bounds(0, 0.0, 4.0);
        assert_eq!(e.solve(1000), LpStatus::Optimal);
        assert!((e.objective() - 3.0).abs() < 1e-12);
    }
}

use std::fmt;

use crate::MilpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Var {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coefs: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    /// Signed amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// A minimization MILP with sparse rows. Binaries are variables flagged
/// `binary` with bounds inside [0, 1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Model {
    pub name: String,
    pub vars: Vec<Var>,
    pub rows: Vec<Row>,
    pub objective: Vec<(VarId, f64)>,
    pub obj_constant: f64,
}

impl Model {
    pub fn new(name: impl Into<String>) -> Self {
        Model {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        self.vars.push(Var {
            name: name.into(),
            lb,
            ub,
            binary: false,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(Var {
            name: name.into(),
            lb: 0.0,
            ub: 1.0,
            binary: true,
        });
        VarId(self.vars.len() - 1)
    }

    /// Adds a row. Repeated variables are merged and zero coefficients dropped.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coefs: &[(VarId, f64)],
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.rows.push(Row {
            name: name.into(),
            coefs: merge_terms(coefs),
            sense,
            // -0.0 would not survive a text round trip
            rhs: rhs + 0.0,
        });
        self.rows.len() - 1
    }

    pub fn add_objective(&mut self, v: VarId, c: f64) {
        self.objective.push((v, c));
    }

    /// Merges duplicate objective terms and orders them by variable index.
    pub fn normalize_objective(&mut self) {
        self.objective = merge_terms(&self.objective);
        self.objective.sort_by_key(|t| t.0);
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn binaries(&self) -> Vec<VarId> {
        (0..self.vars.len())
            .filter(|&j| self.vars[j].binary)
            .map(VarId)
            .collect()
    }

    pub fn var(&self, v: VarId) -> &Var {
        &self.vars[v.0]
    }

    pub fn find_var(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.obj_constant + self.objective.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// Dense objective coefficient vector (duplicates summed).
    pub fn dense_objective(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.vars.len()];
        for &(v, a) in &self.objective {
            c[v.0] += a;
        }
        c
    }

    pub fn max_row_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.violation(x))
            .fold(0.0, f64::max)
    }

    pub fn max_bound_violation(&self, x: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lb - xi).max(xi - v.ub).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Same model with every binary relaxed to a continuous [lb, ub] variable.
    pub fn relaxed(&self) -> Model {
        let mut m = self.clone();
        for v in &mut m.vars {
            v.binary = false;
        }
        m
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        for (j, v) in self.vars.iter().enumerate() {
            if v.lb.is_nan() || v.ub.is_nan() || v.lb > v.ub {
                return Err(MilpError::Malformed(format!(
                    "variable {} has bounds [{}, {}]",
                    v.name, v.lb, v.ub
                )));
            }
            if v.binary && (v.lb < 0.0 || v.ub > 1.0) {
                return Err(MilpError::Malformed(format!(
                    "binary {} (index {j}) has bounds outside [0, 1]",
                    v.name
                )));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() {
                return Err(MilpError::Malformed(format!("row {} has rhs {}", r.name, r.rhs)));
            }
            for &(v, a) in &r.coefs {
                if v.0 >= self.vars.len() {
                    return Err(MilpError::Malformed(format!(
                        "row {} references missing variable {v}",
                        r.name
                    )));
                }
                if !a.is_finite() {
                    return Err(MilpError::Malformed(format!("row {} has coefficient {a}", r.name)));
                }
            }
        }
        for &(v, c) in &self.objective {
            if v.0 >= self.vars.len() || !c.is_finite() {
                return Err(MilpError::Malformed(format!("bad objective term {v} * {c}")));
            }
        }
        Ok(())
    }
}

fn merge_terms(terms: &[(VarId, f64)]) -> Vec<(VarId, f64)> {
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
    for &(v, a) in terms {
        if let Some(t) = out.iter_mut().find(|t| t.0 == v) {
            t.1 += a;
        } else {
            out.push((v, a));
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_terms_merge() {
        let mut m = Model::new("t");
        let x = m.add_var("x", 0.0, 1.0);
        let y = m.add_var("y", 0.0, 1.0);
        m.add_row("r", &[(x, 1.0), (y, 2.0), (x, -1.0)], Sense::Le, 1.0);
        assert_eq!(m.rows[0].coefs, vec![(y, 2.0)]);
    }

    #[test]
    fn violation_by_sense() {
        let mut m = Model::new("t");
        let x = m.add_var("x", 0.0, 10.0);
        m.add_row("a", &[(x, 1.0)], Sense::Le, 1.0);
        m.add_row("b", &[(x, 1.0)], Sense::Ge, 3.0);
        m.add_row("c", &[(x, 1.0)], Sense::Eq, 2.0);
        let v: Vec<f64> = m.rows.iter().map(|r| r.violation(&[2.0])).collect();
        assert_eq!(v, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn validate_rejects_missing_var() {
        let mut m = Model::new("t");
        m.rows.push(Row {
            name: "r".into(),
            coefs: vec![(VarId(3), 1.0)],
            sense: Sense::Le,
            rhs: 0.0,
        });
        assert!(m.validate().is_err());
    }
}

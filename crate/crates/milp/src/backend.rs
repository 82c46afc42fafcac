//! Solver backends behind a common call. External solvers only ever see the
//! LP text file, and answer with a plain solution file:
//!
//! ```text
//! status optimal
//! objective 12.5
//! bound 12.5
//! x1 0.25
//! ...
//! ```
//!
//! An executable backend is invoked as `<exe> <model.lp> <solution.sol>`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use crate::bnb::{relative_gap, solve_milp, MipLimits, MipSolution, MipStatus};
use crate::lpformat::{parse_lp, write_lp};
use crate::model::Model;
use crate::MilpError;

pub const BACKEND_ENV: &str = "SFM_BACKEND";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Internal,
    /// In-process adapter to the `microlp` crate, fed through LP text.
    Microlp,
    Executable(PathBuf),
}

impl Backend {
    pub fn parse(desc: &str) -> Backend {
        match desc.trim() {
            "" | "internal" => Backend::Internal,
            "microlp" => Backend::Microlp,
            other => Backend::Executable(PathBuf::from(other.strip_prefix("exec:").unwrap_or(other))),
        }
    }

    /// Backend named by `SFM_BACKEND`, or the internal solver.
    pub fn from_env() -> Backend {
        std::env::var(BACKEND_ENV)
            .map(|v| Backend::parse(&v))
            .unwrap_or(Backend::Internal)
    }

    pub fn describe(&self) -> String {
        match self {
            Backend::Internal => "internal".into(),
            Backend::Microlp => "microlp".into(),
            Backend::Executable(p) => format!("exec:{}", p.display()),
        }
    }
}

pub fn backend_solve(model: &Model, backend: &Backend, limits: MipLimits) -> Result<MipSolution, MilpError> {
    match backend {
        Backend::Internal => solve_milp(model, limits),
        Backend::Microlp => {
            let text = write_lp(model);
            let t0 = Instant::now();
            let parsed = parse_lp(&text)?;
            let mut sol = microlp_solve(&parsed, limits)?;
            sol.x = remap(&parsed, model, &sol.x)?;
            sol.wall_time = t0.elapsed().as_secs_f64();
            finalize(model, sol)
        }
        Backend::Executable(exe) => {
            if !exe.is_file() {
                return Err(MilpError::BackendUnavailable(format!("{} not found", exe.display())));
            }
            let dir = tempfile::tempdir()?;
            let lp = dir.path().join("model.lp");
            let out = dir.path().join("model.sol");
            std::fs::write(&lp, write_lp(model))?;
            let t0 = Instant::now();
            let status = Command::new(exe)
                .arg(&lp)
                .arg(&out)
                .status()
                .map_err(|e| MilpError::BackendUnavailable(format!("{}: {e}", exe.display())))?;
            if !status.success() {
                return Err(MilpError::BackendFailed(format!("{} exited with {status}", exe.display())));
            }
            let text = std::fs::read_to_string(&out)
                .map_err(|e| MilpError::SolutionParse(format!("{}: {e}", out.display())))?;
            let mut sol = read_solution(model, &text)?;
            sol.wall_time = t0.elapsed().as_secs_f64();
            finalize(model, sol)
        }
    }
}

fn remap(from: &Model, to: &Model, x: &[f64]) -> Result<Vec<f64>, MilpError> {
    if x.iter().all(|v| v.is_nan()) {
        return Ok(vec![f64::NAN; to.vars.len()]);
    }
    let idx: HashMap<&str, usize> = from.vars.iter().enumerate().map(|(j, v)| (v.name.as_str(), j)).collect();
    to.vars
        .iter()
        .map(|v| {
            idx.get(v.name.as_str())
                .map(|&j| x[j])
                .ok_or_else(|| MilpError::SolutionParse(format!("variable {} missing", v.name)))
        })
        .collect()
}

/// Re-evaluates the objective on the original model and checks rows.
fn finalize(model: &Model, mut sol: MipSolution) -> Result<MipSolution, MilpError> {
    if sol.status.has_solution() {
        let viol = model.max_row_violation(&sol.x).max(model.max_bound_violation(&sol.x));
        if viol > 1e-6 {
            return Err(MilpError::BackendFailed(format!("returned point violates the model by {viol:e}")));
        }
        sol.objective = model.objective_value(&sol.x);
        if !sol.best_bound.is_finite() {
            sol.best_bound = sol.objective;
        }
        sol.best_bound = sol.best_bound.min(sol.objective);
        sol.gap = relative_gap(sol.objective, sol.best_bound);
    }
    Ok(sol)
}

/// Solves with the `microlp` crate. Variable order is the model's.
pub fn microlp_solve(model: &Model, limits: MipLimits) -> Result<MipSolution, MilpError> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOptions};
    let t0 = Instant::now();
    let c = model.dense_objective();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let mut vars = Vec::with_capacity(model.vars.len());
    for (v, &cj) in model.vars.iter().zip(&c) {
        let var = if v.binary {
            if v.lb == 0.0 && v.ub == 1.0 {
                p.add_binary_var(cj)
            } else {
                p.add_integer_var(cj, (v.lb.ceil() as i32, v.ub.floor() as i32))
            }
        } else {
            p.add_var(cj, (v.lb, v.ub))
        };
        vars.push(var);
    }
    for r in &model.rows {
        let op = match r.sense {
            crate::Sense::Le => ComparisonOp::Le,
            crate::Sense::Ge => ComparisonOp::Ge,
            crate::Sense::Eq => ComparisonOp::Eq,
        };
        let expr: Vec<(microlp::Variable, f64)> = r.coefs.iter().map(|&(v, a)| (vars[v.0], a)).collect();
        p.add_constraint(expr.as_slice(), op, r.rhs);
    }
    let mut opts = SolveOptions::default();
    opts.time_limit = limits.time_cap;
    opts.node_limit = Some(limits.node_cap as u64);
    opts.mip_gap = limits.rel_gap;
    let n = model.vars.len();
    let outcome = match p.solve_with(opts) {
        Ok(o) => o,
        Err(microlp::Error::Infeasible) => return Ok(MipSolution::empty(MipStatus::Infeasible, n)),
        Err(microlp::Error::Unbounded) => return Ok(MipSolution::empty(MipStatus::Unbounded, n)),
        Err(e) => return Err(MilpError::BackendFailed(format!("microlp: {e}"))),
    };
    let reason = outcome.termination_reason();
    let Some(sol) = outcome.solution() else {
        let status = match reason {
            microlp::TerminationReason::NodeLimit => MipStatus::NodeLimit,
            _ => MipStatus::TimeLimit,
        };
        return Ok(MipSolution::empty(status, n));
    };
    let status = match reason {
        microlp::TerminationReason::ProvenOptimal => MipStatus::Optimal,
        microlp::TerminationReason::MipGap => MipStatus::GapLimit,
        microlp::TerminationReason::NodeLimit => MipStatus::NodeLimit,
        _ => MipStatus::TimeLimit,
    };
    let x: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
    let stats = sol.stats();
    let objective = model.objective_value(&x);
    let best_bound = stats.best_bound.map(|b| b + model.obj_constant).unwrap_or(objective);
    Ok(MipSolution {
        status,
        objective,
        best_bound,
        gap: relative_gap(objective, best_bound),
        nodes: stats.nodes_solved as usize,
        lp_iterations: stats.lp_iterations as usize,
        wall_time: t0.elapsed().as_secs_f64(),
        x,
    })
}

pub fn write_solution(model: &Model, sol: &MipSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "status {}", sol.status.as_str());
    if sol.status.has_solution() {
        let _ = writeln!(out, "objective {:?}", sol.objective);
        let _ = writeln!(out, "bound {:?}", sol.best_bound);
        let _ = writeln!(out, "nodes {}", sol.nodes);
        for (v, x) in model.vars.iter().zip(&sol.x) {
            let _ = writeln!(out, "{} {:?}", v.name, x);
        }
    }
    out
}

pub fn read_solution(model: &Model, text: &str) -> Result<MipSolution, MilpError> {
    let idx: HashMap<&str, usize> = model.vars.iter().enumerate().map(|(j, v)| (v.name.as_str(), j)).collect();
    let mut sol = MipSolution::empty(MipStatus::Infeasible, model.vars.len());
    let mut status = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(key), Some(val), None) = (it.next(), it.next(), it.next()) else {
            return Err(MilpError::SolutionParse(format!("line {}: expected `key value`", ln + 1)));
        };
        let num = || -> Result<f64, MilpError> {
            val.parse::<f64>()
                .map_err(|_| MilpError::SolutionParse(format!("line {}: bad number {val}", ln + 1)))
        };
        match key {
            "status" => {
                status = Some(
                    MipStatus::parse(val)
                        .ok_or_else(|| MilpError::SolutionParse(format!("unknown status {val}")))?,
                )
            }
            "objective" => sol.objective = num()?,
            "bound" => sol.best_bound = num()?,
            "nodes" => sol.nodes = num()? as usize,
            name => {
                let j = *idx
                    .get(name)
                    .ok_or_else(|| MilpError::SolutionParse(format!("unknown variable {name}")))?;
                sol.x[j] = num()?;
            }
        }
    }
    sol.status = status.ok_or_else(|| MilpError::SolutionParse("missing status line".into()))?;
    if sol.status.has_solution() {
        if let Some(j) = sol.x.iter().position(|v| v.is_nan()) {
            return Err(MilpError::SolutionParse(format!("no value for {}", model.vars[j].name)));
        }
    }
    Ok(sol)
}

/// Entry point shared by solver executables: `<exe> in.lp out.sol`.
pub fn run_protocol(lp_path: &Path, sol_path: &Path, limits: MipLimits) -> Result<(), MilpError> {
    let text = std::fs::read_to_string(lp_path)?;
    let model = parse_lp(&text)?;
    let sol = microlp_solve(&model, limits)?;
    std::fs::write(sol_path, write_solution(&model, &sol))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Sense;

    #[test]
    fn descriptor_parsing() {
        assert_eq!(Backend::parse("internal"), Backend::Internal);
        assert_eq!(Backend::parse("microlp"), Backend::Microlp);
        assert_eq!(Backend::parse("exec:/bin/x"), Backend::Executable("/bin/x".into()));
    }

    #[test]
    fn missing_executable_is_unavailable() {
        let m = Model::new("e");
        let r = backend_solve(&m, &Backend::Executable("/nonexistent/solver".into()), MipLimits::default());
        assert!(matches!(r, Err(MilpError::BackendUnavailable(_))));
    }

    #[test]
    fn solution_file_round_trip() {
        let mut m = Model::new("s");
        let x = m.add_var("x", 0.0, 2.0);
        let b = m.add_binary("b");
        m.add_row("r", &[(x, 1.0), (b, 1.0)], Sense::Ge, 1.5);
        m.add_objective(x, 1.0);
        m.add_objective(b, 2.0);
        let s = solve_milp(&m, MipLimits::default()).unwrap();
        let back = read_solution(&m, &write_solution(&m, &s)).unwrap();
        assert_eq!(back.status, s.status);
        assert_eq!(back.x, s.x);
        assert_eq!(back.objective, s.objective);
    }
}

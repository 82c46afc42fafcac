//! `sfmctl`: run closed-loop experiments, open-loop envelope sweeps, and
//! validate scenario files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfm_control::metrics::read_report;
use sfm_control::scenario::{
    open_loop_sweep, summary_table, sweep_table, weight_sweep, write_sweep, OpenLoopInstance,
};
use sfm_control::{run_experiment, ExperimentMatrix, Mode, Scenario};

#[derive(Parser)]
#[command(name = "sfmctl", version, about = "Mixed-autonomy store-and-forward signal control experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or builtin:<name> (builtin:table2, builtin:grid2x2_mixed).
    #[arg(long, default_value = "builtin:grid2x2_mixed")]
    scenario: String,
    /// Solver: internal, microlp, or a path to an LP-file solver. Defaults to SFM_BACKEND, then internal.
    #[arg(long)]
    backend: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-loop runs over modes, horizons, envelope counts and replications.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes or "all". Defaults to the scenario's mode.
        #[arg(long)]
        mode: Option<String>,
        /// Replications; replication r uses seed base_seed + r.
        #[arg(long)]
        seeds: Option<usize>,
        /// Prediction horizons K.
        #[arg(long, value_delimiter = ',')]
        horizon: Vec<usize>,
        /// Envelope counts N.
        #[arg(long, value_delimiter = ',')]
        envelopes: Vec<usize>,
        /// One-at-a-time weight sweep, e.g. w4=0.0001,0.001.
        #[arg(long)]
        weight: Option<String>,
        /// Override the run length in cycles.
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Solve one frozen state for several envelope counts against a fine reference.
    OpenLoop {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        envelopes: Vec<usize>,
        /// Reference envelope count.
        #[arg(long)]
        reference: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Parse and check a scenario; --dump prints it with defaults filled in.
    Validate {
        #[arg(long, default_value = "builtin:grid2x2_mixed")]
        scenario: String,
        #[arg(long)]
        dump: bool,
    },
    /// Summarize an existing report.csv.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<Scenario, String> {
    let mut s = Scenario::load(&common.scenario).map_err(|e| e.to_string())?;
    if let Some(b) = &common.backend {
        s.solver.backend = Some(b.clone());
    }
    Ok(s)
}

fn parse_modes(text: &str) -> Result<Vec<Mode>, String> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(Mode::ALL.to_vec());
    }
    text.split(',').map(|m| Mode::parse(m.trim()).map_err(|e| e.to_string())).collect()
}

fn parse_weight(spec: &str) -> Result<(usize, Vec<f64>), String> {
    let (name, vals) = spec.split_once('=').ok_or("expected w<i>=v1,v2,...")?;
    let which = match name.trim() {
        "w1" => 1,
        "w2" => 2,
        "w3" => 3,
        "w4" => 4,
        other => return Err(format!("unknown weight '{other}'")),
    };
    let vals = vals
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("weight value '{v}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((which, vals))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { common, mode, seeds, horizon, envelopes, weight, cycles } => {
            let mut s = load(&common)?;
            if let Some(c) = cycles {
                s.cycles = c;
            }
            let mut m = ExperimentMatrix::single(s, common.out.clone());
            if let Some(text) = mode {
                m.modes = parse_modes(&text)?;
            }
            if let Some(n) = seeds {
                m.seeds = n;
            }
            if !horizon.is_empty() {
                m.horizons = horizon;
            }
            if !envelopes.is_empty() {
                m.envelopes = envelopes;
            }
            if let Some(w) = weight {
                let (which, vals) = parse_weight(&w)?;
                m.weights = weight_sweep(m.scenario.weights, which, &vals).map_err(|e| e.to_string())?;
            }
            let outcome = run_experiment(&m).map_err(|e| e.to_string())?;
            let rows: Vec<_> = outcome.records.iter().map(|r| r.row.clone()).collect();
            print!("{}", summary_table(&rows));
            println!("report: {}", common.out.join("report.csv").display());
            for (cell, r, e) in &outcome.failures {
                eprintln!("failed: {cell} seed{r}: {e}");
            }
            Ok(if outcome.is_success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::OpenLoop { common, envelopes, reference, horizon } => {
            let mut s = load(&common)?;
            if let Some(k) = horizon {
                s.controller.horizon = k;
            }
            let envs = if envelopes.is_empty() { s.open_loop.envelopes.clone() } else { envelopes };
            let reference = reference.unwrap_or(s.open_loop.reference);
            let inst = OpenLoopInstance::from_scenario(&s).map_err(|e| e.to_string())?;
            let backend = s.solver.backend();
            let (refrow, rows) =
                open_loop_sweep(&s, &inst, &envs, reference, &backend).map_err(|e| e.to_string())?;
            print!("{}", sweep_table(&refrow, &rows));
            std::fs::create_dir_all(&common.out).map_err(|e| e.to_string())?;
            let path = common.out.join("open_loop.csv");
            write_sweep(&path, &refrow, &rows).map_err(|e| e.to_string())?;
            println!("table: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { scenario, dump } => {
            let s = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            let net = s.network().map_err(|e| e.to_string())?;
            if dump {
                print!("{}", s.to_toml_string().map_err(|e| e.to_string())?);
            } else {
                println!(
                    "{}: {} links, {} nodes, {} destinations, {} demand rows, {} cycles, mode {}",
                    s.name,
                    net.num_links(),
                    net.num_nodes(),
                    net.destinations.len(),
                    s.demand.len(),
                    s.cycles,
                    s.controller.mode
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { out } => {
            let path = out.join("report.csv");
            let rows = read_report(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            if rows.is_empty() {
                return Err(format!("{} has no rows", path.display()));
            }
            print!("{}", summary_table(&rows));
            Ok(ExitCode::SUCCESS)
        }
    }
}

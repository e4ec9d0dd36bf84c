use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use gridweld::ecf::{FormulationOptions, Norm, SourceKind};
use gridweld::netmodel::{load_case, load_partition, Case, Partition};
use gridweld::report::{self, compare_modes, compare_table, run_study, Mode, StudyOptions};

#[derive(Debug, Parser)]
#[command(name = "gridweld", version, about = "Infeasibility localization for combined T&D networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a case and write report.json, heatmap.csv and optionally trace.jsonl.
    Solve(RunConfig),
}

#[derive(Debug, Clone, clap::Args)]
struct RunConfig {
    /// Case JSON file.
    #[arg(long)]
    case: PathBuf,
    /// Partition JSON file; defaults to one subproblem per network.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// central, dpdip, admm or compare.
    #[arg(long, default_value = "central")]
    mode: String,
    #[arg(long, default_value = "l2")]
    norm: Norm,
    /// current, power or admittance.
    #[arg(long, default_value = "current")]
    source: SourceKind,
    /// Reactive-only power sources (requires --source power).
    #[arg(long)]
    q_only: bool,
    #[arg(long)]
    tol_kkt: Option<f64>,
    /// Boundary tolerance of the D-PDIP exchange and of ADMM residuals.
    #[arg(long)]
    tol_gauss: Option<f64>,
    /// Epoch budget (dpdip) or iteration budget (admm).
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Iteration cap of each subproblem solve per epoch.
    #[arg(long)]
    inner_cap: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Also write trace.jsonl.
    #[arg(long)]
    trace: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

enum Selected {
    One(Mode),
    Compare,
}

fn options(cfg: &RunConfig) -> Result<(Selected, StudyOptions)> {
    let selected = match cfg.mode.as_str() {
        "compare" => Selected::Compare,
        m => Selected::One(m.parse::<Mode>().map_err(anyhow::Error::msg)?),
    };
    if cfg.q_only && cfg.source != SourceKind::Power {
        bail!("--q-only requires --source power");
    }
    let mut o = StudyOptions {
        formulation: FormulationOptions {
            norm: cfg.norm,
            source: cfg.source,
            q_only: cfg.q_only,
        },
        trace: cfg.trace,
        ..StudyOptions::default()
    };
    if let Some(t) = cfg.tol_kkt {
        o.solver.tol_kkt = t;
        o.gjn.solver.tol_kkt = t;
        o.admm.solver.tol_kkt = t;
    }
    if let Some(t) = cfg.tol_gauss {
        o.gjn.tol_gauss = t;
        o.admm.tol = t;
    }
    if let Some(n) = cfg.max_epochs {
        o.gjn.max_epochs = n;
        o.admm.max_iterations = n;
    }
    if let Some(n) = cfg.inner_cap {
        o.gjn.solver.inner_cap = Some(n);
        o.admm.solver.inner_cap = Some(n);
    }
    o.gjn.workers = cfg.workers;
    o.admm.workers = cfg.workers;
    o.solver.validate().map_err(anyhow::Error::msg)?;
    o.gjn.validate().map_err(anyhow::Error::msg)?;
    o.admm.validate().map_err(anyhow::Error::msg)?;
    Ok((selected, o))
}

fn load(cfg: &RunConfig, selected: &Selected) -> Result<(Case, Partition)> {
    let case = load_case(&cfg.case)?;
    let partition = match (&cfg.partition, selected) {
        (Some(p), Selected::One(Mode::Central)) => {
            warn!("central mode ignores --partition {}", p.display());
            Partition::per_network(&case)
        }
        (Some(p), _) => load_partition(p, &case)?,
        (None, _) => Partition::per_network(&case),
    };
    for w in &partition.warnings {
        warn!("{w}");
    }
    Ok((case, partition))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Ok(true) when every requested solve converged.
fn solve(cfg: &RunConfig) -> Result<bool> {
    let (selected, opts) = options(cfg)?;
    let (case, partition) = load(cfg, &selected)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    match selected {
        Selected::One(mode) => {
            let res = run_study(&case, &partition, mode, &opts);
            let r = &res.report;
            write(&cfg.out, "report.json", &r.to_json()?)?;
            report::export_heatmap(r, cfg.out.join("heatmap.csv"))?;
            if cfg.trace {
                write(&cfg.out, "trace.jsonl", &res.trace_text())?;
            }
            println!("status     {}", r.status);
            println!("objective  {:.6e}", r.objective);
            let [c0, c1] = &r.components;
            println!(
                "totals     Σ|{c0}| {:.6e}  Σ|{c1}| {:.6e}  Σ|s| {:.6e}",
                r.totals.components[0], r.totals.components[1], r.totals.magnitude
            );
            println!("nonzero    {} (> {:e} pu)", r.nonzero_count, r.nonzero_threshold);
            for w in report::localize_weak_nodes(r, r.nonzero_threshold).iter().take(10) {
                println!("  {:<16} {:<2} {:.6e}", w.bus, w.phase.to_string(), w.magnitude);
            }
            info!("wall time {:.3} s", res.wall_time.as_secs_f64());
            Ok(r.converged)
        }
        Selected::Compare => {
            let (report, rows, results) = compare_modes(&case, &partition, &opts);
            write(&cfg.out, "report.json", &report.to_json()?)?;
            if cfg.trace {
                let text: String = results.iter().map(|r| r.trace_text()).collect();
                write(&cfg.out, "trace.jsonl", &text)?;
            }
            print!("{}", compare_table(&rows));
            Ok(rows.iter().all(|r| r.converged))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDWELD_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Solve(cfg) => match solve(&cfg) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

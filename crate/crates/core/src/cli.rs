//! `pcbf` command line.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 configuration error,
//! 3 internal error, 4 provenance mismatch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::builder::MembershipMode;
use crate::error::CbfError;
use crate::field::BarrierField;
use crate::mpc::{run_mpc, MpcMode};
use crate::plot::{render_svg, Trace, TraceStyle};
use crate::scenario::ScenarioConfig;
use crate::simulator::{
    cbf_condition_probe, read_csv_trajectory, run_baseline_h, run_filtered, ProbeConfig, RunLog,
};
use crate::validate::run_validation;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;
pub const EXIT_PROVENANCE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "pcbf", about = "Predictive control barrier functions for a kinematic bicycle")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    #[value(name = "someTime", alias = "some-time")]
    SomeTime,
    Terminal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MpcArg {
    Maxmin,
    Cost,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the grid and write a CBF1 field plus sidecar.
    Build {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; falls back to CBF_THREADS, then 1.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Closed-loop run with the safety filter.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Filter with b = h instead of the field.
        #[arg(long)]
        baseline_h: bool,
    },
    /// Receding-horizon run.
    Mpc {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: MpcArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Run the field checks and print a PASS/FAIL table.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        quick: bool,
    },
    /// CBF condition probe at random states.
    Probe {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Render run CSVs as SVG.
    Plot {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<CbfError> for Failure {
    fn from(e: CbfError) -> Self {
        let code = match &e {
            CbfError::Config { .. }
            | CbfError::Json(_)
            | CbfError::Io(_)
            | CbfError::CorruptFile(_)
            | CbfError::VersionMismatch(_) => EXIT_CONFIG,
            CbfError::Provenance { .. } => EXIT_PROVENANCE,
            CbfError::Domain(_) | CbfError::OutOfDomain { .. } | CbfError::Infeasible(_) => EXIT_INTERNAL,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_err(msg: String) -> Failure {
    Failure { code: EXIT_CONFIG, message: msg }
}

fn input_file(p: &Path) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(config_err(format!("{}: no such file", p.display())))
    }
}

fn output_file(p: &Path) -> Result<(), Failure> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(config_err(format!("{}: directory does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

fn load_field(cfg: &ScenarioConfig, path: &Path) -> Result<(ScenarioConfig, BarrierField), Failure> {
    let (field, meta) = BarrierField::load(path)?;
    let adopted = cfg.check_provenance(&meta)?;
    Ok((adopted, field))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure { code: EXIT_INTERNAL, message: e.to_string() })
}

fn threads_from(arg: Option<usize>) -> Result<usize, Failure> {
    match arg {
        Some(0) => Err(config_err("--threads must be >= 1".into())),
        Some(n) => Ok(n),
        None => match std::env::var("CBF_THREADS") {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| config_err(format!("CBF_THREADS: invalid value {v:?}"))),
            Err(_) => Ok(1),
        },
    }
}

fn summary_line(log: &RunLog) -> String {
    let s = &log.summary;
    format!(
        "min_h={} min_H={} infeasible_steps={} filtered_steps={} collision={} filter_energy={} final=({}, {}, {})",
        s.min_h,
        s.min_barrier,
        s.infeasible_steps,
        s.filtered_steps,
        s.collision,
        s.filter_energy,
        s.final_state.x,
        s.final_state.y,
        s.final_state.psi
    )
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Build { scenario, out, threads, mode } => {
            input_file(&scenario)?;
            output_file(&out)?;
            let threads = threads_from(threads)?;
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(m) = mode {
                cfg = cfg.with_membership(match m {
                    ModeArg::SomeTime => MembershipMode::SomeTime,
                    ModeArg::Terminal => MembershipMode::Terminal,
                });
            }
            let started = Instant::now();
            let (field, stats, meta) = cfg.build_field(threads)?;
            field.save(&out, &meta)?;
            let lip = field.lipschitz_report();
            println!(
                "nodes={} computed={} outside_mask={} infeasible_h_negative={} infeasible_solve={}",
                cfg.grid.node_count(),
                stats.computed,
                stats.outside_mask,
                stats.infeasible_h_negative,
                stats.infeasible_solve
            );
            println!("feasible_fraction={}", stats.feasible_fraction());
            println!(
                "lipschitz x={:.4} y={:.4} psi={:.4} max={:.4}",
                lip.max_slope_x, lip.max_slope_y, lip.max_slope_psi, lip.max_slope
            );
            println!("wall_time_s={:.2} threads={threads}", started.elapsed().as_secs_f64());
            Ok(EXIT_OK)
        }
        Command::Simulate { scenario, field, out, svg, baseline_h } => {
            input_file(&scenario)?;
            if let Some(f) = &field {
                input_file(f)?;
            }
            output_file(&out)?;
            if let Some(s) = &svg {
                output_file(s)?;
            }
            if field.is_none() && !baseline_h {
                return Err(config_err("--field is required unless --baseline-h is given".into()));
            }
            let cfg = ScenarioConfig::load(&scenario)?;
            let loaded = match &field {
                Some(p) => Some(load_field(&cfg, p)?),
                None => None,
            };
            let filtered = match &loaded {
                Some((c, f)) => Some(run_filtered(c, f)?),
                None => None,
            };
            let baseline = if baseline_h { Some(run_baseline_h(&cfg)?) } else { None };
            let primary = baseline.as_ref().or(filtered.as_ref()).expect("one run requested");
            write(&out, &primary.to_csv())?;
            if let Some(f) = &filtered {
                println!("filtered {}", summary_line(f));
            }
            if let Some(b) = &baseline {
                println!("baseline {}", summary_line(b));
            }
            if let Some(path) = svg {
                let ft = filtered.as_ref().map(|l| l.trajectory());
                let bt = baseline.as_ref().map(|l| l.trajectory());
                let mut traces = Vec::new();
                if let Some(t) = &bt {
                    traces.push(Trace { states: t, style: TraceStyle::Baseline, label: "b = h" });
                }
                if let Some(t) = &ft {
                    traces.push(Trace { states: t, style: TraceStyle::Filtered, label: "H_T" });
                }
                write(&path, &render_svg(&cfg, &traces))?;
            }
            Ok(EXIT_OK)
        }
        Command::Mpc { scenario, mode, out, field } => {
            input_file(&scenario)?;
            if let Some(f) = &field {
                input_file(f)?;
            }
            output_file(&out)?;
            let cfg = ScenarioConfig::load(&scenario)?;
            let loaded = match &field {
                Some(p) => Some(load_field(&cfg, p)?.1),
                None => None,
            };
            let mode = match mode {
                MpcArg::Maxmin => MpcMode::MaxMin,
                MpcArg::Cost => MpcMode::GeneralCost,
            };
            let run = run_mpc(&cfg, mode, loaded.as_ref())?;
            write(&out, &run.to_csv())?;
            let s = &run.summary;
            println!(
                "steps={} feasible_steps={} infeasible_solves={} candidate_infeasible={} min_h={} mean_solve_s={:.4}",
                s.steps,
                s.steps - s.infeasible_solves,
                s.infeasible_solves,
                s.candidate_infeasible,
                s.min_h,
                s.mean_solve_seconds
            );
            if let Some(d) = s.worst_margin_drop {
                println!("worst_margin_drop={d}");
            }
            if let Some(a) = &s.aborted {
                println!("aborted: {a}");
                return Ok(EXIT_VALIDATION);
            }
            Ok(EXIT_OK)
        }
        Command::Validate { scenario, field, quick } => {
            input_file(&scenario)?;
            input_file(&field)?;
            let cfg = ScenarioConfig::load(&scenario)?;
            let (cfg, field) = load_field(&cfg, &field)?;
            let checks = run_validation(&cfg, &field, quick, cli.seed)?;
            for c in &checks {
                println!("{:<18} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Probe { scenario, field, samples, tolerance } => {
            input_file(&scenario)?;
            input_file(&field)?;
            let cfg = ScenarioConfig::load(&scenario)?;
            let (cfg, field) = load_field(&cfg, &field)?;
            let pc = ProbeConfig { samples, tolerance, seed: cli.seed, ..Default::default() };
            let rep = cbf_condition_probe(&field, &cfg.bicycle, &cfg.bounds, &cfg.filter.alpha, &pc)?;
            println!(
                "samples={} violations={} worst_margin={} worst_state={:?}",
                rep.samples.len(),
                rep.violations,
                rep.worst_margin,
                rep.worst_state
            );
            Ok(if rep.violations == 0 { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Plot { scenario, csv, baseline, out } => {
            input_file(&scenario)?;
            input_file(&csv)?;
            if let Some(b) = &baseline {
                input_file(b)?;
            }
            output_file(&out)?;
            let cfg = ScenarioConfig::load(&scenario)?;
            let read = |p: &Path| -> Result<Vec<_>, Failure> {
                let text = std::fs::read_to_string(p).map_err(CbfError::from)?;
                Ok(read_csv_trajectory(&text)?)
            };
            let main = read(&csv)?;
            let base = match &baseline {
                Some(b) => Some(read(b)?),
                None => None,
            };
            let mut traces = Vec::new();
            if let Some(b) = &base {
                traces.push(Trace { states: b, style: TraceStyle::Baseline, label: "baseline" });
            }
            traces.push(Trace { states: &main, style: TraceStyle::Filtered, label: "run" });
            write(&out, &render_svg(&cfg, &traces))?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match std::panic::catch_unwind(move || execute(cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            f.code
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}

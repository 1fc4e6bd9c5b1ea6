//! Command-line front end: `run`, `compare`, `gradcheck`, `datagen`,
//! `report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::datagen::{export_shards, generate_setting};
use crate::diagnostics::{check_descent, lambda_report, dual_primal_ratio, CellTrace};
use crate::error::{Error, Result};
use crate::learner::{gradcheck, GradCheckInstance, DEFAULT_FD_STEP};
use crate::methods::{MethodContext, MethodRegistry, MethodResult};
use crate::metrics::{emit_csv, mean_std, read_csv, MetricsRecord};

const ALL_METHODS: &str = "learn2pfed,local,fedavg,fedprox,fedavg_ft,fedprox_ft,ditto";

#[derive(Debug, Parser)]
#[command(name = "learn2pfed", version, about = "Unrolled-ADMM personalized federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and write per-round metrics.
    Run(ExperimentArgs),
    /// Train several methods over repeated trials and print a mean ± std table.
    Compare(ExperimentArgs),
    /// Check reverse-mode gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write synthetic shards as CSV.
    Datagen(ExperimentArgs),
    /// Summarise a saved metrics file.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub setting: Option<u8>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dump every client/server message.
    #[arg(long)]
    pub transcript: bool,
    /// Write Lagrangian descent, step-ratio and Λ reports.
    #[arg(long)]
    pub diagnostics: bool,
    /// `exact` or `federated_local`.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub clients: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV, or a directory containing `metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

enum Mode {
    Run,
    Compare,
    Datagen,
}

impl ExperimentArgs {
    fn resolve(&self, mode: Mode) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let mut cfg = ExperimentConfig::default();
                if let Mode::Compare = mode {
                    cfg.experiment.methods = ALL_METHODS.split(',').map(String::from).collect();
                    cfg.experiment.trials = 5;
                }
                cfg
            }
        };
        let e = &mut cfg.experiment;
        if let Some(s) = self.setting {
            e.setting = s;
        }
        if let Some(m) = &self.method {
            e.methods = m.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(t) = self.trials {
            e.trials = t;
        }
        if let Some(s) = self.seed {
            e.seed = s;
        }
        if let Some(r) = self.rounds {
            e.rounds = r;
        }
        if let Some(o) = &self.out {
            e.out_dir = o.clone();
        }
        e.transcript |= self.transcript;
        e.diagnostics |= self.diagnostics;
        if let Some(l) = self.layers {
            cfg.learn2pfed.layers = l;
        }
        if let Some(p) = &self.policy {
            cfg.learn2pfed.policy = p.clone();
        }
        if let Mode::Run = mode {
            if cfg.experiment.methods.len() != 1 {
                return Err(Error::Config("`run` takes exactly one method".into()));
            }
        }
        cfg.validate()?;
        let registry = MethodRegistry::default();
        for m in &cfg.experiment.methods {
            registry.get(m)?;
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 1 runtime failure, 2 usage or
/// configuration error.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSetting(_) => 2,
        _ => 1,
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.resolve(Mode::Run)?;
            run_trials(&cfg, out)?;
            Ok(0)
        }
        Command::Compare(args) => {
            let cfg = args.resolve(Mode::Compare)?;
            run_trials(&cfg, out)?;
            Ok(0)
        }
        Command::Gradcheck(args) => gradcheck_command(&args, out),
        Command::Datagen(args) => {
            let cfg = args.resolve(Mode::Datagen)?;
            for trial in 0..cfg.experiment.trials {
                let shards = generate_setting(&cfg.setting_spec(trial))?;
                let dir = if cfg.experiment.trials == 1 {
                    cfg.experiment.out_dir.clone()
                } else {
                    cfg.experiment.out_dir.join(format!("trial_{trial}"))
                };
                export_shards(&shards, &dir)?;
                writeln!(out, "wrote {} shards to {}", shards.len(), dir.display())?;
            }
            Ok(0)
        }
        Command::Report(args) => report_command(&args, out),
    }
}

struct TrialOutcome {
    method: String,
    trial: usize,
    result: std::result::Result<MethodResult, Error>,
    wall_ms: u64,
}

fn run_trials(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let e = &cfg.experiment;
    let registry = MethodRegistry::default();
    std::fs::create_dir_all(&e.out_dir)?;
    let mut outcomes = Vec::new();
    for trial in 0..e.trials {
        let shards = generate_setting(&cfg.setting_spec(trial))?;
        let ctx = MethodContext {
            shards: &shards,
            config: cfg,
            seed: cfg.trial_seed(trial),
        };
        for name in &e.methods {
            let start = Instant::now();
            let result = registry.get(name)?.run(&ctx);
            let wall_ms = if e.timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            if let Err(err) = &result {
                if exit_code(err) == 2 {
                    return Err(err.clone());
                }
            }
            outcomes.push(TrialOutcome {
                method: name.clone(),
                trial,
                result,
                wall_ms,
            });
        }
    }

    let mut records = Vec::new();
    for o in &outcomes {
        if let Ok(r) = &o.result {
            for m in r.series.iter().filter(|m| m.round > 0) {
                let wall = if m.round == e.rounds { o.wall_ms } else { 0 };
                records.push(MetricsRecord::aggregate(&o.method, o.trial, m, wall));
                if e.per_client_rows {
                    records.extend(MetricsRecord::per_client(&o.method, o.trial, m));
                }
            }
        }
    }
    let metrics_path = e.out_dir.join("metrics.csv");
    emit_csv(&records, &metrics_path)?;

    let mut summary = String::from("method,mean_test_rmse,std_test_rmse,trials,diverged,failed\n");
    writeln!(out, "{:<12} {:>12} {:>12} {:>9}", "method", "mean_rmse", "std_rmse", "diverged")?;
    for name in &e.methods {
        let mine: Vec<&TrialOutcome> = outcomes.iter().filter(|o| &o.method == name).collect();
        let finals: Vec<f64> = mine
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .filter(|r| !r.diverged())
            .map(|r| r.final_test_rmse())
            .collect();
        let diverged = mine
            .iter()
            .filter(|o| o.result.as_ref().is_ok_and(|r| r.diverged()))
            .count();
        let failed = mine.iter().filter(|o| o.result.is_err()).count();
        let (mean, std) = mean_std(&finals);
        writeln!(
            out,
            "{:<12} {:>12.6} {:>12.6} {:>6}/{}",
            name,
            mean,
            std,
            diverged + failed,
            mine.len()
        )?;
        summary += &format!("{name},{mean},{std},{},{diverged},{failed}\n", mine.len());
        for o in &mine {
            if let Err(err) = &o.result {
                writeln!(out, "  trial {} failed: {err}", o.trial)?;
            }
        }
    }
    std::fs::write(e.out_dir.join("summary.csv"), summary)?;

    if e.transcript || e.diagnostics {
        for o in &outcomes {
            let Ok(r) = &o.result else { continue };
            let Some(run) = &r.unrolled else { continue };
            if let Some(t) = &run.transcript {
                let path = e.out_dir.join(format!("transcript_{}_trial{}.txt", o.method, o.trial));
                std::fs::write(&path, t.dump())?;
            }
            if e.diagnostics {
                let path = e.out_dir.join(format!("diagnostics_{}_trial{}.txt", o.method, o.trial));
                std::fs::write(&path, diagnostics_text(run)?)?;
            }
        }
    }
    writeln!(out, "metrics written to {}", metrics_path.display())?;
    Ok(())
}

fn diagnostics_text(run: &crate::federation::ExperimentRun) -> Result<String> {
    let mut s = String::new();
    if let Some(tape) = &run.last_tape {
        let trace = CellTrace::from_tape(tape, &run.data, &run.params)?;
        let report = check_descent(&trace, false, false);
        s += "final pass Lagrangian per cell\n";
        for l in &trace.layers {
            s += &format!("  layer {:>3}: {:.9e}\n", l.layer, l.lagrangian);
        }
        s += &format!(
            "descent: {} comparisons, {} violations ({} anomalous)\n",
            report.checked,
            report.violations.len(),
            report.anomalous()
        );
        s += "dual/primal step ratio per client\n";
        for &i in tape.active() {
            match dual_primal_ratio(&trace, i) {
                Ok(r) => s += &format!("  client {i:>3}: {r:.6}\n"),
                Err(e) => s += &format!("  client {i:>3}: {e}\n"),
            }
        }
    }
    s += &lambda_report(&run.params).to_string();
    Ok(s)
}

fn gradcheck_command(args: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if args.clients == 0 || args.layers == 0 || args.dim == 0 || args.samples == 0 {
        return Err(Error::Config("gradcheck sizes must be positive".into()));
    }
    let inst = GradCheckInstance::random(args.seed, args.clients, args.layers, args.dim, args.samples)?;
    let report = gradcheck(&inst, DEFAULT_FD_STEP)?;
    let worst = report.max_rel_err();
    writeln!(
        out,
        "checked {} coordinates, skipped {} near kinks, max relative error {worst:.3e}",
        report.checked.len(),
        report.skipped.len()
    )?;
    if let Some(w) = report.worst() {
        writeln!(out, "worst: {} analytic {:.9e} numeric {:.9e}", w.coord, w.analytic, w.numeric)?;
    }
    let pass = worst < args.tolerance;
    writeln!(out, "{}", if pass { "PASS" } else { "FAIL" })?;
    Ok(if pass { 0 } else { 1 })
}

fn report_command(args: &ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let path = match (&args.metrics, &args.out) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => PathBuf::from("results"),
    };
    let path = if path.is_dir() { path.join("metrics.csv") } else { path };
    if !path.exists() {
        return Err(Error::Config(format!("metrics file {} not found", path.display())));
    }
    write_report(&read_csv(&path)?, out)?;
    Ok(0)
}

/// Final-round mean ± std per method, divergence counts and the trend of
/// the final-cell Lagrangian.
pub fn write_report(records: &[MetricsRecord], out: &mut dyn Write) -> Result<()> {
    let mut by_method: BTreeMap<&str, BTreeMap<usize, Vec<&MetricsRecord>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.client.is_none()) {
        by_method
            .entry(r.method.as_str())
            .or_default()
            .entry(r.trial)
            .or_default()
            .push(r);
    }
    writeln!(
        out,
        "{:<12} {:>7} {:>12} {:>12} {:>9} {:>16}",
        "method", "rounds", "mean_rmse", "std_rmse", "diverged", "lagrangian_drop"
    )?;
    for (method, trials) in &by_method {
        let mut finals = Vec::new();
        let mut diverged = 0;
        let mut drops = Vec::new();
        let mut rounds = 0;
        for rows in trials.values() {
            let last = rows.iter().max_by_key(|r| r.round).expect("non-empty");
            rounds = rounds.max(last.round);
            if last.diverged {
                diverged += 1;
            } else {
                finals.push(last.test_rmse);
            }
            let lags: Vec<f64> = rows.iter().filter_map(|r| r.lagrangian_final_cell).collect();
            if let (Some(first), Some(end)) = (lags.first(), lags.last()) {
                drops.push(first - end);
            }
        }
        let (mean, std) = mean_std(&finals);
        let drop = if drops.is_empty() {
            "-".to_string()
        } else {
            format!("{:.4e}", mean_std(&drops).0)
        };
        writeln!(
            out,
            "{:<12} {:>7} {:>12.6} {:>12.6} {:>6}/{} {:>16}",
            method,
            rounds,
            mean,
            std,
            diverged,
            trials.len(),
            drop
        )?;
    }
    Ok(())
}

/// Entry point used by the binary.
pub fn main_exit_code() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}


use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctmr::error::{CtmError, Result};
use ctmr::harness::{
    disposition_sweep, linspace, run_scenario, sweep_csv, sweep_is_monotone, verify_location_independence,
    verify_proportionality, LocationCheck, ProportionalityCheck, RunRecord,
};
use ctmr::scenario::{builtin, builtin_names, Fault, FaultSpec, ScenarioConfig};

#[derive(Parser)]
#[command(name = "ctmr", version, about = "Tick-synchronous conscious Turing machine robot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its summary as JSON.
    Run(RunArgs),
    /// Statistical checks of the up-tree competition.
    #[command(subcommand)]
    Verify(Verify),
    /// Sweep the disposition and report win shares by sign (CSV).
    Sweep(SweepArgs),
    /// Run a scenario with a fault injected at a given tick.
    Inject(InjectArgs),
    /// List the bundled scenarios.
    List,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Bundled scenario name (see `ctmr list`).
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    disposition: Option<f64>,
    /// Write the JSONL trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the model-of-the-world dump here.
    #[arg(long)]
    motw_dump: Option<PathBuf>,
    /// Check every root winner's sums against an independent recount.
    #[arg(long)]
    audit: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.scenario, &self.config) {
            (Some(name), None) => builtin(name).ok_or_else(|| {
                CtmError::Config(format!("unknown scenario {name:?}; try one of {:?}", builtin_names()))
            })?,
            (None, Some(path)) => ScenarioConfig::load(path)?,
            _ => return Err(CtmError::Config("give --scenario or --config".into())),
        };
        if let Some(t) = self.ticks {
            cfg.ticks = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.disposition {
            cfg.disposition = d;
        }
        if self.trace.is_some() {
            cfg.output.trace = self.trace.clone();
        }
        if self.motw_dump.is_some() {
            cfg.output.motw_dump = self.motw_dump.clone();
        }
        cfg.audit |= self.audit;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Args)]
struct InjectArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `cut_uptree_edge:NAME|LEVEL/INDEX`, `zero_confidence:NAME`,
    /// `mislabel:SKETCH=LABEL[/REPLACED]` or `pin_disposition:D`.
    #[arg(long)]
    fault: String,
    #[arg(long)]
    at: u64,
}

#[derive(Args)]
struct CompetitionArgs {
    #[arg(long, default_value_t = 10)]
    height: u32,
    /// Comma-separated leaf weights; remaining leaves weigh 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [11.0, 9.0])]
    weights: Vec<f64>,
    #[arg(long, alias = "d", default_value_t = 0.0, allow_hyphen_values = true)]
    disposition: f64,
    #[arg(long, default_value_t = 200_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Verify {
    /// Empirical win frequencies against the exact law.
    Proportionality {
        #[command(flatten)]
        args: CompetitionArgs,
        #[arg(long, alias = "tol", default_value_t = 0.005)]
        tolerance: f64,
    },
    /// Win distributions across random leaf placements.
    Location {
        #[command(flatten)]
        args: CompetitionArgs,
        #[arg(long, default_value_t = 5)]
        permutations: usize,
        #[arg(long, alias = "tol", default_value_t = 0.01)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Only the disposition can be swept.
    #[arg(long, default_value = "d")]
    param: String,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 9)]
    steps: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
          default_values_t = [5.0, -4.0, 2.0, -3.0, 1.0, -1.0, 0.5, -6.0])]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn run_ok(rec: &RunRecord) -> bool {
    rec.audit.as_ref().map_or(true, |a| a.mismatches == 0)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::List => {
            for name in builtin_names() {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Run(args) => {
            let cfg = args.scenario.load()?;
            let rec = run_scenario(&cfg)?;
            println!("{}", json(&rec));
            Ok(run_ok(&rec))
        }
        Command::Inject(args) => {
            let mut cfg = args.scenario.load()?;
            let fault: Fault = args.fault.parse()?;
            cfg.faults.push(FaultSpec { at: args.at, fault });
            let rec = run_scenario(&cfg)?;
            println!("{}", json(&rec));
            Ok(run_ok(&rec))
        }
        Command::Verify(Verify::Proportionality { args, tolerance }) => {
            let report = verify_proportionality(&ProportionalityCheck {
                height: args.height,
                weights: args.weights,
                disposition: args.disposition,
                trials: args.trials,
                tolerance,
                seed: args.seed,
            })?;
            let nonzero: Vec<_> = report
                .expected
                .iter()
                .zip(&report.empirical)
                .enumerate()
                .filter(|(_, (e, f))| **e > 0.0 || **f > 0.0)
                .map(|(i, (e, f))| serde_json::json!({"leaf": i, "expected": e, "empirical": f}))
                .collect();
            println!(
                "{}",
                json(&serde_json::json!({
                    "trials": report.trials,
                    "leaves": nonzero,
                    "max_abs_error": report.max_abs_error,
                    "total_variation": report.total_variation,
                    "tolerance": report.tolerance,
                    "exhaustive_max_error": report.exhaustive_max_error,
                    "seconds": report.seconds,
                    "pass": report.pass,
                }))
            );
            Ok(report.pass)
        }
        Command::Verify(Verify::Location {
            args,
            permutations,
            tolerance,
        }) => {
            let report = verify_location_independence(&LocationCheck {
                height: args.height,
                weights: args.weights.clone(),
                disposition: args.disposition,
                trials: args.trials,
                permutations,
                tolerance,
                seed: args.seed,
            })?;
            let heads: Vec<Vec<f64>> = report
                .distributions
                .iter()
                .map(|d| d.iter().take(args.weights.len()).copied().collect())
                .collect();
            println!(
                "{}",
                json(&serde_json::json!({
                    "arrangements": report.arrangements.len(),
                    "distributions": heads,
                    "max_pairwise_tv": report.max_pairwise_tv,
                    "tolerance": report.tolerance,
                    "seconds": report.seconds,
                    "pass": report.pass,
                }))
            );
            Ok(report.pass)
        }
        Command::Sweep(args) => {
            if args.param != "d" && args.param != "disposition" {
                return Err(CtmError::InvalidInput(format!("cannot sweep {:?}", args.param)));
            }
            let ds = linspace(args.from, args.to, args.steps);
            let rows = disposition_sweep(&args.weights, &ds, args.trials, args.seed)?;
            let csv = sweep_csv(&rows);
            match &args.out {
                Some(p) => std::fs::write(p, &csv)?,
                None => print!("{csv}"),
            }
            let has_pos = args.weights.iter().any(|w| *w > 0.0);
            let has_neg = args.weights.iter().any(|w| *w < 0.0);
            let extremes = rows.iter().all(|r| {
                (r.disposition < 1.0 || !has_pos || r.negative == 0.0)
                    && (r.disposition > -1.0 || !has_neg || r.positive == 0.0)
            });
            Ok(sweep_is_monotone(&rows) && extremes)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

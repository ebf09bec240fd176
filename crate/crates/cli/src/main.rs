//! Batch command-line front-end: loads one JSON configuration, applies
//! overrides, and emits curve tables, consistency reports, solved value
//! grids and simulated path bundles into an output directory. Runs are
//! deterministic: the same configuration and seed produce byte-identical
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use spotfutures::checks;
use spotfutures::persist;
use spotfutures::policy::{MyopicPolicy, Policy, ZeroPolicy};
use spotfutures::pricing::write_curve_csv;
use spotfutures::sim::write_bundle_csv;
use spotfutures::{
    delivery_closure_check, evaluate_policy, simulate_bundle, solve_hjb, EngineConfig, GridPolicy,
};

#[derive(Parser)]
#[command(
    name = "spotfutures",
    version,
    about = "Structural commodity futures engine"
)]
struct Cli {
    /// Engine configuration (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (defaults to the config's out_dir, then "out").
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override a config entry, e.g. --set demand.sigma=0.3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyName {
    Zero,
    Myopic,
    Optimal,
}

#[derive(Subcommand)]
enum Command {
    /// Futures price/vol/drift table over a time-demand grid (CSV).
    PriceCurve {
        /// Comma-separated evaluation times (default: 9 points up to maturity).
        #[arg(long)]
        times: Option<String>,
        /// Comma-separated demand levels (default: the configured demand grid).
        #[arg(long)]
        demands: Option<String>,
    },
    /// Spot price as a function of demand (CSV).
    SpotMap,
    /// No-arbitrage consistency checks; exits 0 iff all pass.
    Validate,
    /// Solve the dynamic program and persist the value grid.
    HjbSolve {
        /// Also export the policy slice nearest to this time as CSV.
        #[arg(long)]
        policy_slice: Option<f64>,
    },
    /// Simulate a path bundle under a named policy.
    Simulate {
        #[arg(long, value_enum, default_value = "zero")]
        policy: PolicyName,
        /// Persisted value grid base path (required for --policy optimal).
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Aggregate JSON report of every check and diagnostic.
    Report,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("override '{item}' is not KEY=VALUE"))
        })
        .collect()
}

fn parse_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("'{s}' is not a number"))
        })
        .collect()
}

fn default_times(maturity: f64) -> Vec<f64> {
    (0..=8).map(|i| maturity * i as f64 / 8.0).collect()
}

fn default_demands(cfg: &EngineConfig) -> Vec<f64> {
    let n = cfg.grid.nd;
    let (lo, hi) = (cfg.grid.demand_min, cfg.grid.demand_max);
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let text = fs::read_to_string(&cli.config)
        .with_context(|| format!("reading config {}", cli.config.display()))?;
    let overrides = parse_overrides(&cli.overrides)?;
    let mut cfg = EngineConfig::from_json_with_overrides(&text, &overrides)
        .context("loading configuration")?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for warning in cfg.warnings() {
        eprintln!("warning: {warning}");
    }

    let out_dir = cli
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    // Echo the effective post-override configuration next to the artifacts.
    write_text(
        &out_dir.join("effective_config.json"),
        &cfg.to_json_pretty(),
    )?;

    let fm = cfg.futures_model();
    match cli.command {
        Command::PriceCurve { times, demands } => {
            let times = match times {
                Some(raw) => parse_list(&raw)?,
                None => default_times(fm.maturity),
            };
            let demands = match demands {
                Some(raw) => parse_list(&raw)?,
                None => default_demands(&cfg),
            };
            let table = fm.curve_table(&times, &demands)?;
            let mut csv = Vec::new();
            write_curve_csv(&mut csv, &table)?;
            write_text(&out_dir.join("price_curve.csv"), &String::from_utf8(csv)?)?;
            Ok(true)
        }
        Command::SpotMap => {
            let mut csv = String::from("d,price\n");
            for d in default_demands(&cfg) {
                csv.push_str(&format!("{},{}\n", d, cfg.spot.price(d)));
            }
            write_text(&out_dir.join("spot_map.csv"), &csv)?;
            Ok(true)
        }
        Command::Validate => {
            let report = checks::run_validate(&cfg)?;
            for check in &report.checks {
                println!(
                    "{}: {} — {}",
                    check.name,
                    if check.passed { "PASS" } else { "FAIL" },
                    check.details
                );
            }
            write_text(
                &out_dir.join("validate.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            Ok(report.all_passed)
        }
        Command::HjbSolve { policy_slice } => {
            let grid = solve_hjb(&fm, &cfg.producer, &cfg.grid)?;
            println!(
                "solved {} time slices ({} nodes each); value at the initial state: {:.6}",
                grid.n_steps() + 1,
                grid.wealth.len() * grid.stock.len() * grid.demand.len(),
                grid.initial_value()
            );
            println!(
                "scheme: dt = {:.5}, CFL load = {:.3}, convexity clamps = {}",
                grid.meta.diagnostics.dt,
                grid.meta.diagnostics.cfl_bound,
                grid.meta.diagnostics.convexity_clamps
            );
            let base = out_dir.join("value_grid");
            persist::save_value_grid(&grid, &base)?;
            println!("wrote {}.json and {}.bin", base.display(), base.display());
            if let Some(t) = policy_slice {
                let mut csv = Vec::new();
                spotfutures::control::write_policy_slice_csv(&grid, t, &mut csv)?;
                write_text(&out_dir.join("policy_slice.csv"), &String::from_utf8(csv)?)?;
            }
            Ok(true)
        }
        Command::Simulate { policy, grid } => {
            let loaded;
            let policy_obj: Box<dyn Policy> = match policy {
                PolicyName::Zero => Box::new(ZeroPolicy),
                PolicyName::Myopic => Box::new(MyopicPolicy {
                    spec: &cfg.producer,
                    spot: &cfg.spot,
                }),
                PolicyName::Optimal => {
                    let Some(base) = grid else {
                        bail!(
                            "simulate --policy optimal needs --grid BASE \
                             (the value grid written by hjb-solve)"
                        );
                    };
                    loaded = persist::load_value_grid(&base)
                        .with_context(|| format!("loading value grid {}", base.display()))?;
                    Box::new(GridPolicy { grid: &loaded })
                }
            };
            let bundle = simulate_bundle(
                &fm,
                &cfg.producer,
                policy_obj.as_ref(),
                cfg.simulation.paths,
                cfg.simulation.steps,
                cfg.seed,
                cfg.simulation.futures_update,
            )?;
            let (mean_u, se_u) = bundle.terminal_utility(&cfg.producer);
            let closure = delivery_closure_check(&bundle, &cfg.producer);
            let value = evaluate_policy(
                &fm,
                &cfg.producer,
                policy_obj.as_ref(),
                cfg.simulation.paths,
                cfg.simulation.steps,
                cfg.seed,
            )?;
            let summary = serde_json::json!({
                "paths": cfg.simulation.paths,
                "steps": cfg.simulation.steps,
                "bundle_mean_utility": mean_u,
                "bundle_utility_std_err": se_u,
                "ito_mean_utility": value.mean_utility,
                "ito_utility_std_err": value.std_err,
                "flagged_paths": bundle.paths.iter().filter(|p| p.flagged).count(),
                "delivery_closure": closure,
            });
            println!(
                "mean terminal utility {:.6} +- {:.6} over {} paths",
                mean_u, se_u, cfg.simulation.paths
            );
            let mut csv = Vec::new();
            write_bundle_csv(&mut csv, &bundle)?;
            write_text(&out_dir.join("bundle.csv"), &String::from_utf8(csv)?)?;
            write_text(
                &out_dir.join("simulate_summary.json"),
                &serde_json::to_string_pretty(&summary)?,
            )?;
            Ok(true)
        }
        Command::Report => {
            let report = checks::run_report(&cfg)?;
            for check in &report.checks {
                println!(
                    "{}: {} — {}",
                    check.name,
                    if check.passed { "PASS" } else { "FAIL" },
                    check.details
                );
            }
            println!(
                "vol monotonicity (monitored): nondecreasing = {}, worst drop = {:.3e} at (t, d) = ({:.3}, {:.3})",
                report.vol_monotonicity.nondecreasing,
                report.vol_monotonicity.worst_drop,
                report.vol_monotonicity.at_time,
                report.vol_monotonicity.at_demand
            );
            write_text(
                &out_dir.join("report.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            Ok(report.all_passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

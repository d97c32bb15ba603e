use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use flexmarket::allocators::Approach;
use flexmarket::experiments::{
    characterize_summary, prepare, run, shortage_experiment, supply_mix_report, sweep_flex, write_csv, write_json,
    write_run_outputs, ScenarioSpec,
};
use flexmarket::reliability::{assess_target, AssessOptions, SigmaDistribution};
use flexmarket::PricingMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "flexmarket", version, about = "Flexible electricity market experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// fair_play, volume_max or revenue_max.
    #[arg(long, global = true)]
    approach: Option<Approach>,
    /// per-period or paper-literal.
    #[arg(long, global = true)]
    pricing_mode: Option<PricingMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Split consumption into essential load and flexible blocks.
    Characterize,
    /// Run the market over the scenario period.
    Run,
    /// Unit-cost percentiles at several flexibility levels.
    SweepFlex {
        #[arg(long, value_delimiter = ',', default_value = "0,3,6,12")]
        sigmas: Vec<f64>,
    },
    /// Two duplicated request groups under every allocation approach.
    ShortageExp,
    /// Excess generation and controllable-price cutoffs per supply mix.
    SupplyMix {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        mixes: Vec<f64>,
    },
    /// Check whether the configured reliability target is achievable.
    Reliability {
        /// Smallest per-request flexibility, hours; defaults to the scenario's.
        #[arg(long)]
        sigma_min: Option<f64>,
        /// Largest per-request flexibility, hours; draws are uniform in between.
        #[arg(long)]
        sigma_max: Option<f64>,
        /// Re-simulate each suggested lever when the target is missed.
        #[arg(long)]
        levers: bool,
    },
}

enum Outcome {
    Ok,
    InvariantViolated,
}

fn load_spec(common: &Common) -> Result<ScenarioSpec> {
    let mut spec = match &common.config {
        Some(p) => ScenarioSpec::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(a) = common.approach {
        spec.approach = a;
    }
    if let Some(m) = common.pricing_mode {
        spec.market.pricing_mode = m;
    }
    spec.validate()?;
    Ok(spec)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let spec = load_spec(&cli.common)?;
    let out = &cli.common.out_dir;
    ensure_dir(out)?;
    let ok = |hold: bool| if hold { Outcome::Ok } else { Outcome::InvariantViolated };
    match &cli.command {
        Command::Characterize => {
            let data = prepare(&spec)?;
            let summary = characterize_summary(&data);
            write_csv(out.join("blocks.csv"), &data.blocks)?;
            write_json(out.join("characterize.json"), &summary)?;
            println!(
                "{} households, {} flexible blocks, {:.1} kWh flexible, {:.1} kWh essential",
                summary.households, summary.blocks, summary.flexible_kwh, summary.essential_kwh
            );
            Ok(Outcome::Ok)
        }
        Command::Run => {
            let output = run(&spec)?;
            write_run_outputs(out, &output.result, &output.summary)?;
            let s = &output.summary;
            println!(
                "{}: served {:.2} of {:.2} kWh, cost GBP {:.2}, gamma {}",
                s.approach,
                s.served_kwh,
                s.requested_kwh,
                s.total_cost_gbp,
                s.gamma_actual.map_or("n/a".into(), |g| format!("{g:.4}"))
            );
            Ok(ok(s.invariants.all_hold()))
        }
        Command::SweepFlex { sigmas } => {
            let rows = sweep_flex(&spec, sigmas)?;
            write_csv(out.join("sweep.csv"), &rows)?;
            for r in &rows {
                println!(
                    "sigma {:>5.1} h: median {}",
                    r.sigma_hours,
                    r.median.map_or("n/a".into(), |m| format!("{m:.4}"))
                );
            }
            Ok(ok(rows.iter().all(|r| r.invariants_hold)))
        }
        Command::ShortageExp => {
            let rows = shortage_experiment(&spec)?;
            let table: Vec<_> = rows
                .iter()
                .map(|r| ShortageLine {
                    approach: r.approach,
                    group1_share: r.group1.share,
                    group2_share: r.group2.share,
                    overall_share: r.overall.share,
                })
                .collect();
            write_csv(out.join("shortage.csv"), &table)?;
            let summaries: BTreeMap<String, _> = rows.iter().map(|r| (r.approach.to_string(), &r.summary)).collect();
            write_json(out.join("summary.json"), &summaries)?;
            for l in &table {
                println!(
                    "{:<12} group1 {} group2 {} overall {}",
                    l.approach,
                    fmt_share(l.group1_share),
                    fmt_share(l.group2_share),
                    fmt_share(l.overall_share)
                );
            }
            Ok(ok(rows.iter().all(|r| r.summary.invariants.all_hold())))
        }
        Command::SupplyMix { mixes } => {
            let rows = supply_mix_report(&spec, mixes)?;
            write_csv(out.join("supply_mix.csv"), &rows)?;
            for r in &rows {
                println!(
                    "mix {:.2}: excess {:.1} kWh, flat cutoff {}",
                    r.mix,
                    r.excess_kwh,
                    r.cutoff_flat.map_or("n/a".into(), |c| format!("{c:.4}"))
                );
            }
            Ok(Outcome::Ok)
        }
        Command::Reliability {
            sigma_min,
            sigma_max,
            levers,
        } => {
            let lo = sigma_min.unwrap_or(spec.sigma_hours);
            let sigma = match sigma_max {
                Some(hi) => SigmaDistribution::Uniform {
                    min_hours: lo,
                    max_hours: *hi,
                },
                None => SigmaDistribution::Fixed { hours: lo },
            };
            let options = AssessOptions {
                resimulate_levers: *levers,
                ..AssessOptions::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(2);
            let assessment = assess_target(&spec, &sigma, &options, &mut rng)?;
            write_json(out.join("reliability.json"), &assessment)?;
            let r = &assessment.report;
            println!("gamma {:.4} against target {:.4} (gap {:+.4})", r.system, r.target, r.gap);
            for s in &r.suggestions {
                println!("  suggestion: {s}");
            }
            for l in &assessment.levers {
                println!("  {}: gamma {:.4}", l.lever, l.gamma_actual);
            }
            Ok(Outcome::Ok)
        }
    }
}

#[derive(serde::Serialize)]
struct ShortageLine {
    approach: Approach,
    group1_share: f64,
    group2_share: f64,
    overall_share: f64,
}

fn fmt_share(s: f64) -> String {
    format!("{:5.1}%", 100.0 * s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::InvariantViolated) => {
            eprintln!("error: an invariant check failed; see the written outputs");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let engine = e.downcast_ref::<flexmarket::Error>().is_some_and(|e| !e.is_input_error());
            ExitCode::from(if engine { 1 } else { 2 })
        }
    }
}

//! Command-line front end: instance generation, dataset generation, solving,
//! certification, and the Monte-Carlo harness.
//!
//! Exit codes: 0 on success, 2 on validation/input errors, 3 on exhausted
//! search or generation budgets.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use vilab::diagnostics::{
    check_pessimism, deficit_report, threshold_certificate, PiStarRule, ThresholdSpec,
    DEFAULT_C_PAC,
};
use vilab::error::{Error, Result};
use vilab::experiments::{
    find_min_n, run_trial, sweep, InstanceContext, SuccessPredicate, SweepPoint,
    DEFAULT_TARGET_RATE, DEFAULT_TRIALS_PER_POINT, FIND_MIN_N_CAP,
};
use vilab::instances::parse_instance_spec;
use vilab::io;
use vilab::mdp::{validate_mdp, ValidationMode};
use vilab::solver::{
    run_subsampled_vi_lcb, BonusRule, IotaSpec, SolverConfig, TieBreak,
};
use vilab::dataset;

#[derive(Parser)]
#[command(name = "vilab", version, about = "Tabular offline RL laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverFlags {
    /// Failure probability budget.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Bonus constant.
    #[arg(long, default_value_t = 2.0)]
    cb: f64,
    /// Bonus log factor; "auto" or a positive real.
    #[arg(long, default_value = "auto")]
    iota: String,
    /// Argmax tie rule: "lowest-index" or "highest-q-then-lowest-index".
    #[arg(long, default_value = "lowest-index")]
    tie_break: String,
}

impl SolverFlags {
    fn config(&self) -> Result<SolverConfig> {
        let iota = match self.iota.as_str() {
            "auto" => IotaSpec::Auto,
            v => IotaSpec::Fixed(
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad --iota value {v:?}")))?,
            ),
        };
        let tie_break = match self.tie_break.as_str() {
            "lowest-index" => TieBreak::LowestIndex,
            "highest-q-then-lowest-index" => TieBreak::HighestQThenLowestIndex,
            v => return Err(Error::Parse(format!("bad --tie-break value {v:?}"))),
        };
        let cfg = SolverConfig {
            c_b: self.cb,
            delta: self.delta,
            iota,
            tie_break,
            bonus: BonusRule::Bernstein,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a named instance: MDP file plus its behavior policy.
    GenInstance {
        /// lb(S,A,H,tau,lambda,phi_seed) | necessity(k,tau) | random(S,A,H,gap_floor,seed)
        #[arg(long)]
        instance: String,
        /// MDP output path.
        #[arg(long)]
        out: PathBuf,
        /// Behavior-policy output path.
        #[arg(long)]
        mu_out: Option<PathBuf>,
    },
    /// Sample trajectories under the instance's behavior policy.
    GenDataset {
        #[arg(long)]
        instance: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the subsampled pessimistic solver on a dataset file.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Subsampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pessimism and deficit-thresholding certificates for a solver run.
    Certify {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// "constant" or "adaptive".
        #[arg(long, default_value = "constant")]
        threshold: String,
        #[arg(long, default_value_t = DEFAULT_C_PAC)]
        cpac: f64,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One seeded trial: sample, solve, evaluate exactly.
    Trial {
        #[arg(long)]
        instance: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trial statistics over a grid of sample sizes.
    Sweep {
        #[arg(long)]
        instance: String,
        /// Comma-separated sample sizes.
        #[arg(long)]
        grid: String,
        /// Epsilon for the success predicate; omitted means exact optimality.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TRIALS_PER_POINT)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format: "csv" or "json".
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Doubling/bisection search for the smallest passing sample size.
    FindMinN {
        #[arg(long)]
        instance: String,
        /// "exact" or "eps:<value>".
        #[arg(long, default_value = "exact")]
        predicate: String,
        #[arg(long, default_value_t = DEFAULT_TARGET_RATE)]
        rate: f64,
        #[arg(long, default_value_t = DEFAULT_TRIALS_PER_POINT)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = FIND_MIN_N_CAP)]
        cap: usize,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenInstance { instance, out, mu_out } => {
            let bundle = parse_instance_spec(&instance)?;
            io::save_mdp(&out, &bundle.mdp)?;
            if let Some(mu_path) = mu_out {
                io::save_policy(&mu_path, &bundle.mu)?;
            }
            eprintln!("wrote {} ({})", out.display(), io::instance_hash(&bundle.mdp)?);
        }
        Command::GenDataset { instance, n, seed, out } => {
            let bundle = parse_instance_spec(&instance)?;
            let data = dataset::sample_trajectories_with_noise(
                &bundle.mdp,
                &bundle.mu,
                n,
                seed,
                bundle.noise.as_ref(),
            )?;
            io::save_dataset(&out, &data, &io::instance_hash(&bundle.mdp)?)?;
            eprintln!("wrote {} ({} records)", out.display(), data.records.len());
        }
        Command::Solve { mdp: mdp_path, data, seed, solver, out } => {
            let mdp = io::load_mdp(&mdp_path)?;
            let report = validate_mdp(&mdp, ValidationMode::Strict);
            if !report.is_valid() {
                return Err(Error::InvalidMdp(report));
            }
            let (dataset, _) = io::load_dataset(&data)?;
            let cfg = solver.config()?;
            let sol = run_subsampled_vi_lcb(&dataset, &mdp, &cfg, seed)?;
            io::save_solution(&out, &sol)?;
            eprintln!("wrote {} (iota = {})", out.display(), sol.iota);
        }
        Command::Certify { mdp: mdp_path, data, seed, threshold, cpac, solver, out } => {
            let mdp = io::load_mdp(&mdp_path)?;
            let (dataset, _) = io::load_dataset(&data)?;
            let cfg = solver.config()?;
            let sol = run_subsampled_vi_lcb(&dataset, &mdp, &cfg, seed)?;
            let spec = match threshold.as_str() {
                "constant" => ThresholdSpec::Constant,
                "adaptive" => ThresholdSpec::VarianceAdaptive { c_pac: cpac },
                v => return Err(Error::Parse(format!("bad --threshold value {v:?}"))),
            };
            let pessimism = check_pessimism(&mdp, &sol)?;
            let cert = threshold_certificate(&mdp, &sol, &spec)?;
            let deficits = deficit_report(&mdp, &sol, &spec, PiStarRule::AgreementPreferring)?;
            let payload = serde_json::json!({
                "pessimism": pessimism,
                "threshold_certificate": cert,
                "deficit_bound_value": deficits.bound_value,
                "gap_min": deficits.gap_min,
            });
            emit(out.as_ref(), &serde_json::to_string_pretty(&payload)?)?;
        }
        Command::Trial { instance, n, seed, solver, out } => {
            let bundle = parse_instance_spec(&instance)?;
            let ctx = InstanceContext::from_bundle(bundle)?;
            let cfg = solver.config()?;
            let trial = run_trial(&ctx, n, &cfg, seed)?;
            emit(out.as_ref(), &serde_json::to_string_pretty(&trial)?)?;
        }
        Command::Sweep { instance, grid, eps, trials, seed, solver, out, format } => {
            let bundle = parse_instance_spec(&instance)?;
            let ctx = InstanceContext::from_bundle(bundle)?;
            let cfg = solver.config()?;
            let points: Result<Vec<SweepPoint>> = grid
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map(|n| SweepPoint { n, eps })
                        .map_err(|_| Error::Parse(format!("bad grid entry {v:?}")))
                })
                .collect();
            let result = sweep(&ctx, &points?, trials, &cfg, seed)?;
            match format.as_str() {
                "csv" => emit(out.as_ref(), io::sweep_to_csv(&result).trim_end())?,
                "json" => emit(out.as_ref(), &serde_json::to_string_pretty(&result)?)?,
                v => return Err(Error::Parse(format!("bad --format value {v:?}"))),
            }
        }
        Command::FindMinN { instance, predicate, rate, trials, seed, cap, solver, out } => {
            let bundle = parse_instance_spec(&instance)?;
            let ctx = InstanceContext::from_bundle(bundle)?;
            let cfg = solver.config()?;
            let pred = if predicate == "exact" {
                SuccessPredicate::ExactOptimal
            } else if let Some(v) = predicate.strip_prefix("eps:") {
                SuccessPredicate::EpsOptimal(
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad --predicate value {predicate:?}")))?,
                )
            } else {
                return Err(Error::Parse(format!("bad --predicate value {predicate:?}")));
            };
            let result = find_min_n(&ctx, pred, rate, trials, &cfg, seed, cap)?;
            emit(out.as_ref(), &serde_json::to_string_pretty(&result)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

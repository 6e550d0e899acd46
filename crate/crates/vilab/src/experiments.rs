//! Seeded Monte-Carlo harness: single trials, grid sweeps, and the doubling/
//! bisection search for the smallest sample size meeting a success target.
//!
//! Trial seeds derive from `(base_seed, point index, trial index)`, trials
//! run in parallel, and aggregation orders by trial index, so parallel and
//! serial runs produce identical reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::time::Instant;

use crate::coverage::{optimal_action_sets, optimal_reachable_set};
use crate::dataset::{sample_trajectories_with_noise, RewardNoise};
use crate::diagnostics::{check_pessimism, threshold_certificate, ThresholdSpec};
use crate::error::{Error, Result};
use crate::instances::InstanceBundle;
use crate::mdp::{
    gap_min, optimal_values, policy_values, Policy, TabularMdp, ValueTables, DEFAULT_OPT_TOL,
};
use crate::rng::{self, domain};
use crate::solver::{run_subsampled_vi_lcb_with_rewards, SolverConfig};

pub const DEFAULT_TRIALS_PER_POINT: usize = 100;
pub const DEFAULT_TARGET_RATE: f64 = 0.9;
/// Hard cap on the doubling search.
pub const FIND_MIN_N_CAP: usize = 1 << 30;
/// Two-sided 95% normal quantile for Wilson intervals.
pub const WILSON_Z: f64 = 1.959963984540054;

/// An instance plus everything per-trial evaluation reuses: exact optimal
/// values, optimal action sets, and the optimal-reachable set.
#[derive(Debug, Clone)]
pub struct InstanceContext {
    pub name: String,
    pub mdp: TabularMdp,
    pub mu: Policy,
    pub noise: Option<RewardNoise>,
    pub empirical_reward_cells: Option<BTreeSet<(usize, usize, usize)>>,
    pub optimal: ValueTables,
    pub v_star_0: f64,
    pub opt_sets: Vec<Vec<Vec<usize>>>,
    pub opt_reachable: ndarray::Array2<bool>,
    /// `None` when the instance has no positive gap.
    pub gap_min: Option<f64>,
}

impl InstanceContext {
    pub fn new(
        name: impl Into<String>,
        mdp: TabularMdp,
        mu: Policy,
        noise: Option<RewardNoise>,
        empirical_reward_cells: Option<BTreeSet<(usize, usize, usize)>>,
    ) -> Result<Self> {
        mu.validate(&mdp)?;
        let optimal = optimal_values(&mdp)?;
        let v_star_0 = optimal.initial_value(&mdp);
        let opt_sets = optimal_action_sets(&optimal, DEFAULT_OPT_TOL);
        let opt_reachable = optimal_reachable_set(&mdp, &opt_sets);
        let gap = match gap_min(&mdp, DEFAULT_OPT_TOL) {
            Ok((g, _)) => Some(g),
            Err(Error::NoPositiveGap) => None,
            Err(e) => return Err(e),
        };
        Ok(InstanceContext {
            name: name.into(),
            mdp,
            mu,
            noise,
            empirical_reward_cells,
            optimal,
            v_star_0,
            opt_sets,
            opt_reachable,
            gap_min: gap,
        })
    }

    pub fn from_bundle(bundle: InstanceBundle) -> Result<Self> {
        InstanceContext::new(
            bundle.name,
            bundle.mdp,
            bundle.mu,
            bundle.noise,
            bundle.empirical_reward_cells,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub n_trajectories: usize,
    pub suboptimality: f64,
    /// Solver policy optimal at every optimal-reachable `(t, s)`.
    pub exact_optimal: bool,
    /// Pessimism clauses: `q_lower <= Q*` and `0 <= E <= 2b` everywhere.
    pub pessimism_pass: bool,
    /// Constant-threshold gap event, when the instance has a positive gap.
    pub gap_event_holds: Option<bool>,
    /// On the event: suboptimality within twice the thresholded-value loss.
    pub subopt_bound_ok: Option<bool>,
    pub wall_time_s: f64,
}

/// Full pipeline: sample, split/trim/subsample, solve, evaluate exactly.
pub fn run_trial(
    ctx: &InstanceContext,
    n: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<TrialResult> {
    let started = Instant::now();
    let data = sample_trajectories_with_noise(&ctx.mdp, &ctx.mu, n, seed, ctx.noise.as_ref())?;
    let sol = run_subsampled_vi_lcb_with_rewards(
        &data,
        &ctx.mdp,
        cfg,
        seed,
        ctx.empirical_reward_cells.as_ref(),
    )?;

    let pi_values = policy_values(&ctx.mdp, &sol.policy)?;
    let suboptimality = ctx.v_star_0 - pi_values.initial_value(&ctx.mdp);

    let mut exact_optimal = true;
    'outer: for t in 0..ctx.mdp.horizon {
        for s in 0..ctx.mdp.num_states {
            if ctx.opt_reachable[[t, s]] {
                let a = sol.policy.action(t, s).expect("deterministic solver policy");
                if !ctx.opt_sets[t][s].contains(&a) {
                    exact_optimal = false;
                    break 'outer;
                }
            }
        }
    }

    let pessimism = check_pessimism(&ctx.mdp, &sol)?;
    let (gap_event_holds, subopt_bound_ok) = match ctx.gap_min {
        Some(_) => {
            let cert = threshold_certificate(&ctx.mdp, &sol, &ThresholdSpec::Constant)?;
            (Some(cert.gap_event_holds), cert.subopt_bound_ok)
        }
        None => (None, None),
    };

    Ok(TrialResult {
        seed,
        n_trajectories: n,
        suboptimality,
        exact_optimal,
        pessimism_pass: pessimism.pessimism_pass(),
        gap_event_holds,
        subopt_bound_ok,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// One sweep point: a sample size, optionally with an epsilon target. With
/// an epsilon the success predicate is `suboptimality <= eps`; without, it
/// is exact optimality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointStats {
    pub point: usize,
    pub n: usize,
    pub eps: Option<f64>,
    pub trials: usize,
    pub mean_subopt: f64,
    pub median_subopt: f64,
    pub success_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub pessimism_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub instance: String,
    pub base_seed: u64,
    pub config: SolverConfig,
    pub points: Vec<PointStats>,
    /// Raw trials per point, ordered by trial index; statistics above are
    /// recomputable from these.
    pub raw: Vec<Vec<TrialResult>>,
}

fn success(trial: &TrialResult, eps: Option<f64>) -> bool {
    match eps {
        Some(e) => trial.suboptimality <= e,
        None => trial.exact_optimal,
    }
}

fn point_stats(point: usize, spec: SweepPoint, trials: &[TrialResult]) -> PointStats {
    let n_trials = trials.len();
    let mut subopts: Vec<f64> = trials.iter().map(|t| t.suboptimality).collect();
    let mean = if n_trials == 0 {
        0.0
    } else {
        subopts.iter().sum::<f64>() / n_trials as f64
    };
    subopts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n_trials == 0 {
        0.0
    } else if n_trials % 2 == 1 {
        subopts[n_trials / 2]
    } else {
        0.5 * (subopts[n_trials / 2 - 1] + subopts[n_trials / 2])
    };
    let successes = trials.iter().filter(|t| success(t, spec.eps)).count();
    let rate = if n_trials == 0 {
        0.0
    } else {
        successes as f64 / n_trials as f64
    };
    let (lo, hi) = wilson_interval(successes, n_trials, WILSON_Z);
    let pessimism = if n_trials == 0 {
        0.0
    } else {
        trials.iter().filter(|t| t.pessimism_pass).count() as f64 / n_trials as f64
    };
    PointStats {
        point,
        n: spec.n,
        eps: spec.eps,
        trials: n_trials,
        mean_subopt: mean,
        median_subopt: median,
        success_rate: rate,
        wilson_lo: lo,
        wilson_hi: hi,
        pessimism_rate: pessimism,
    }
}

fn trial_seed(base_seed: u64, point: usize, trial: usize) -> u64 {
    rng::derive_seed(base_seed, point as u64, trial as u64, domain::TRIAL)
}

pub fn sweep(
    ctx: &InstanceContext,
    grid: &[SweepPoint],
    trials_per_point: usize,
    cfg: &SolverConfig,
    base_seed: u64,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParam("empty sweep grid".into()));
    }
    if trials_per_point == 0 {
        return Err(Error::InvalidParam("trials_per_point must be >= 1".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut raw = Vec::with_capacity(grid.len());
    for (pi, &point) in grid.iter().enumerate() {
        let trials: Result<Vec<TrialResult>> = (0..trials_per_point)
            .into_par_iter()
            .map(|ti| run_trial(ctx, point.n, cfg, trial_seed(base_seed, pi, ti)))
            .collect();
        let trials = trials?;
        points.push(point_stats(pi, point, &trials));
        raw.push(trials);
    }
    Ok(SweepResult {
        instance: ctx.name.clone(),
        base_seed,
        config: *cfg,
        points,
        raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SuccessPredicate {
    ExactOptimal,
    EpsOptimal(f64),
}

impl SuccessPredicate {
    fn eps(&self) -> Option<f64> {
        match self {
            SuccessPredicate::ExactOptimal => None,
            SuccessPredicate::EpsOptimal(e) => Some(*e),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinNResult {
    pub n: usize,
    pub rate_at_n: f64,
    /// Measured rate at `floor(n/2)` on the same per-N seeds; below target
    /// unless `n` is already the minimum candidate.
    pub rate_at_half: f64,
    /// Every `(candidate, measured rate)` visited, in candidate order.
    pub tested: Vec<(usize, f64)>,
}

/// Smallest tested sample size whose measured success rate meets the target:
/// doubling from zero, then bisection to ~6% resolution, then a downward
/// sweep so the returned `n` passes while `floor(n/2)` fails on the same
/// seeds. Seeds derive from `(base_seed, candidate, trial index)`, so a
/// candidate's measurement is reproducible wherever the search visits it.
pub fn find_min_n(
    ctx: &InstanceContext,
    predicate: SuccessPredicate,
    target_rate: f64,
    trials_per_point: usize,
    cfg: &SolverConfig,
    base_seed: u64,
    cap: usize,
) -> Result<MinNResult> {
    if !(0.0 < target_rate && target_rate < 1.0) {
        return Err(Error::InvalidParam(format!(
            "target_rate = {target_rate} not in (0, 1)"
        )));
    }
    if trials_per_point == 0 {
        return Err(Error::InvalidParam("trials_per_point must be >= 1".into()));
    }
    let eps = predicate.eps();
    let mut memo: BTreeMap<usize, f64> = BTreeMap::new();
    let mut measure = |n: usize| -> Result<f64> {
        if let Some(&r) = memo.get(&n) {
            return Ok(r);
        }
        let trials: Result<Vec<TrialResult>> = (0..trials_per_point)
            .into_par_iter()
            .map(|ti| run_trial(ctx, n, cfg, trial_seed(base_seed, n, ti)))
            .collect();
        let trials = trials?;
        let rate =
            trials.iter().filter(|t| success(t, eps)).count() as f64 / trials_per_point as f64;
        memo.insert(n, rate);
        Ok(rate)
    };

    // Doubling phase, starting from the empty dataset.
    let mut hi: Option<usize> = None;
    if measure(0)? >= target_rate {
        hi = Some(0);
    } else {
        let mut n = 1usize;
        while n <= cap {
            if measure(n)? >= target_rate {
                hi = Some(n);
                break;
            }
            n = n.saturating_mul(2);
        }
    }
    let mut hi = hi.ok_or(Error::SearchBudget { cap })?;

    // Bisection inside (hi/2, hi]; coarse resolution keeps trial budgets sane.
    let mut lo = hi / 2;
    while hi > lo + 1 && hi - lo > hi / 16 {
        let mid = lo + (hi - lo) / 2;
        if measure(mid)? >= target_rate {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    // Enforce the halving invariant: walk down while floor(n/2) still passes.
    while hi >= 1 {
        let half = hi / 2;
        if measure(half)? >= target_rate {
            hi = half;
            if hi == 0 {
                break;
            }
        } else {
            break;
        }
    }

    let rate_at_n = measure(hi)?;
    let rate_at_half = measure(hi / 2)?;
    Ok(MinNResult {
        n: hi,
        rate_at_n,
        rate_at_half,
        tested: memo.into_iter().collect(),
    })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    cov / var
}

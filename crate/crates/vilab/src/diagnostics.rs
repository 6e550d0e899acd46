//! Machine-checkable certificates over solver runs: the imaginary MDP whose
//! optimal Q-function reproduces the solver's pessimistic tables, per-cell
//! deficits and their thresholded residuals, the pessimism clauses, and the
//! gap-restriction event for deficit thresholding.
//!
//! Under the true kernel `P`, the reward `r_low = q_lower - P . v_lower`
//! makes `q_lower` satisfy the optimal Bellman equation of
//! `M_low = (S, A, H, P, p0, r_low)` by construction, so the identity checks
//! here are exact (floating error only), with no probabilistic qualifier.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::coverage::{lexicographic_optimal_policy, optimal_action_sets};
use crate::error::{Error, Result};
use crate::mdp::{
    gap_min, optimal_values, policy_suboptimality, policy_values, Policy, TabularMdp,
    DEFAULT_OPT_TOL,
};
use crate::solver::PessimisticSolution;

/// Numerical slack for certificate comparisons that are exact on paper.
pub const CERT_TOL: f64 = 1e-9;
/// Slack for the identity and ranking checks.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Default constant for the variance-adaptive threshold.
pub const DEFAULT_C_PAC: f64 = 1.0 / 16.0;

fn check_dims(mdp: &TabularMdp, sol: &PessimisticSolution) -> Result<()> {
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    if sol.q_lower.dim() != (h, s, a) {
        return Err(Error::DimensionMismatch(format!(
            "solution tables {:?} vs MDP ({h}, {s}, {a})",
            sol.q_lower.dim()
        )));
    }
    Ok(())
}

/// The imaginary MDP `M_low`: true kernel and initial distribution, rewards
/// `r_low = q_lower - P . v_lower` (relaxed mode; entries may be negative).
pub fn imaginary_mdp(mdp: &TabularMdp, sol: &PessimisticSolution) -> Result<TabularMdp> {
    check_dims(mdp, sol)?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut rewards = Array3::<f64>::zeros((h, s, a));
    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let mut ev = 0.0;
                for sp in 0..s {
                    ev += mdp.kernel[[t, ss, aa, sp]] * sol.v_lower[[t + 1, sp]];
                }
                rewards[[t, ss, aa]] = sol.q_lower[[t, ss, aa]] - ev;
            }
        }
    }
    Ok(TabularMdp {
        horizon: h,
        num_states: s,
        num_actions: a,
        kernel: mdp.kernel.clone(),
        p0: mdp.p0.clone(),
        rewards,
    })
}

/// Deficit table `E = r - r_low`.
pub fn deficit_table(mdp: &TabularMdp, sol: &PessimisticSolution) -> Result<Array3<f64>> {
    let imaginary = imaginary_mdp(mdp, sol)?;
    Ok(&mdp.rewards - &imaginary.rewards)
}

/// Threshold rule for the thresholded deficit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdSpec {
    /// `eps = gap_min / (2H)` everywhere.
    Constant,
    /// `eps[t,s,a] = c_pac (Var_{p_hat}(v_lower[t+1]) / H^2 + 1/H) gap_min`.
    VarianceAdaptive { c_pac: f64 },
}

impl ThresholdSpec {
    pub fn adaptive() -> Self {
        ThresholdSpec::VarianceAdaptive { c_pac: DEFAULT_C_PAC }
    }

    /// Per-cell threshold table; every entry is nonnegative.
    pub fn table(&self, mdp: &TabularMdp, sol: &PessimisticSolution, gap: f64) -> Array3<f64> {
        let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
        let hf = h as f64;
        let mut eps = Array3::<f64>::zeros((h, s, a));
        match *self {
            ThresholdSpec::Constant => eps.fill(gap / (2.0 * hf)),
            ThresholdSpec::VarianceAdaptive { c_pac } => {
                for t in 0..h {
                    for ss in 0..s {
                        for aa in 0..a {
                            let mut mean = 0.0;
                            let mut ex2 = 0.0;
                            for sp in 0..s {
                                let p = sol.p_hat[[t, ss, aa, sp]];
                                let v = sol.v_lower[[t + 1, sp]];
                                mean += p * v;
                                ex2 += p * v * v;
                            }
                            let var = (ex2 - mean * mean).max(0.0);
                            eps[[t, ss, aa]] = c_pac * (var / (hf * hf) + 1.0 / hf) * gap;
                        }
                    }
                }
            }
        }
        eps
    }
}

/// Which deterministic optimal policy weights the thresholded-deficit bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PiStarRule {
    /// Lexicographically smallest optimal action everywhere.
    Lexicographic,
    /// The solver policy's action wherever it is optimal, else smallest; the
    /// choice the thresholding proof is stated for.
    AgreementPreferring,
}

pub fn canonical_optimal_policy(
    mdp: &TabularMdp,
    sol: &PessimisticSolution,
    rule: PiStarRule,
) -> Result<Policy> {
    let values = optimal_values(mdp)?;
    let sets = optimal_action_sets(&values, DEFAULT_OPT_TOL);
    match rule {
        PiStarRule::Lexicographic => Ok(lexicographic_optimal_policy(&sets)),
        PiStarRule::AgreementPreferring => {
            let mut actions = match lexicographic_optimal_policy(&sets) {
                Policy::Deterministic(a) => a,
                Policy::Stochastic(_) => unreachable!(),
            };
            for t in 0..mdp.horizon {
                for s in 0..mdp.num_states {
                    let chosen = sol.policy.action(t, s).expect("deterministic solver policy");
                    if sets[t][s].contains(&chosen) {
                        actions[[t, s]] = chosen;
                    }
                }
            }
            Ok(Policy::Deterministic(actions))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeficitReport {
    /// `[H, S, A]` imaginary rewards (may be negative).
    pub r_lower: Array3<f64>,
    /// `[H, S, A]` deficits `E = r - r_lower`.
    pub deficit: Array3<f64>,
    /// `[H, S, A]` thresholds.
    pub threshold: Array3<f64>,
    /// `[H, S, A]` thresholded deficits `max(0, E - eps)`.
    pub thresholded: Array3<f64>,
    /// `2 sum_t E_{pi*}[thresholded]` under the canonical optimal policy.
    pub bound_value: f64,
    pub gap_min: f64,
    pub pi_star: Policy,
}

/// Deficits, thresholds, and the occupancy-weighted suboptimality bound.
pub fn deficit_report(
    mdp: &TabularMdp,
    sol: &PessimisticSolution,
    spec: &ThresholdSpec,
    rule: PiStarRule,
) -> Result<DeficitReport> {
    check_dims(mdp, sol)?;
    let (gap, _) = gap_min(mdp, DEFAULT_OPT_TOL)?;
    let imaginary = imaginary_mdp(mdp, sol)?;
    let deficit = &mdp.rewards - &imaginary.rewards;
    let threshold = spec.table(mdp, sol, gap);
    let thresholded = ndarray::Zip::from(&deficit)
        .and(&threshold)
        .map_collect(|&e, &eps| (e - eps).max(0.0));
    let pi_star = canonical_optimal_policy(mdp, sol, rule)?;
    let occ = crate::mdp::occupancy(mdp, &pi_star)?;
    let mut bound = 0.0;
    for t in 0..mdp.horizon {
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                bound += occ.d[[t, s, a]] * thresholded[[t, s, a]];
            }
        }
    }
    Ok(DeficitReport {
        r_lower: imaginary.rewards,
        deficit,
        threshold,
        thresholded,
        bound_value: 2.0 * bound,
        gap_min: gap,
        pi_star,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseResult {
    pub pass: bool,
    /// Worst violating `(t, s, a)`; `a` is unused for state-level clauses.
    pub worst_cell: Option<(usize, usize, usize)>,
    /// Largest violation magnitude (0 when passing).
    pub worst_violation: f64,
}

impl ClauseResult {
    fn passing() -> Self {
        ClauseResult { pass: true, worst_cell: None, worst_violation: 0.0 }
    }

    fn observe(&mut self, violation: f64, cell: (usize, usize, usize)) {
        if violation > self.worst_violation {
            self.pass = false;
            self.worst_violation = violation;
            self.worst_cell = Some(cell);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    /// `q_lower <= Q*` everywhere.
    pub pessimistic_q: ClauseResult,
    /// `0 <= E <= 2b` everywhere.
    pub deficit_in_range: ClauseResult,
    /// `V* >= V^{pi_low} >= V_low^{pi_low} >= V_low*` elementwise, where the
    /// last two come from the imaginary MDP.
    pub value_ranking: ClauseResult,
}

impl CertificateReport {
    pub fn pessimism_pass(&self) -> bool {
        self.pessimistic_q.pass && self.deficit_in_range.pass
    }

    pub fn all_pass(&self) -> bool {
        self.pessimism_pass() && self.value_ranking.pass
    }
}

/// Per-run pessimism clauses; evaluates and reports, never asserts.
pub fn check_pessimism(mdp: &TabularMdp, sol: &PessimisticSolution) -> Result<CertificateReport> {
    check_dims(mdp, sol)?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let optimal = optimal_values(mdp)?;
    let imaginary = imaginary_mdp(mdp, sol)?;

    let mut pessimistic_q = ClauseResult::passing();
    let mut deficit_in_range = ClauseResult::passing();
    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let cell = (t, ss, aa);
                let excess = sol.q_lower[[t, ss, aa]] - optimal.q[[t, ss, aa]];
                pessimistic_q.observe(excess - IDENTITY_TOL, cell);
                let e = mdp.rewards[[t, ss, aa]] - imaginary.rewards[[t, ss, aa]];
                deficit_in_range.observe(-e - IDENTITY_TOL, cell);
                deficit_in_range.observe(e - 2.0 * sol.bonus[[t, ss, aa]] - IDENTITY_TOL, cell);
            }
        }
    }

    let v_pi_true = policy_values(mdp, &sol.policy)?;
    let v_pi_imag = policy_values(&imaginary, &sol.policy)?;
    let v_star_imag = optimal_values(&imaginary)?;
    let mut value_ranking = ClauseResult::passing();
    for t in 0..=h {
        for ss in 0..s {
            let cell = (t, ss, 0);
            let a1 = v_pi_true.v[[t, ss]] - optimal.v[[t, ss]];
            let a2 = v_pi_imag.v[[t, ss]] - v_pi_true.v[[t, ss]];
            let a3 = v_star_imag.v[[t, ss]] - v_pi_imag.v[[t, ss]];
            value_ranking.observe(a1 - IDENTITY_TOL, cell);
            value_ranking.observe(a2 - IDENTITY_TOL, cell);
            value_ranking.observe(a3 - IDENTITY_TOL, cell);
        }
    }

    Ok(CertificateReport { pessimistic_q, deficit_in_range, value_ranking })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdCertificate {
    /// Whether `V_ddot*_t(s) <= V_low*_t(s) + gap_min/2` holds at all `(t, s)`.
    pub gap_event_holds: bool,
    pub worst_cell: Option<(usize, usize)>,
    /// Largest `V_ddot* - V_low* - gap_min/2` over cells.
    pub worst_margin: f64,
    pub v_star_0: f64,
    /// Initial optimal value of the thresholded MDP.
    pub v_ddot_0: f64,
    /// Initial optimal value of the imaginary MDP.
    pub v_lower_0: f64,
    pub subopt_pi_lower: f64,
    /// `2 (V*_0 - V_ddot*_0)`.
    pub bound_2x: f64,
    /// On the event: `subopt_pi_lower <= bound_2x + CERT_TOL`.
    pub subopt_bound_ok: Option<bool>,
    pub gap_min: f64,
}

/// Builds the thresholded MDP `M_ddot` with `r_ddot = r - max(0, E - eps)`,
/// solves it exactly, and checks the gap-restriction event; on the event,
/// also compares the solver policy's true suboptimality against twice the
/// thresholded optimal-value loss.
pub fn threshold_certificate(
    mdp: &TabularMdp,
    sol: &PessimisticSolution,
    spec: &ThresholdSpec,
) -> Result<ThresholdCertificate> {
    check_dims(mdp, sol)?;
    let (gap, _) = gap_min(mdp, DEFAULT_OPT_TOL)?;
    let imaginary = imaginary_mdp(mdp, sol)?;
    let deficit = &mdp.rewards - &imaginary.rewards;
    let eps = spec.table(mdp, sol, gap);
    let mut thresholded_mdp = mdp.clone();
    for (r, (&e, &eps)) in thresholded_mdp
        .rewards
        .iter_mut()
        .zip(deficit.iter().zip(eps.iter()))
    {
        *r -= (e - eps).max(0.0);
    }

    let optimal = optimal_values(mdp)?;
    let v_ddot = optimal_values(&thresholded_mdp)?;
    let v_low = optimal_values(&imaginary)?;

    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_cell = None;
    for t in 0..mdp.horizon {
        for s in 0..mdp.num_states {
            let margin = v_ddot.v[[t, s]] - v_low.v[[t, s]] - gap / 2.0;
            if margin > worst_margin {
                worst_margin = margin;
                worst_cell = Some((t, s));
            }
        }
    }
    let gap_event_holds = worst_margin <= CERT_TOL;

    let v_star_0 = optimal.initial_value(mdp);
    let v_ddot_0 = v_ddot.initial_value(mdp);
    let v_lower_0 = v_low.initial_value(mdp);
    let subopt = policy_suboptimality(mdp, &sol.policy)?;
    let bound_2x = 2.0 * (v_star_0 - v_ddot_0);
    let subopt_bound_ok = if gap_event_holds {
        Some(subopt <= bound_2x + CERT_TOL)
    } else {
        None
    };
    Ok(ThresholdCertificate {
        gap_event_holds,
        worst_cell,
        worst_margin,
        v_star_0,
        v_ddot_0,
        v_lower_0,
        subopt_pi_lower: subopt,
        bound_2x,
        subopt_bound_ok,
        gap_min: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_trajectories;
    use crate::solver::{run_subsampled_vi_lcb, SolverConfig};
    use crate::testutil;
    use ndarray::Array2;

    fn seeded_run(seed: u64) -> (TabularMdp, PessimisticSolution) {
        let mdp = testutil::random_gapped_mdp(4, 3, 2, 0.15, seed);
        let mu = crate::instances::uniform_behavior(&mdp);
        let data = sample_trajectories(&mdp, &mu, 800, seed ^ 0xabc).unwrap();
        let sol = run_subsampled_vi_lcb(&data, &mdp, &SolverConfig::default(), seed ^ 0xdef).unwrap();
        (mdp, sol)
    }

    /// Hand-built "perfect" solution: zero bonus, exact empirical kernel.
    fn perfect_solution(mdp: &TabularMdp) -> PessimisticSolution {
        let values = optimal_values(mdp).unwrap();
        let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
        let mut actions = Array2::<usize>::zeros((h, s));
        for t in 0..h {
            for ss in 0..s {
                let mut best = f64::NEG_INFINITY;
                for aa in 0..a {
                    if values.q[[t, ss, aa]] > best {
                        best = values.q[[t, ss, aa]];
                        actions[[t, ss]] = aa;
                    }
                }
            }
        }
        PessimisticSolution {
            q_lower: values.q.clone(),
            v_lower: values.v.clone(),
            bonus: Array3::zeros((h, s, a)),
            n_prime: Array3::from_elem((h, s, a), 1.0),
            p_hat: mdp.kernel.clone(),
            policy: Policy::Deterministic(actions),
            iota: 1.0,
            c_b: 1.0,
            tie_break: crate::solver::TieBreak::LowestIndex,
        }
    }

    #[test]
    fn perfect_run_has_zero_deficit() {
        let mdp = testutil::random_gapped_mdp(3, 3, 2, 0.1, 40);
        let sol = perfect_solution(&mdp);
        let e = deficit_table(&mdp, &sol).unwrap();
        assert!(e.iter().all(|&x| x.abs() < 1e-12));
        let report = check_pessimism(&mdp, &sol).unwrap();
        assert!(report.all_pass());
    }

    #[test]
    fn empty_run_deficit_equals_rewards() {
        let mdp = testutil::random_gapped_mdp(3, 3, 2, 0.1, 41);
        let counts = crate::dataset::TransitionCounts::zeros(3, 3, 2);
        let sol = crate::solver::run_vi_lcb(&counts, &mdp.rewards, &SolverConfig::default()).unwrap();
        let imaginary = imaginary_mdp(&mdp, &sol).unwrap();
        assert!(imaginary.rewards.iter().all(|&r| r.abs() < 1e-12));
        let e = deficit_table(&mdp, &sol).unwrap();
        for (ev, rv) in e.iter().zip(mdp.rewards.iter()) {
            assert!((ev - rv).abs() < 1e-12);
        }
    }

    #[test]
    fn imaginary_mdp_reproduces_solver_tables() {
        for seed in 0..5u64 {
            let (mdp, sol) = seeded_run(seed);
            let imaginary = imaginary_mdp(&mdp, &sol).unwrap();
            let opt = optimal_values(&imaginary).unwrap();
            for ((q_im, q_sol), (v_im, v_sol)) in opt
                .q
                .iter()
                .zip(sol.q_lower.iter())
                .zip(opt.v.iter().zip(sol.v_lower.iter()))
                .map(|((a, b), (c, d))| ((a, b), (c, d)))
            {
                assert!((q_im - q_sol).abs() < IDENTITY_TOL);
                assert!((v_im - v_sol).abs() < IDENTITY_TOL);
            }
            let pv = policy_values(&imaginary, &sol.policy).unwrap();
            for (v_im, v_sol) in pv.v.iter().zip(sol.v_lower.iter()) {
                assert!((v_im - v_sol).abs() < IDENTITY_TOL);
            }
        }
    }

    #[test]
    fn threshold_arithmetic_hand_cases() {
        // E = 0.5, eps = 0.2 -> 0.3; E = 0.1, eps = 0.2 -> 0.
        assert_eq!((0.5f64 - 0.2).max(0.0), 0.3);
        assert_eq!((0.1f64 - 0.2).max(0.0), 0.0);
        // Constant spec with H = 5, gap_min = 1 is 0.1 everywhere.
        let mut mdp = testutil::random_gapped_mdp(5, 3, 2, 0.2, 42);
        // Force gap_min to exactly 1: single designated pair dominates.
        for t in 0..5 {
            for s in 0..3 {
                for a in 0..2 {
                    mdp.rewards[[t, s, a]] = if a == 0 { 1.0 } else { 0.0 };
                    for sp in 0..3 {
                        mdp.kernel[[t, s, a, sp]] = mdp.kernel[[t, s, 0, sp]];
                    }
                }
            }
        }
        let sol = perfect_solution(&mdp);
        let (gap, _) = gap_min(&mdp, 1e-9).unwrap();
        assert!((gap - 1.0).abs() < 1e-12);
        let eps = ThresholdSpec::Constant.table(&mdp, &sol, gap);
        assert!(eps.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn adversarial_solution_fails_clause_one() {
        let mdp = testutil::random_gapped_mdp(3, 3, 2, 0.1, 43);
        let mut sol = perfect_solution(&mdp);
        sol.q_lower[[1, 2, 0]] += 0.5;
        let report = check_pessimism(&mdp, &sol).unwrap();
        assert!(!report.pessimistic_q.pass);
        assert_eq!(report.pessimistic_q.worst_cell, Some((1, 2, 0)));
    }

    #[test]
    fn zero_threshold_event_reduces_to_ranking() {
        // eps = 0 makes M_ddot = M_low, so the event holds trivially.
        let (mdp, sol) = seeded_run(11);
        let cert = threshold_certificate(
            &mdp,
            &sol,
            &ThresholdSpec::VarianceAdaptive { c_pac: 0.0 },
        )
        .unwrap();
        assert!(cert.gap_event_holds);
        assert!((cert.v_ddot_0 - cert.v_lower_0).abs() < 1e-10);
    }

    #[test]
    fn constant_spec_event_holds_on_seeded_runs() {
        for seed in 0..10u64 {
            let (mdp, sol) = seeded_run(seed);
            let cert = threshold_certificate(&mdp, &sol, &ThresholdSpec::Constant).unwrap();
            assert!(cert.gap_event_holds, "seed {seed}: margin {}", cert.worst_margin);
        }
    }

    #[test]
    fn oversized_threshold_breaks_the_event_with_witness() {
        // Empty-dataset run on the two-action MDP: v_lower = 0 while V* = 2.
        // A threshold far above every deficit makes r_ddot = r, so the event
        // would require V* <= gap/2 and must fail, naming a witness cell.
        let mdp = testutil::two_action_single_state();
        let counts = crate::dataset::TransitionCounts::zeros(2, 1, 2);
        let sol = crate::solver::run_vi_lcb(&counts, &mdp.rewards, &SolverConfig::default()).unwrap();
        let cert = threshold_certificate(
            &mdp,
            &sol,
            &ThresholdSpec::VarianceAdaptive { c_pac: 1.0e3 },
        )
        .unwrap();
        assert!(!cert.gap_event_holds);
        assert_eq!(cert.worst_cell, Some((0, 0)));
        assert!(cert.subopt_bound_ok.is_none());
    }
}

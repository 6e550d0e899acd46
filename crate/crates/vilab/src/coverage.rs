//! Coverage coefficients of a behavior policy against the optimal-policy
//! family: the uniform coefficient (worst behavior-policy occupancy over
//! state-actions any optimal policy uses), the relative coefficient (worst
//! occupancy ratio over optimal policies), and the single-policy variant
//! (best-covered optimal policy).
//!
//! The extrema over optimal policies reduce to per-cell quantities: whether
//! `(t, s)` is reachable by some optimal policy depends only on optimal
//! actions at earlier levels, the action chosen at `(t, s)` itself does not
//! affect reaching it, and `max over optimal policies of d_t(s)` is a
//! per-target reachability DP over optimal actions. Deterministic optimal
//! policies suffice for the extrema by linearity. A brute-force enumeration
//! oracle over all deterministic optimal policies guards this reduction in
//! the test suites.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{gap_min, occupancy, optimal_values, Policy, TabularMdp, ValueTables};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub gap_min: f64,
    /// Relative optimal-policy coverage coefficient over state-action pairs,
    /// `max_{pi*} max_{t,s,a} d^{pi*}(s,a) / d^mu(s,a)` with 0/0 = 0 and
    /// positive/0 = +inf.
    pub c_star: f64,
    /// State-marginal variant `max_{pi*} max_{t,s} d^{pi*}(s) / d^mu(s)`.
    pub c_star_state_marginal: f64,
    /// Uniform optimal-policy coverage coefficient,
    /// `min_{pi*} min_{t,s: d^{pi*}(s) > 0} d^mu(s, pi*(s))`.
    pub p_unif: f64,
    /// Actions within `tol` of optimal at each `(t, s)`, sorted.
    pub optimal_action_sets: Vec<Vec<Vec<usize>>>,
    /// Whether some optimal policy reaches `(t, s)` with positive probability.
    pub optimal_reachable: Array2<bool>,
    /// `max over optimal policies of d_t(s)` (zero off the reachable set).
    pub max_reach: Array2<f64>,
}

/// Actions whose optimal Q is within `tol` of `V*` at each `(t, s)`.
pub fn optimal_action_sets(values: &ValueTables, tol: f64) -> Vec<Vec<Vec<usize>>> {
    let (h, s, a) = values.q.dim();
    let mut sets = vec![vec![Vec::new(); s]; h];
    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                if values.v[[t, ss]] - values.q[[t, ss, aa]] <= tol {
                    sets[t][ss].push(aa);
                }
            }
        }
    }
    sets
}

/// Lexicographically smallest deterministic optimal policy.
pub fn lexicographic_optimal_policy(opt_sets: &[Vec<Vec<usize>>]) -> Policy {
    let h = opt_sets.len();
    let s = opt_sets[0].len();
    let mut actions = Array2::<usize>::zeros((h, s));
    for t in 0..h {
        for ss in 0..s {
            actions[[t, ss]] = opt_sets[t][ss][0];
        }
    }
    Policy::Deterministic(actions)
}

/// Per-target backward DP: best probability of occupying `(t, s)` over
/// policies restricted to optimal actions.
fn max_reach_table(mdp: &TabularMdp, opt_sets: &[Vec<Vec<usize>>]) -> Array2<f64> {
    let (h, s) = (mdp.horizon, mdp.num_states);
    let mut reach = Array2::<f64>::zeros((h, s));
    for t_target in 0..h {
        for s_target in 0..s {
            // f[s'] = best probability of being at s_target at t_target,
            // starting from s' at level t, following optimal actions.
            let mut f = vec![0.0f64; s];
            f[s_target] = 1.0;
            for t in (0..t_target).rev() {
                let mut g = vec![0.0f64; s];
                for ss in 0..s {
                    let mut best = 0.0;
                    for &aa in &opt_sets[t][ss] {
                        let mut p = 0.0;
                        for sp in 0..s {
                            p += mdp.kernel[[t, ss, aa, sp]] * f[sp];
                        }
                        if p > best {
                            best = p;
                        }
                    }
                    g[ss] = best;
                }
                f = g;
            }
            let mut total = 0.0;
            for ss in 0..s {
                total += mdp.p0[ss] * f[ss];
            }
            reach[[t_target, s_target]] = total;
        }
    }
    reach
}

/// `(t, s)` pairs some optimal policy reaches with positive probability.
pub fn optimal_reachable_set(mdp: &TabularMdp, opt_sets: &[Vec<Vec<usize>>]) -> Array2<bool> {
    max_reach_table(mdp, opt_sets).mapv(|p| p > 0.0)
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Coverage coefficients of `(mdp, mu)` with optimal actions classified at
/// tolerance `tol`. Degenerate behavior coverage is representable, not an
/// error: an uncovered optimal cell yields `c_star = +inf` and `p_unif = 0`.
pub fn coverage_coefficients(mdp: &TabularMdp, mu: &Policy, tol: f64) -> Result<CoverageReport> {
    let (gap, _) = gap_min(mdp, tol)?;
    mu.validate(mdp)?;
    let values = optimal_values(mdp)?;
    let opt_sets = optimal_action_sets(&values, tol);
    let max_reach = max_reach_table(mdp, &opt_sets);
    let d_mu = occupancy(mdp, mu)?;

    let (h, s) = (mdp.horizon, mdp.num_states);
    let mut reachable = Array2::<bool>::from_elem((h, s), false);
    let mut c_star = 0.0f64;
    let mut c_star_state = 0.0f64;
    let mut p_unif = f64::INFINITY;
    let mut any_reachable = false;
    for t in 0..h {
        for ss in 0..s {
            if max_reach[[t, ss]] <= 0.0 {
                continue;
            }
            reachable[[t, ss]] = true;
            any_reachable = true;
            c_star_state = c_star_state.max(ratio(max_reach[[t, ss]], d_mu.marginal(t, ss)));
            for &aa in &opt_sets[t][ss] {
                let cover = d_mu.d[[t, ss, aa]];
                c_star = c_star.max(ratio(max_reach[[t, ss]], cover));
                p_unif = p_unif.min(cover);
            }
        }
    }
    if !any_reachable {
        p_unif = 0.0;
    }
    Ok(CoverageReport {
        gap_min: gap,
        c_star,
        c_star_state_marginal: c_star_state,
        p_unif,
        optimal_action_sets: opt_sets,
        optimal_reachable: reachable,
        max_reach,
    })
}

/// Single-policy coverage coefficient: the best-covered optimal policy's
/// worst behavior-policy occupancy over its own support,
/// `max_{pi*} min_{t,s,a: d^{pi*}(s,a) > 0} d^mu(s,a)`.
///
/// Bottleneck DP: the value from `(t, s)` is the best over optimal actions of
/// `min(d^mu(s,a), worst bottleneck among positive-probability successors)`.
pub fn single_policy_coverage(mdp: &TabularMdp, mu: &Policy, tol: f64) -> Result<f64> {
    gap_min(mdp, tol)?;
    mu.validate(mdp)?;
    let values = optimal_values(mdp)?;
    let opt_sets = optimal_action_sets(&values, tol);
    let d_mu = occupancy(mdp, mu)?;
    let (h, s) = (mdp.horizon, mdp.num_states);
    let mut f = vec![f64::INFINITY; s];
    for t in (0..h).rev() {
        let mut g = vec![0.0f64; s];
        for ss in 0..s {
            let mut best = 0.0f64;
            for &aa in &opt_sets[t][ss] {
                let mut bottleneck = d_mu.d[[t, ss, aa]];
                for sp in 0..s {
                    if mdp.kernel[[t, ss, aa, sp]] > 0.0 {
                        bottleneck = bottleneck.min(f[sp]);
                    }
                }
                best = best.max(bottleneck);
            }
            g[ss] = best;
        }
        f = g;
    }
    let mut out = f64::INFINITY;
    for ss in 0..s {
        if mdp.p0[ss] > 0.0 {
            out = out.min(f[ss]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::DEFAULT_OPT_TOL;
    use crate::testutil;
    use ndarray::{Array1, Array3, Array4};

    /// Single state per level, one optimal action, uniform 2-action behavior.
    fn forced_single_state() -> (TabularMdp, Policy) {
        let h = 3;
        let mut kernel = Array4::<f64>::zeros((h, 1, 2, 1));
        kernel.fill(1.0);
        let mut rewards = Array3::<f64>::zeros((h, 1, 2));
        for t in 0..h {
            rewards[[t, 0, 0]] = 0.9;
            rewards[[t, 0, 1]] = 0.1;
        }
        let mdp = TabularMdp {
            horizon: h,
            num_states: 1,
            num_actions: 2,
            kernel,
            p0: Array1::from_elem(1, 1.0),
            rewards,
        };
        let mu = Policy::Stochastic(Array3::from_elem((h, 1, 2), 0.5));
        (mdp, mu)
    }

    #[test]
    fn forced_example_c2_p_half() {
        let (mdp, mu) = forced_single_state();
        let report = coverage_coefficients(&mdp, &mu, DEFAULT_OPT_TOL).unwrap();
        assert_eq!(report.c_star, 2.0);
        assert_eq!(report.p_unif, 0.5);
        assert_eq!(report.c_star_state_marginal, 1.0);
        assert_eq!(single_policy_coverage(&mdp, &mu, DEFAULT_OPT_TOL).unwrap(), 0.5);
    }

    #[test]
    fn matches_enumeration_oracle_on_random_instances() {
        for seed in 0..25u64 {
            let mdp = testutil::random_mdp(2, 3, 2, 1000 + seed);
            let mu = testutil::random_stochastic_policy(&mdp, 2000 + seed);
            let report = coverage_coefficients(&mdp, &mu, DEFAULT_OPT_TOL).unwrap();
            let oracle = testutil::oracle_coverage(&mdp, &mu, DEFAULT_OPT_TOL);
            testutil::assert_close_or_both_inf(report.c_star, oracle.c_star, 1e-12);
            testutil::assert_close_or_both_inf(report.p_unif, oracle.p_unif, 1e-12);
            testutil::assert_close_or_both_inf(
                single_policy_coverage(&mdp, &mu, DEFAULT_OPT_TOL).unwrap(),
                oracle.p_single,
                1e-12,
            );
        }
    }

    #[test]
    fn uncovered_optimal_cell_is_representable() {
        let (mdp, _) = forced_single_state();
        // Behavior never plays the optimal action 0.
        let mut probs = Array3::<f64>::zeros((3, 1, 2));
        for t in 0..3 {
            probs[[t, 0, 1]] = 1.0;
        }
        let mu = Policy::Stochastic(probs);
        let report = coverage_coefficients(&mdp, &mu, DEFAULT_OPT_TOL).unwrap();
        assert!(report.c_star.is_infinite());
        assert_eq!(report.p_unif, 0.0);
    }
}

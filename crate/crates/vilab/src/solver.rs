//! Pessimistic value iteration with Bernstein-style lower-confidence bonuses
//! and the full subsampled pipeline.
//!
//! The backward pass is, per level `t` from `H-1` down to `0`:
//!
//! ```text
//! p_hat[t,s,a](s') = n3 / n2            (0/0 = 0, so unseen rows are zero)
//! n' = max(n2, iota)
//! b  = c_b * sqrt(Var_{p_hat}(v[t+1]) * iota / n') + c_b * H * iota / n'
//! q[t,s,a] = max(0, r + p_hat . v[t+1] - b)
//! v[t,s]   = max_a q;  policy = argmax (ties to the lowest action index)
//! ```
//!
//! with `Var_p(v) = p.(v o v) - (p.v)^2` clamped at zero. Sums over
//! successors run in ascending state order; equality tests against an
//! independent straight-line re-implementation rely on these exact shapes.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    count_transitions, split_and_subsample, TransitionCounts, TransitionDataset,
};
use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IotaSpec {
    /// Resolves to `ln(2 H S A max(N, 1) / delta)` at solve time.
    Auto,
    Fixed(f64),
}

/// Argmax tie rule. Both spellings resolve ties to the lowest action index;
/// the argmax itself already prefers the highest Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    LowestIndex,
    HighestQThenLowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BonusRule {
    Bernstein,
    /// Variance term replaced by its worst case: `b = 2 c_b H iota / sqrt(n')`.
    /// Test-only mirror of the Hoeffding-style analysis.
    HoeffdingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub c_b: f64,
    pub delta: f64,
    pub iota: IotaSpec,
    pub tie_break: TieBreak,
    pub bonus: BonusRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            c_b: 2.0,
            delta: 0.1,
            iota: IotaSpec::Auto,
            tie_break: TieBreak::LowestIndex,
            bonus: BonusRule::Bernstein,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_b > 0.0) {
            return Err(Error::InvalidParam(format!("c_b = {} must be > 0", self.c_b)));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "delta = {} not in (0, 1)",
                self.delta
            )));
        }
        if let IotaSpec::Fixed(v) = self.iota {
            if !(v > 0.0) {
                return Err(Error::InvalidParam(format!("iota = {v} must be > 0")));
            }
        }
        Ok(())
    }

    /// `n_ref` is the trajectory count of the raw dataset when known, else
    /// the largest per-level transition total; clamped to 1 so empty data
    /// still yields a positive finite iota.
    pub fn resolve_iota(
        &self,
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        n_ref: usize,
    ) -> f64 {
        match self.iota {
            IotaSpec::Fixed(v) => v,
            IotaSpec::Auto => {
                let n = n_ref.max(1) as f64;
                (2.0 * horizon as f64 * num_states as f64 * num_actions as f64 * n / self.delta)
                    .ln()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PessimisticSolution {
    /// `[H, S, A]`.
    pub q_lower: Array3<f64>,
    /// `[H+1, S]`.
    pub v_lower: Array2<f64>,
    /// `[H, S, A]`.
    pub bonus: Array3<f64>,
    /// `[H, S, A]`, `max(n, iota)` as a real.
    pub n_prime: Array3<f64>,
    /// Empirical kernel `[H, S, A, S]`; unseen rows are all-zero.
    pub p_hat: Array4<f64>,
    /// Greedy policy under the configured tie-break.
    pub policy: Policy,
    /// Resolved bonus log factor.
    pub iota: f64,
    pub c_b: f64,
    pub tie_break: TieBreak,
}

/// `p_hat[t,s,a](s') = n3/n2` with `0/0 = 0`.
pub fn empirical_kernel(counts: &TransitionCounts) -> Array4<f64> {
    let (h, s, a, _) = counts.n3.dim();
    let mut p_hat = Array4::<f64>::zeros((h, s, a, s));
    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let n = counts.n2[[t, ss, aa]];
                if n > 0 {
                    for sp in 0..s {
                        p_hat[[t, ss, aa, sp]] = counts.n3[[t, ss, aa, sp]] as f64 / n as f64;
                    }
                }
            }
        }
    }
    p_hat
}

/// Bernstein-style bonus for one `(t, s, a)` cell. `n_prime = max(n, iota)`.
pub fn bernstein_bonus(
    p_hat_row: &[f64],
    v_next: &[f64],
    n: u64,
    iota: f64,
    c_b: f64,
    horizon: usize,
    rule: BonusRule,
) -> f64 {
    let n_prime = (n as f64).max(iota);
    let h = horizon as f64;
    match rule {
        BonusRule::Bernstein => {
            let mut mean = 0.0;
            let mut ex2 = 0.0;
            for (p, v) in p_hat_row.iter().zip(v_next) {
                mean += p * v;
                ex2 += p * v * v;
            }
            let var = (ex2 - mean * mean).max(0.0);
            c_b * (var * iota / n_prime).sqrt() + c_b * h * iota / n_prime
        }
        BonusRule::HoeffdingOnly => 2.0 * c_b * h * iota / n_prime.sqrt(),
    }
}

/// Exact backward execution of the pessimistic value iteration on count
/// tensors; deterministic given inputs and the tie-break rule.
pub fn run_vi_lcb(
    counts: &TransitionCounts,
    rewards: &Array3<f64>,
    cfg: &SolverConfig,
) -> Result<PessimisticSolution> {
    cfg.validate()?;
    let (h, s, a) = counts.n2.dim();
    if rewards.dim() != (h, s, a) {
        return Err(Error::DimensionMismatch(format!(
            "rewards {:?} vs counts ({h}, {s}, {a})",
            rewards.dim()
        )));
    }
    let iota = cfg.resolve_iota(h, s, a, counts.max_level_total() as usize);
    run_vi_lcb_resolved(counts, rewards, cfg, iota)
}

pub(crate) fn run_vi_lcb_resolved(
    counts: &TransitionCounts,
    rewards: &Array3<f64>,
    cfg: &SolverConfig,
    iota: f64,
) -> Result<PessimisticSolution> {
    let (h, s, a) = counts.n2.dim();
    let p_hat = empirical_kernel(counts);
    let mut q_lower = Array3::<f64>::zeros((h, s, a));
    let mut v_lower = Array2::<f64>::zeros((h + 1, s));
    let mut bonus = Array3::<f64>::zeros((h, s, a));
    let mut n_prime = Array3::<f64>::zeros((h, s, a));
    let mut actions = Array2::<usize>::zeros((h, s));

    let mut row = vec![0.0f64; s];
    let mut v_next = vec![0.0f64; s];
    for t in (0..h).rev() {
        for sp in 0..s {
            v_next[sp] = v_lower[[t + 1, sp]];
        }
        for ss in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for aa in 0..a {
                for sp in 0..s {
                    row[sp] = p_hat[[t, ss, aa, sp]];
                }
                let n = counts.n2[[t, ss, aa]];
                let b = bernstein_bonus(&row, &v_next, n, iota, cfg.c_b, h, cfg.bonus);
                let mut mean = 0.0;
                for sp in 0..s {
                    mean += row[sp] * v_next[sp];
                }
                let q = (rewards[[t, ss, aa]] + mean - b).max(0.0);
                q_lower[[t, ss, aa]] = q;
                bonus[[t, ss, aa]] = b;
                n_prime[[t, ss, aa]] = (n as f64).max(iota);
                if q > best {
                    best = q;
                    best_a = aa;
                }
            }
            v_lower[[t, ss]] = best;
            actions[[t, ss]] = best_a;
        }
    }
    Ok(PessimisticSolution {
        q_lower,
        v_lower,
        bonus,
        n_prime,
        p_hat,
        policy: Policy::Deterministic(actions),
        iota,
        c_b: cfg.c_b,
        tie_break: cfg.tie_break,
    })
}

/// Full pipeline: split/trim/subsample, count, solve with the MDP's known
/// reward table. Auto-iota resolves against the raw trajectory count.
pub fn run_subsampled_vi_lcb(
    data: &TransitionDataset,
    mdp: &TabularMdp,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<PessimisticSolution> {
    run_subsampled_vi_lcb_with_rewards(data, mdp, cfg, seed, None)
}

/// Pipeline variant for instances with stochastic rewards at named cells:
/// those cells use the empirical mean reward over the retained subsample
/// (zero when unseen); all other cells use the known reward function.
pub fn run_subsampled_vi_lcb_with_rewards(
    data: &TransitionDataset,
    mdp: &TabularMdp,
    cfg: &SolverConfig,
    seed: u64,
    empirical_cells: Option<&std::collections::BTreeSet<(usize, usize, usize)>>,
) -> Result<PessimisticSolution> {
    cfg.validate()?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let d0 = split_and_subsample(data, h, s, cfg.delta, seed)?;
    let counts = count_transitions(&d0, h, s, a)?;
    let rewards = match empirical_cells {
        None => mdp.rewards.clone(),
        Some(cells) => {
            let mut table = mdp.rewards.clone();
            let mut sums = std::collections::BTreeMap::new();
            for rec in &d0.records {
                let key = (rec.h, rec.s, rec.a);
                if cells.contains(&key) {
                    let entry = sums.entry(key).or_insert((0.0f64, 0u64));
                    entry.0 += rec.r;
                    entry.1 += 1;
                }
            }
            for &(t, ss, aa) in cells {
                table[[t, ss, aa]] = match sums.get(&(t, ss, aa)) {
                    Some(&(sum, n)) if n > 0 => sum / n as f64,
                    _ => 0.0,
                };
            }
            table
        }
    };
    let iota = cfg.resolve_iota(h, s, a, data.n_trajectories);
    run_vi_lcb_resolved(&counts, &rewards, cfg, iota)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_trajectories;
    use crate::testutil;

    fn fixed_cfg(iota: f64) -> SolverConfig {
        SolverConfig {
            c_b: 1.0,
            iota: IotaSpec::Fixed(iota),
            ..SolverConfig::default()
        }
    }

    #[test]
    fn empirical_kernel_rows() {
        let mut counts = TransitionCounts::zeros(1, 2, 1);
        counts.n3[[0, 0, 0, 0]] = 2;
        counts.n3[[0, 0, 0, 1]] = 3;
        counts.n2[[0, 0, 0]] = 5;
        counts.n1[[0, 0]] = 5;
        let p_hat = empirical_kernel(&counts);
        assert_eq!(p_hat[[0, 0, 0, 0]], 0.4);
        assert_eq!(p_hat[[0, 0, 0, 1]], 0.6);
        // Unseen row stays all-zero.
        assert_eq!(p_hat[[0, 1, 0, 0]], 0.0);
        assert_eq!(p_hat[[0, 1, 0, 1]], 0.0);
    }

    #[test]
    fn single_visit_is_point_mass() {
        let mut counts = TransitionCounts::zeros(1, 2, 1);
        counts.n3[[0, 0, 0, 1]] = 1;
        counts.n2[[0, 0, 0]] = 1;
        let p_hat = empirical_kernel(&counts);
        assert_eq!(p_hat[[0, 0, 0, 1]], 1.0);
    }

    #[test]
    fn bonus_zero_count_collapses_to_range_term() {
        // n = 0 forces n' = iota and an all-zero row has zero variance, so
        // with c_b = 1 the bonus is exactly H.
        let h = 6;
        let b = bernstein_bonus(&[0.0, 0.0], &[1.0, 2.0], 0, 3.5, 1.0, h, BonusRule::Bernstein);
        assert_eq!(b, h as f64);
    }

    #[test]
    fn bonus_two_term_hand_case() {
        // p = (1/2, 1/2), v = (0, H), n = 100, iota = 1, c_b = 1:
        // Var = H^2/4, b = H/20 + H/100 = 0.06 H.
        let h = 5usize;
        let b = bernstein_bonus(
            &[0.5, 0.5],
            &[0.0, h as f64],
            100,
            1.0,
            1.0,
            h,
            BonusRule::Bernstein,
        );
        assert!((b - 0.06 * h as f64).abs() < 1e-12);
    }

    #[test]
    fn bonus_decreases_in_n_past_iota() {
        let mut prev = f64::INFINITY;
        for n in [1u64, 2, 5, 10, 100, 1000, 100_000] {
            let b = bernstein_bonus(
                &[0.5, 0.5],
                &[0.0, 4.0],
                n,
                1.0,
                1.0,
                4,
                BonusRule::Bernstein,
            );
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn empty_dataset_collapses_to_zero_solution() {
        let mdp = testutil::two_action_single_state();
        let counts = TransitionCounts::zeros(2, 1, 2);
        let sol = run_vi_lcb(&counts, &mdp.rewards, &SolverConfig::default()).unwrap();
        for t in 0..2 {
            for a in 0..2 {
                assert_eq!(sol.q_lower[[t, 0, a]], 0.0);
            }
            assert_eq!(sol.policy.action(t, 0), Some(0));
        }
    }

    #[test]
    fn forced_two_action_hand_case() {
        // H=1, S=1, A=2, r=(1.0, 0.0), n = 100 per action, iota = 1, c_b = 1:
        // variance is zero (terminal), so b = 0.01 and q = (0.99, 0).
        let mut counts = TransitionCounts::zeros(1, 1, 2);
        for a in 0..2 {
            counts.n3[[0, 0, a, 0]] = 100;
            counts.n2[[0, 0, a]] = 100;
        }
        counts.n1[[0, 0]] = 200;
        let mut rewards = Array3::<f64>::zeros((1, 1, 2));
        rewards[[0, 0, 0]] = 1.0;
        let sol = run_vi_lcb(&counts, &rewards, &fixed_cfg(1.0)).unwrap();
        assert!((sol.bonus[[0, 0, 0]] - 0.01).abs() < 1e-15);
        assert!((sol.q_lower[[0, 0, 0]] - 0.99).abs() < 1e-15);
        assert_eq!(sol.q_lower[[0, 0, 1]], 0.0);
        assert_eq!(sol.policy.action(0, 0), Some(0));
    }

    #[test]
    fn clipping_bounds_hold() {
        let mdp = testutil::random_mdp(5, 4, 3, 31);
        let mu = testutil::random_stochastic_policy(&mdp, 32);
        let data = sample_trajectories(&mdp, &mu, 300, 17).unwrap();
        let sol = run_subsampled_vi_lcb(&data, &mdp, &SolverConfig::default(), 18).unwrap();
        for t in 0..5 {
            for s in 0..4 {
                assert!(sol.v_lower[[t, s]] <= 5.0 + 1e-12);
                for a in 0..3 {
                    assert!(sol.q_lower[[t, s, a]] >= 0.0);
                    assert!(sol.q_lower[[t, s, a]] <= 5.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mdp = testutil::random_mdp(4, 3, 2, 77);
        let mu = testutil::random_stochastic_policy(&mdp, 78);
        let data = sample_trajectories(&mdp, &mu, 200, 5).unwrap();
        let cfg = SolverConfig::default();
        let a = run_subsampled_vi_lcb(&data, &mdp, &cfg, 9).unwrap();
        let b = run_subsampled_vi_lcb(&data, &mdp, &cfg, 9).unwrap();
        assert_eq!(a.q_lower, b.q_lower);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn appending_data_never_shrinks_counts_term() {
        // On the counts path (no subsampling), appending trajectories can
        // only grow each n', so the range term H iota / n' never increases.
        let mdp = testutil::random_mdp(3, 3, 2, 55);
        let mu = testutil::random_stochastic_policy(&mdp, 56);
        let small = sample_trajectories(&mdp, &mu, 100, 3).unwrap();
        let mut big = small.clone();
        let extra = sample_trajectories(&mdp, &mu, 60, 4).unwrap();
        for mut rec in extra.records {
            rec.i += 100;
            big.records.push(rec);
        }
        big.n_trajectories = 160;
        let iota = 5.0;
        let c_small = count_transitions(&small, 3, 3, 2).unwrap();
        let c_big = count_transitions(&big, 3, 3, 2).unwrap();
        for t in 0..3 {
            for s in 0..3 {
                for a in 0..2 {
                    let np_small = (c_small.n2[[t, s, a]] as f64).max(iota);
                    let np_big = (c_big.n2[[t, s, a]] as f64).max(iota);
                    assert!(3.0 * iota / np_big <= 3.0 * iota / np_small + 1e-15);
                }
            }
        }
    }
}

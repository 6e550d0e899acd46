//! Deterministic fixtures and brute-force oracles for the test suites.
//!
//! The oracles here are deliberately naive (exhaustive enumeration, direct
//! recursion, straight-line loops) and share no code with the implementation
//! paths they check.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;

use crate::dataset::TransitionCounts;
use crate::mdp::{Policy, TabularMdp};
use crate::rng;

/// Two-action chain: action 0 advances (capped at the last state), action 1
/// stays. Point-mass start at state 0.
pub fn deterministic_chain(horizon: usize, num_states: usize) -> TabularMdp {
    let mut kernel = Array4::<f64>::zeros((horizon, num_states, 2, num_states));
    let mut rewards = Array3::<f64>::zeros((horizon, num_states, 2));
    for t in 0..horizon {
        for s in 0..num_states {
            kernel[[t, s, 0, (s + 1).min(num_states - 1)]] = 1.0;
            kernel[[t, s, 1, s]] = 1.0;
            rewards[[t, s, 0]] = 0.6;
            rewards[[t, s, 1]] = 0.3;
        }
    }
    let mut p0 = Array1::<f64>::zeros(num_states);
    p0[0] = 1.0;
    TabularMdp {
        horizon,
        num_states,
        num_actions: 2,
        kernel,
        p0,
        rewards,
    }
}

/// H=2, S=1, A=2 self-loop with rewards (1, 0) at both levels.
pub fn two_action_single_state() -> TabularMdp {
    let mut kernel = Array4::<f64>::zeros((2, 1, 2, 1));
    kernel.fill(1.0);
    let mut rewards = Array3::<f64>::zeros((2, 1, 2));
    rewards[[0, 0, 0]] = 1.0;
    rewards[[1, 0, 0]] = 1.0;
    TabularMdp {
        horizon: 2,
        num_states: 1,
        num_actions: 2,
        kernel,
        p0: Array1::from_elem(1, 1.0),
        rewards,
    }
}

/// Random strictly valid MDP with flat-Dirichlet kernel rows.
pub fn random_mdp(horizon: usize, num_states: usize, num_actions: usize, seed: u64) -> TabularMdp {
    let mut stream = rng::stream(seed, 0, 0, 0x54455354);
    let mut kernel = Array4::<f64>::zeros((horizon, num_states, num_actions, num_states));
    let mut rewards = Array3::<f64>::zeros((horizon, num_states, num_actions));
    for t in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                let mut row = vec![0.0f64; num_states];
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = -(1.0 - stream.gen::<f64>()).ln();
                    total += *v;
                }
                for (sp, v) in row.iter().enumerate() {
                    kernel[[t, s, a, sp]] = v / total;
                }
                rewards[[t, s, a]] = stream.gen::<f64>();
            }
        }
    }
    let mut p0 = vec![0.0f64; num_states];
    let mut total = 0.0;
    for v in p0.iter_mut() {
        *v = -(1.0 - stream.gen::<f64>()).ln();
        total += *v;
    }
    TabularMdp {
        horizon,
        num_states,
        num_actions,
        kernel,
        p0: Array1::from_iter(p0.into_iter().map(|v| v / total)),
        rewards,
    }
}

/// Wrapper over the library's gap-floored generator with test-sized dims.
pub fn random_gapped_mdp(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    gap_floor: f64,
    seed: u64,
) -> TabularMdp {
    crate::instances::make_random_gap_mdp(num_states, num_actions, horizon, gap_floor, seed)
        .expect("gap-floored instance")
}

pub fn random_stochastic_policy(mdp: &TabularMdp, seed: u64) -> Policy {
    let mut stream = rng::stream(seed, 1, 1, 0x54455354);
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut probs = Array3::<f64>::zeros((h, s, a));
    for t in 0..h {
        for ss in 0..s {
            let mut row = vec![0.0f64; a];
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = -(1.0 - stream.gen::<f64>()).ln();
                total += *v;
            }
            for (aa, v) in row.iter().enumerate() {
                probs[[t, ss, aa]] = v / total;
            }
        }
    }
    Policy::Stochastic(probs)
}

pub fn assert_close_or_both_inf(a: f64, b: f64, rel_tol: f64) {
    if a.is_infinite() || b.is_infinite() {
        assert_eq!(a, b, "infinity mismatch: {a} vs {b}");
    } else {
        let scale = 1.0f64.max(a.abs()).max(b.abs());
        assert!((a - b).abs() <= rel_tol * scale, "{a} vs {b}");
    }
}

/// All `A^(H*S)` deterministic policies, in mixed-radix order.
pub fn all_deterministic_policies(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
) -> Vec<Array2<usize>> {
    let cells = horizon * num_states;
    let total = num_actions.checked_pow(cells as u32).expect("enumeration size");
    assert!(total <= 1 << 22, "enumeration too large: {total}");
    let mut out = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut actions = Array2::<usize>::zeros((horizon, num_states));
        for t in 0..horizon {
            for s in 0..num_states {
                actions[[t, s]] = code % num_actions;
                code /= num_actions;
            }
        }
        out.push(actions);
    }
    out
}

/// Expected return of a deterministic policy by direct recursion over the
/// trajectory tree; no dynamic programming.
pub fn brute_force_return(mdp: &TabularMdp, actions: &Array2<usize>) -> f64 {
    fn go(mdp: &TabularMdp, actions: &Array2<usize>, t: usize, s: usize) -> f64 {
        if t == mdp.horizon {
            return 0.0;
        }
        let a = actions[[t, s]];
        let mut value = mdp.rewards[[t, s, a]];
        for sp in 0..mdp.num_states {
            let p = mdp.kernel[[t, s, a, sp]];
            if p > 0.0 {
                value += p * go(mdp, actions, t + 1, sp);
            }
        }
        value
    }
    let mut total = 0.0;
    for s in 0..mdp.num_states {
        if mdp.p0[s] > 0.0 {
            total += mdp.p0[s] * go(mdp, actions, 0, s);
        }
    }
    total
}

/// Max initial value over every deterministic policy.
pub fn oracle_optimal_v0(mdp: &TabularMdp) -> f64 {
    all_deterministic_policies(mdp.horizon, mdp.num_states, mdp.num_actions)
        .iter()
        .map(|pi| brute_force_return(mdp, pi))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Independent forward occupancy for a deterministic policy.
fn forward_occupancy(mdp: &TabularMdp, actions: &Array2<usize>) -> Array2<f64> {
    let (h, s) = (mdp.horizon, mdp.num_states);
    let mut d = Array2::<f64>::zeros((h, s));
    for ss in 0..s {
        d[[0, ss]] = mdp.p0[ss];
    }
    for t in 0..h.saturating_sub(1) {
        for ss in 0..s {
            let mass = d[[t, ss]];
            if mass > 0.0 {
                let a = actions[[t, ss]];
                for sp in 0..s {
                    d[[t + 1, sp]] += mass * mdp.kernel[[t, ss, a, sp]];
                }
            }
        }
    }
    d
}

pub struct OracleCoverage {
    pub c_star: f64,
    pub p_unif: f64,
    pub p_single: f64,
    pub n_optimal_policies: usize,
}

/// Coverage extrema by exhaustive enumeration over deterministic policies
/// whose initial value is optimal (within a scale-aware tolerance).
pub fn oracle_coverage(mdp: &TabularMdp, mu: &Policy, tol: f64) -> OracleCoverage {
    let policies = all_deterministic_policies(mdp.horizon, mdp.num_states, mdp.num_actions);
    let values: Vec<f64> = policies.iter().map(|pi| brute_force_return(mdp, pi)).collect();
    let v_star = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let cutoff = v_star - tol * (1.0 + v_star.abs());
    let d_mu = crate::mdp::occupancy(mdp, mu).expect("valid behavior policy");

    let mut c_star = 0.0f64;
    let mut p_unif = f64::INFINITY;
    let mut p_single = 0.0f64;
    let mut n_optimal = 0usize;
    for (pi, &v0) in policies.iter().zip(&values) {
        if v0 < cutoff {
            continue;
        }
        n_optimal += 1;
        let d = forward_occupancy(mdp, pi);
        let mut own_min = f64::INFINITY;
        for t in 0..mdp.horizon {
            for s in 0..mdp.num_states {
                if d[[t, s]] > 0.0 {
                    let a = pi[[t, s]];
                    let cover = d_mu.d[[t, s, a]];
                    p_unif = p_unif.min(cover);
                    own_min = own_min.min(cover);
                    c_star = c_star.max(if cover == 0.0 {
                        f64::INFINITY
                    } else {
                        d[[t, s]] / cover
                    });
                }
            }
        }
        p_single = p_single.max(own_min);
    }
    if !p_unif.is_finite() {
        p_unif = 0.0;
    }
    OracleCoverage {
        c_star,
        p_unif,
        p_single,
        n_optimal_policies: n_optimal,
    }
}

/// Four-state, two-action, horizon-5 chain for the identification and
/// epsilon-frontier experiments, with its behavior policy: a well-rewarded
/// hub leaks into three "tier" states of increasing estimation difficulty
/// (falling optimal-action reward, falling behavior coverage). Action 1 is
/// optimal at every tier state; tier 1 holds the designated minimum gap of
/// 0.4 (its actions share a kernel row, so the gap is the reward difference
/// exactly), and all other positive gaps are larger. The behavior policy
/// keeps every optimal-reachable cell's occupancy at or above 0.05.
pub fn identification_chain() -> (TabularMdp, Policy) {
    let h = 5;
    let s = 4;
    let a = 2;
    // Rows: per state, per action, distribution over [hub, t1, t2, t3].
    let hub_a0 = [0.897, 0.065, 0.018, 0.020];
    let hub_a1 = [0.03, 0.52, 0.24, 0.21];
    let t1 = [0.80, 0.20, 0.0, 0.0];
    let t2 = [0.65, 0.0, 0.35, 0.0];
    let t3 = [0.50, 0.0, 0.0, 0.50];
    // Rewards (action 0, action 1) per state.
    let rewards_by_state = [[0.8, 0.3], [0.60, 1.00], [0.30, 0.75], [0.0, 0.41]];
    // Behavior probability of action 1 per state.
    let mu_a1 = [0.5, 0.75, 0.55, 0.5];
    let mut kernel = Array4::<f64>::zeros((h, s, a, s));
    let mut rewards = Array3::<f64>::zeros((h, s, a));
    let mut mu = Array3::<f64>::zeros((h, s, a));
    for t in 0..h {
        for (ss, row_pair) in [(0, [hub_a0, hub_a1]), (1, [t1, t1]), (2, [t2, t2]), (3, [t3, t3])] {
            for aa in 0..a {
                for sp in 0..s {
                    kernel[[t, ss, aa, sp]] = row_pair[aa][sp];
                }
                rewards[[t, ss, aa]] = rewards_by_state[ss][aa];
            }
            mu[[t, ss, 0]] = 1.0 - mu_a1[ss];
            mu[[t, ss, 1]] = mu_a1[ss];
        }
    }
    let mut p0 = Array1::<f64>::zeros(s);
    p0[0] = 1.0;
    let mdp = TabularMdp {
        horizon: h,
        num_states: s,
        num_actions: a,
        kernel,
        p0,
        rewards,
    };
    (mdp, Policy::Stochastic(mu))
}

/// Minimum-gap variant of the frontier experiments: every state is a
/// repeated two-action bandit whose actions share one mixing kernel row and
/// differ in reward by exactly `gap`; action 1 is optimal everywhere (so the
/// empty-data tie-break is maximally wrong). Reward levels spread the values
/// across states to give the kernel rows real variance.
pub fn bandit_lattice(horizon: usize, gap: f64) -> TabularMdp {
    let s = 4;
    let a = 2;
    let mix = [0.40, 0.30, 0.20, 0.10];
    let levels = [0.95, 0.65, 0.35, 0.05 + gap];
    let mut kernel = Array4::<f64>::zeros((horizon, s, a, s));
    let mut rewards = Array3::<f64>::zeros((horizon, s, a));
    for t in 0..horizon {
        for ss in 0..s {
            for aa in 0..a {
                for sp in 0..s {
                    kernel[[t, ss, aa, sp]] = mix[sp];
                }
                rewards[[t, ss, aa]] = levels[ss] - if aa == 0 { gap } else { 0.0 };
            }
        }
    }
    TabularMdp {
        horizon,
        num_states: s,
        num_actions: a,
        kernel,
        p0: Array1::from_vec(mix.to_vec()),
        rewards,
    }
}

/// Straight-line re-implementation of the pessimistic backward pass, written
/// independently of the solver module; used for bit-level equality checks.
pub fn straightline_vi_lcb(
    counts: &TransitionCounts,
    rewards: &Array3<f64>,
    c_b: f64,
    iota: f64,
) -> (Array3<f64>, Array2<f64>, Array3<f64>, Array2<usize>) {
    let (h, s, a) = counts.n2.dim();
    let mut q = Array3::<f64>::zeros((h, s, a));
    let mut v = Array2::<f64>::zeros((h + 1, s));
    let mut b_table = Array3::<f64>::zeros((h, s, a));
    let mut pol = Array2::<usize>::zeros((h, s));
    for t in (0..h).rev() {
        for ss in 0..s {
            for aa in 0..a {
                let n = counts.n2[[t, ss, aa]];
                let mut p = vec![0.0f64; s];
                if n > 0 {
                    for sp in 0..s {
                        p[sp] = counts.n3[[t, ss, aa, sp]] as f64 / n as f64;
                    }
                }
                let mut mean = 0.0;
                let mut ex2 = 0.0;
                for sp in 0..s {
                    mean += p[sp] * v[[t + 1, sp]];
                    ex2 += p[sp] * v[[t + 1, sp]] * v[[t + 1, sp]];
                }
                let var = (ex2 - mean * mean).max(0.0);
                let n_prime = (n as f64).max(iota);
                let bonus = c_b * (var * iota / n_prime).sqrt() + c_b * h as f64 * iota / n_prime;
                b_table[[t, ss, aa]] = bonus;
                q[[t, ss, aa]] = (rewards[[t, ss, aa]] + mean - bonus).max(0.0);
            }
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for aa in 0..a {
                if q[[t, ss, aa]] > best {
                    best = q[[t, ss, aa]];
                    best_a = aa;
                }
            }
            v[[t, ss]] = best;
            pol[[t, ss]] = best_a;
        }
    }
    (q, v, b_table, pol)
}

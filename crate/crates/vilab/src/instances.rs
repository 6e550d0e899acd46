//! Generators for the named hard-instance constructions and for seeded
//! random instances with a guaranteed gap floor.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::dataset::RewardNoise;
use crate::error::{Error, Result};
use crate::mdp::{gap_min, Policy, TabularMdp};
use crate::rng::{self, domain};

/// Parameters of the bandit-family instance: `num_true_states` decision
/// states plus absorbing good/bad states, horizon `2 * half_horizon + 1`,
/// and a distinguished-action matrix `phi` of shape `[half_horizon, S]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub num_true_states: usize,
    pub num_actions: usize,
    pub half_horizon: usize,
    pub tau: f64,
    pub lambda: f64,
    pub phi: Array2<usize>,
}

impl LowerBoundParams {
    /// Uniformly random `phi` from its own seeded stream.
    pub fn with_random_phi(
        num_true_states: usize,
        num_actions: usize,
        half_horizon: usize,
        tau: f64,
        lambda: f64,
        phi_seed: u64,
    ) -> Self {
        let mut phi = Array2::<usize>::zeros((half_horizon, num_true_states));
        for t in 0..half_horizon {
            for s in 0..num_true_states {
                let mut stream = rng::stream(phi_seed, t as u64, s as u64, domain::PHI);
                phi[[t, s]] = stream.gen_range(0..num_actions);
            }
        }
        LowerBoundParams {
            num_true_states,
            num_actions,
            half_horizon,
            tau,
            lambda,
            phi,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_true_states == 0 || self.num_actions < 2 || self.half_horizon == 0 {
            return Err(Error::InvalidParam(
                "lower-bound family needs S >= 1, A >= 2, H >= 1".into(),
            ));
        }
        if !(0.0 < self.tau && self.tau < 0.5) {
            return Err(Error::InvalidParam(format!("tau = {} not in (0, 1/2)", self.tau)));
        }
        if !(0.0 < self.lambda && self.lambda <= 1.0 / 3.0) {
            return Err(Error::InvalidParam(format!(
                "lambda = {} not in (0, 1/3]",
                self.lambda
            )));
        }
        if self.phi.dim() != (self.half_horizon, self.num_true_states) {
            return Err(Error::InvalidParam("phi shape mismatch".into()));
        }
        if self.phi.iter().any(|&a| a >= self.num_actions) {
            return Err(Error::InvalidParam("phi entry exceeds action count".into()));
        }
        Ok(())
    }
}

/// Bandit-family instance: true states self-loop with rate `1 - 1/H` and leak
/// `1/(2H)` to each absorbing state over the first `H` levels; the
/// distinguished action tilts the leak to `(1 +- 2 tau)/(2H)`; level `H+1`
/// splits half/half; the good state pays 1 per step over the last `H`
/// levels. The behavior policy is uniform on true states and plays action 0
/// at the absorbing states.
pub fn make_lower_bound_instance(p: &LowerBoundParams) -> Result<(TabularMdp, Policy)> {
    p.validate()?;
    let (s_true, a, hh) = (p.num_true_states, p.num_actions, p.half_horizon);
    let s_total = s_true + 2;
    let s_good = s_true;
    let s_bad = s_true + 1;
    let horizon = 2 * hh + 1;

    let mut kernel = Array4::<f64>::zeros((horizon, s_total, a, s_total));
    let mut rewards = Array3::<f64>::zeros((horizon, s_total, a));
    for t in 0..horizon {
        for aa in 0..a {
            kernel[[t, s_good, aa, s_good]] = 1.0;
            kernel[[t, s_bad, aa, s_bad]] = 1.0;
            if t >= hh + 1 {
                rewards[[t, s_good, aa]] = 1.0;
            }
            for si in 0..s_true {
                if t < hh {
                    let (to_good, to_bad) = if p.phi[[t, si]] == aa {
                        (
                            (1.0 + 2.0 * p.tau) / (2.0 * hh as f64),
                            (1.0 - 2.0 * p.tau) / (2.0 * hh as f64),
                        )
                    } else {
                        (1.0 / (2.0 * hh as f64), 1.0 / (2.0 * hh as f64))
                    };
                    kernel[[t, si, aa, si]] = 1.0 - 1.0 / hh as f64;
                    kernel[[t, si, aa, s_good]] = to_good;
                    kernel[[t, si, aa, s_bad]] = to_bad;
                } else if t == hh {
                    kernel[[t, si, aa, s_good]] = 0.5;
                    kernel[[t, si, aa, s_bad]] = 0.5;
                } else {
                    kernel[[t, si, aa, si]] = 1.0;
                }
            }
        }
    }

    let mut p0 = Array1::<f64>::zeros(s_total);
    for si in 0..s_true {
        p0[si] = p.lambda / s_true as f64;
    }
    p0[s_good] = (1.0 - p.lambda) / 2.0;
    p0[s_bad] = (1.0 - p.lambda) / 2.0;

    let mdp = TabularMdp {
        horizon,
        num_states: s_total,
        num_actions: a,
        kernel,
        p0,
        rewards,
    };

    let mut mu = Array3::<f64>::zeros((horizon, s_total, a));
    for t in 0..horizon {
        for si in 0..s_true {
            for aa in 0..a {
                mu[[t, si, aa]] = 1.0 / a as f64;
            }
        }
        mu[[t, s_good, 0]] = 1.0;
        mu[[t, s_bad, 0]] = 1.0;
    }
    Ok((mdp, Policy::Stochastic(mu)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NecessityRewardModel {
    Bernoulli,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityParams {
    pub k: usize,
    pub tau: f64,
    pub reward_model: NecessityRewardModel,
}

impl NecessityParams {
    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParam(format!("k = {} must be >= 2", self.k)));
        }
        if !(0.0 < self.tau && self.tau < 0.5) {
            return Err(Error::InvalidParam(format!("tau = {} not in (0, 1/2)", self.tau)));
        }
        Ok(())
    }
}

/// Two-level instance with `k + 2` states plus the behavior policy that
/// covers only one of the two optimal routes, together with the stochastic
/// reward cells the solver must estimate empirically.
#[derive(Debug, Clone)]
pub struct NecessityInstance {
    pub mdp: TabularMdp,
    pub mu: Policy,
    pub noise: RewardNoise,
    /// Cells whose reward is sampled rather than known: both actions at the
    /// hub successor state, level 1.
    pub stochastic_cells: BTreeSet<(usize, usize, usize)>,
    pub start: usize,
    pub hub: usize,
    pub s_last: usize,
}

/// The horizon-2 necessity construction: action 0 at the start leads to a
/// hub whose rewards are stochastic with mean 1/2; action 1 spreads
/// uniformly over `k` branch states paying 1/2, except the last branch where
/// action 0 pays `1/2 - tau` and the uncovered action 1 pays `1/2`.
pub fn make_necessity_instance(p: &NecessityParams) -> Result<NecessityInstance> {
    p.validate()?;
    let k = p.k;
    let s_total = k + 2;
    let start = 0usize;
    let hub = 1usize;
    let branch = |i: usize| 1 + i; // i in 1..=k
    let s_last = branch(k);
    let horizon = 2;
    let a = 2;

    let mut kernel = Array4::<f64>::zeros((horizon, s_total, a, s_total));
    let mut rewards = Array3::<f64>::zeros((horizon, s_total, a));

    // Level 0: decisions at the start state; everything else self-loops.
    kernel[[0, start, 0, hub]] = 1.0;
    for i in 1..=k {
        kernel[[0, start, 1, branch(i)]] = 1.0 / k as f64;
    }
    for s in 1..s_total {
        for aa in 0..a {
            kernel[[0, s, aa, s]] = 1.0;
        }
    }
    // Level 1: terminal rewards; kernel rows self-loop.
    for s in 0..s_total {
        for aa in 0..a {
            kernel[[1, s, aa, s]] = 1.0;
        }
    }
    for aa in 0..a {
        rewards[[1, hub, aa]] = 0.5;
    }
    for i in 1..k {
        for aa in 0..a {
            rewards[[1, branch(i), aa]] = 0.5;
        }
    }
    rewards[[1, s_last, 0]] = 0.5 - p.tau;
    rewards[[1, s_last, 1]] = 0.5;

    let mut p0 = Array1::<f64>::zeros(s_total);
    p0[start] = 1.0;

    let mdp = TabularMdp {
        horizon,
        num_states: s_total,
        num_actions: a,
        kernel,
        p0,
        rewards,
    };

    let mut mu = Array3::<f64>::zeros((horizon, s_total, a));
    for t in 0..horizon {
        mu[[t, start, 0]] = 1.0 / (k + 1) as f64;
        mu[[t, start, 1]] = k as f64 / (k + 1) as f64;
        for s in 1..s_total {
            mu[[t, s, 0]] = 1.0;
        }
    }

    let mut cells = BTreeSet::new();
    cells.insert((1, hub, 0));
    cells.insert((1, hub, 1));
    let noise = match p.reward_model {
        NecessityRewardModel::Bernoulli => RewardNoise::Bernoulli { cells: cells.clone() },
        NecessityRewardModel::Normal => RewardNoise::Normal {
            cells: cells.clone(),
            std_dev: 1.0,
        },
    };
    Ok(NecessityInstance {
        mdp,
        mu: Policy::Stochastic(mu),
        noise,
        stochastic_cells: cells,
        start,
        hub,
        s_last,
    })
}

const RANDOM_GAP_ATTEMPTS: usize = 1000;

/// Random instance with Dirichlet-style kernel rows and uniform rewards,
/// rejection-resampled until the smallest positive gap is at least
/// `gap_floor`. Deterministic given the seed.
pub fn make_random_gap_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gap_floor: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if !(0.0 < gap_floor && gap_floor < 1.0) {
        return Err(Error::InvalidParam(format!(
            "gap_floor = {gap_floor} not in (0, 1)"
        )));
    }
    if num_actions < 2 {
        // A single action is trivially optimal everywhere; no positive gap
        // can exist, so reject the parameterization up front.
        return Err(Error::InvalidParam(
            "random gap instance needs at least 2 actions".into(),
        ));
    }
    for attempt in 0..RANDOM_GAP_ATTEMPTS {
        let mut stream = rng::stream(seed, attempt as u64, 0, domain::INSTANCE);
        let mdp = random_mdp_draw(num_states, num_actions, horizon, &mut stream);
        match gap_min(&mdp, crate::mdp::DEFAULT_OPT_TOL) {
            Ok((gap, _)) if gap >= gap_floor => return Ok(mdp),
            Ok(_) | Err(Error::NoPositiveGap) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationBudget { attempts: RANDOM_GAP_ATTEMPTS })
}

fn random_mdp_draw<R: Rng>(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    stream: &mut R,
) -> TabularMdp {
    let mut kernel = Array4::<f64>::zeros((horizon, num_states, num_actions, num_states));
    let mut rewards = Array3::<f64>::zeros((horizon, num_states, num_actions));
    for t in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                let mut row = vec![0.0f64; num_states];
                let mut total = 0.0;
                for v in row.iter_mut() {
                    // Exp(1) draws normalize to a flat Dirichlet row.
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

/// The `1/A`-everywhere behavior policy.
pub fn uniform_behavior(mdp: &TabularMdp) -> Policy {
    Policy::Stochastic(Array3::from_elem(
        (mdp.horizon, mdp.num_states, mdp.num_actions),
        1.0 / mdp.num_actions as f64,
    ))
}

/// A named instance together with its behavior policy and, when rewards are
/// stochastic, the reward noise and the cells to estimate empirically.
#[derive(Debug, Clone)]
pub struct InstanceBundle {
    pub name: String,
    pub mdp: TabularMdp,
    pub mu: Policy,
    pub noise: Option<RewardNoise>,
    pub empirical_reward_cells: Option<BTreeSet<(usize, usize, usize)>>,
}

/// Parses the CLI instance grammar: `lb(S,A,H,tau,lambda,phi_seed)`,
/// `necessity(k,tau)`, `random(S,A,H,gap_floor,seed)`.
pub fn parse_instance_spec(spec: &str) -> Result<InstanceBundle> {
    let spec = spec.trim();
    let (head, rest) = spec
        .split_once('(')
        .ok_or_else(|| Error::Parse(format!("expected name(args) in {spec:?}")))?;
    let args_str = rest
        .strip_suffix(')')
        .ok_or_else(|| Error::Parse(format!("missing closing parenthesis in {spec:?}")))?;
    let args: Vec<&str> = if args_str.trim().is_empty() {
        Vec::new()
    } else {
        args_str.split(',').map(str::trim).collect()
    };
    let wrong_arity = |n: usize| Error::Parse(format!("{head} expects {n} arguments: {spec:?}"));
    let int = |v: &str| -> Result<usize> {
        v.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad integer {v:?} in {spec:?}")))
    };
    let real = |v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad real {v:?} in {spec:?}")))
    };
    let long = |v: &str| -> Result<u64> {
        v.parse::<u64>()
            .map_err(|_| Error::Parse(format!("bad seed {v:?} in {spec:?}")))
    };
    match head {
        "lb" => {
            if args.len() != 6 {
                return Err(wrong_arity(6));
            }
            let params = LowerBoundParams::with_random_phi(
                int(args[0])?,
                int(args[1])?,
                int(args[2])?,
                real(args[3])?,
                real(args[4])?,
                long(args[5])?,
            );
            let (mdp, mu) = make_lower_bound_instance(&params)?;
            Ok(InstanceBundle {
                name: spec.to_string(),
                mdp,
                mu,
                noise: None,
                empirical_reward_cells: None,
            })
        }
        "necessity" => {
            if args.len() != 2 {
                return Err(wrong_arity(2));
            }
            let params = NecessityParams {
                k: int(args[0])?,
                tau: real(args[1])?,
                reward_model: NecessityRewardModel::Bernoulli,
            };
            let inst = make_necessity_instance(&params)?;
            Ok(InstanceBundle {
                name: spec.to_string(),
                mdp: inst.mdp,
                mu: inst.mu,
                noise: Some(inst.noise),
                empirical_reward_cells: Some(inst.stochastic_cells),
            })
        }
        "random" => {
            if args.len() != 5 {
                return Err(wrong_arity(5));
            }
            let mdp = make_random_gap_mdp(
                int(args[0])?,
                int(args[1])?,
                int(args[2])?,
                real(args[3])?,
                long(args[4])?,
            )?;
            let mu = uniform_behavior(&mdp);
            Ok(InstanceBundle {
                name: spec.to_string(),
                mdp,
                mu,
                noise: None,
                empirical_reward_cells: None,
            })
        }
        other => Err(Error::Parse(format!("unknown instance kind {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{occupancy, optimal_values, validate_mdp, ValidationMode, DEFAULT_OPT_TOL};

    fn lb_params(seed: u64) -> LowerBoundParams {
        LowerBoundParams::with_random_phi(3, 2, 4, 0.2, 0.3, seed)
    }

    #[test]
    fn lower_bound_instance_is_strictly_valid() {
        let (mdp, mu) = make_lower_bound_instance(&lb_params(1)).unwrap();
        assert!(validate_mdp(&mdp, ValidationMode::Strict).is_valid());
        mu.validate(&mdp).unwrap();
        assert_eq!(mdp.horizon, 9);
        assert_eq!(mdp.num_states, 5);
    }

    #[test]
    fn lower_bound_distinguished_cell_value() {
        let p = lb_params(2);
        let (mdp, _) = make_lower_bound_instance(&p).unwrap();
        let hh = p.half_horizon as f64;
        for t in 0..p.half_horizon {
            for si in 0..p.num_true_states {
                let a_star = p.phi[[t, si]];
                let expect = (1.0 + 2.0 * p.tau) / (2.0 * hh);
                assert!((mdp.kernel[[t, si, a_star, 3]] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lower_bound_gap_table_is_tau_at_non_distinguished() {
        let p = lb_params(3);
        let (mdp, _) = make_lower_bound_instance(&p).unwrap();
        let (gap, gaps) = gap_min(&mdp, DEFAULT_OPT_TOL).unwrap();
        assert!((gap - p.tau).abs() < 1e-12);
        for t in 0..p.half_horizon {
            for si in 0..p.num_true_states {
                for a in 0..p.num_actions {
                    let g = gaps[[t, si, a]];
                    if a == p.phi[[t, si]] {
                        assert!(g.abs() < 1e-12);
                    } else {
                        assert!((g - p.tau).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn good_state_is_worth_half_horizon() {
        let p = lb_params(4);
        let (mdp, _) = make_lower_bound_instance(&p).unwrap();
        let values = optimal_values(&mdp).unwrap();
        // From level H+1 onward the good state pays 1 per step.
        assert!((values.v[[p.half_horizon + 1, 3]] - p.half_horizon as f64).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_behavior_occupancy_formula() {
        // d_t(s_i, a) = (lambda / S) (1 - 1/H)^t / A over the first H levels.
        let p = lb_params(5);
        let (mdp, mu) = make_lower_bound_instance(&p).unwrap();
        let occ = occupancy(&mdp, &mu).unwrap();
        let (s, a, hh) = (3.0, 2.0, p.half_horizon as f64);
        for t in 0..=p.half_horizon {
            let expect = (p.lambda / s) * (1.0 - 1.0 / hh).powi(t as i32) / a;
            for si in 0..p.num_true_states {
                for aa in 0..p.num_actions {
                    assert!((occ.d[[t, si, aa]] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_behavior_matches_paper_mu_except_absorbing() {
        let p = lb_params(6);
        let (mdp, mu) = make_lower_bound_instance(&p).unwrap();
        let uni = uniform_behavior(&mdp);
        for t in 0..mdp.horizon {
            for s in 0..mdp.num_states {
                for a in 0..mdp.num_actions {
                    if s < p.num_true_states {
                        assert_eq!(mu.prob(t, s, a), uni.prob(t, s, a));
                    }
                }
            }
            assert_eq!(mu.prob(t, 3, 0), 1.0);
            assert_eq!(mu.prob(t, 4, 0), 1.0);
            assert_eq!(uni.prob(t, 3, 0), 0.5);
        }
    }

    #[test]
    fn necessity_instance_shape_and_gaps() {
        let inst = make_necessity_instance(&NecessityParams {
            k: 10,
            tau: 0.1,
            reward_model: NecessityRewardModel::Bernoulli,
        })
        .unwrap();
        assert!(validate_mdp(&inst.mdp, ValidationMode::Strict).is_valid());
        assert_eq!(inst.mdp.num_states, 12);
        let (gap, gaps) = gap_min(&inst.mdp, DEFAULT_OPT_TOL).unwrap();
        assert!((gap - 0.1).abs() < 1e-12);
        // Exactly one positive-gap cell, at level 1, last branch, action 0.
        let mut positives = Vec::new();
        for ((t, s, a), &g) in gaps.indexed_iter() {
            if g > DEFAULT_OPT_TOL {
                positives.push((t, s, a, g));
            }
        }
        assert_eq!(positives.len(), 1);
        let (t, s, a, g) = positives[0];
        assert_eq!((t, s, a), (1, inst.s_last, 0));
        assert!((g - 0.1).abs() < 1e-12);
    }

    #[test]
    fn necessity_both_routes_are_worth_half() {
        let inst = make_necessity_instance(&NecessityParams {
            k: 4,
            tau: 0.2,
            reward_model: NecessityRewardModel::Bernoulli,
        })
        .unwrap();
        let values = optimal_values(&inst.mdp).unwrap();
        assert!((values.q[[0, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((values.q[[0, 0, 1]] - 0.5).abs() < 1e-12);
        assert!((values.initial_value(&inst.mdp) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_gap_mdp_honors_floor_and_seed() {
        let a = make_random_gap_mdp(3, 2, 3, 0.15, 9).unwrap();
        let b = make_random_gap_mdp(3, 2, 3, 0.15, 9).unwrap();
        assert_eq!(a, b);
        assert!(validate_mdp(&a, ValidationMode::Strict).is_valid());
        let (gap, _) = gap_min(&a, DEFAULT_OPT_TOL).unwrap();
        assert!(gap >= 0.15);
        assert!(make_random_gap_mdp(1, 1, 2, 0.1, 0).is_err());
    }

    #[test]
    fn instance_spec_grammar_round_trips() {
        for spec in ["lb(3,2,4,0.2,0.3,7)", "necessity(10,0.1)", "random(3,2,3,0.15,4)"] {
            let bundle = parse_instance_spec(spec).unwrap();
            assert!(validate_mdp(&bundle.mdp, ValidationMode::Strict).is_valid());
            assert_eq!(bundle.name, spec);
        }
        assert!(parse_instance_spec("chain(3)").is_err());
        assert!(parse_instance_spec("lb(3,2)").is_err());
    }
}

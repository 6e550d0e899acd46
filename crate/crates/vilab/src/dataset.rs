//! Seeded trajectory generation under a behavior policy, the split/trim/
//! subsample protocol, and count-tensor construction.
//!
//! Datasets are stored as flat per-transition records (the NDJSON file
//! format), with trajectory structure recoverable from the trajectory index.
//! Generated datasets carry exactly `H` records per trajectory; the
//! subsampled output is a multiset of transitions and sets `subsampled`.

use ndarray::{Array2, Array3, Array4};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp, ValidationMode};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    /// Trajectory index.
    pub i: usize,
    /// Level (0-based).
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub sp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    pub records: Vec<TransitionRecord>,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Identifier of the generating (instance, policy) pair.
    pub source: String,
    /// True once the split/trim/subsample protocol has been applied.
    pub subsampled: bool,
}

impl TransitionDataset {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Reward noise for cells whose reward is stochastic rather than the MDP's
/// known deterministic value (the hard-instance carve-out). The table value
/// at a listed cell is the mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RewardNoise {
    Bernoulli { cells: BTreeSet<(usize, usize, usize)> },
    Normal { cells: BTreeSet<(usize, usize, usize)>, std_dev: f64 },
}

impl RewardNoise {
    pub fn cells(&self) -> &BTreeSet<(usize, usize, usize)> {
        match self {
            RewardNoise::Bernoulli { cells } => cells,
            RewardNoise::Normal { cells, .. } => cells,
        }
    }

    fn sample<R: rand::Rng>(&self, rng: &mut R, t: usize, s: usize, a: usize, mean: f64) -> f64 {
        match self {
            RewardNoise::Bernoulli { cells } => {
                if cells.contains(&(t, s, a)) {
                    if rng.gen::<f64>() < mean {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    mean
                }
            }
            RewardNoise::Normal { cells, std_dev } => {
                if cells.contains(&(t, s, a)) {
                    let normal = Normal::new(mean, *std_dev).expect("valid normal");
                    normal.sample(rng)
                } else {
                    mean
                }
            }
        }
    }
}

/// `n` i.i.d. trajectories under `mu`, deterministic given the seed. Each
/// trajectory draws from its own `(seed, index)` stream, so generation is
/// order-independent.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    mu: &Policy,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    sample_trajectories_with_noise(mdp, mu, n, seed, None)
}

/// As [`sample_trajectories`], recording noisy rewards at the cells named by
/// `noise` (reward draws come from a stream separate from the transitions).
pub fn sample_trajectories_with_noise(
    mdp: &TabularMdp,
    mu: &Policy,
    n: usize,
    seed: u64,
    noise: Option<&RewardNoise>,
) -> Result<TransitionDataset> {
    let report = crate::mdp::validate_mdp(mdp, ValidationMode::Strict);
    if !report.is_valid() {
        return Err(Error::InvalidMdp(report));
    }
    mu.validate(mdp)?;
    let h = mdp.horizon;
    let mut records = Vec::with_capacity(n * h);
    for i in 0..n {
        let mut rng = rng::stream(seed, i as u64, 0, domain::TRAJECTORY);
        let mut reward_rng = rng::stream(seed, i as u64, 0, domain::REWARD);
        let mut s = rng::sample_categorical(&mut rng, mdp.p0.as_slice().unwrap());
        for t in 0..h {
            let a = match mu {
                Policy::Deterministic(actions) => actions[[t, s]],
                Policy::Stochastic(probs) => {
                    let row: Vec<f64> =
                        (0..mdp.num_actions).map(|aa| probs[[t, s, aa]]).collect();
                    rng::sample_categorical(&mut rng, &row)
                }
            };
            let mean = mdp.rewards[[t, s, a]];
            let r = match noise {
                Some(nz) => nz.sample(&mut reward_rng, t, s, a, mean),
                None => mean,
            };
            let row: Vec<f64> = (0..mdp.num_states)
                .map(|sp| mdp.kernel[[t, s, a, sp]])
                .collect();
            let sp = rng::sample_categorical(&mut rng, &row);
            records.push(TransitionRecord { i, h: t, s, a, r, sp });
            s = sp;
        }
    }
    Ok(TransitionDataset {
        records,
        n_trajectories: n,
        seed,
        source: String::new(),
        subsampled: false,
    })
}

/// Trimmed auxiliary count `max{0, n_aux - 10 sqrt(n_aux log(HS/delta))}`,
/// with `log_hs_over_delta = ln(H S / delta)`.
pub fn n_trim(n_aux: usize, log_hs_over_delta: f64) -> f64 {
    let n = n_aux as f64;
    (n - 10.0 * (n * log_hs_over_delta).sqrt()).max(0.0)
}

/// Split/trim/subsample protocol.
///
/// The first ceil(N/2) trajectories (by index) form the main half, the rest
/// the auxiliary half. Per `(t, s)`, retains a uniform subsample of
/// `floor(min{n_trim, n_main})` of the main half's transitions at `(t, s)`,
/// jointly over actions. Each cell subsamples from its own `(seed, t, s)`
/// stream, so the result is independent of iteration order.
pub fn split_and_subsample(
    data: &TransitionDataset,
    horizon: usize,
    num_states: usize,
    delta: f64,
    seed: u64,
) -> Result<TransitionDataset> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidParam(format!("delta = {delta} not in (0, 1)")));
    }
    let n_main_traj = (data.n_trajectories + 1) / 2;
    let log_term = ((horizon as f64) * (num_states as f64) / delta).ln();

    // Bucket main-half record indices and auxiliary counts per (t, s).
    let mut main_cells: Vec<Vec<usize>> = vec![Vec::new(); horizon * num_states];
    let mut aux_counts: Vec<usize> = vec![0; horizon * num_states];
    for (idx, rec) in data.records.iter().enumerate() {
        if rec.h >= horizon || rec.s >= num_states {
            return Err(Error::RecordOutOfRange {
                record: idx,
                traj: rec.i,
                what: format!("(h={}, s={}) outside ({horizon}, {num_states})", rec.h, rec.s),
            });
        }
        let cell = rec.h * num_states + rec.s;
        if rec.i < n_main_traj {
            main_cells[cell].push(idx);
        } else {
            aux_counts[cell] += 1;
        }
    }

    let mut records = Vec::new();
    for t in 0..horizon {
        for s in 0..num_states {
            let cell = t * num_states + s;
            let main = &main_cells[cell];
            let trim = n_trim(aux_counts[cell], log_term);
            let keep = trim.min(main.len() as f64).floor() as usize;
            if keep == 0 {
                continue;
            }
            let mut cell_rng = rng::stream(seed, t as u64, s as u64, domain::SUBSAMPLE);
            for pick in rng::sample_without_replacement(&mut cell_rng, main.len(), keep) {
                records.push(data.records[main[pick]]);
            }
        }
    }
    records.sort_by_key(|r| (r.i, r.h));
    Ok(TransitionDataset {
        records,
        n_trajectories: data.n_trajectories,
        seed,
        source: data.source.clone(),
        subsampled: true,
    })
}

/// Count tensors `n3[t,s,a,s']` with derived sums `n2` and `n1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    pub n3: Array4<u64>,
    pub n2: Array3<u64>,
    pub n1: Array2<u64>,
}

impl TransitionCounts {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        TransitionCounts {
            n3: Array4::zeros((horizon, num_states, num_actions, num_states)),
            n2: Array3::zeros((horizon, num_states, num_actions)),
            n1: Array2::zeros((horizon, num_states)),
        }
    }

    /// Largest per-level total; the sample-count reference for auto-iota
    /// when solving straight from counts.
    pub fn max_level_total(&self) -> u64 {
        let (h, s, a) = self.n2.dim();
        (0..h)
            .map(|t| {
                let mut total = 0u64;
                for ss in 0..s {
                    for aa in 0..a {
                        total += self.n2[[t, ss, aa]];
                    }
                }
                total
            })
            .max()
            .unwrap_or(0)
    }
}

pub fn count_transitions(
    data: &TransitionDataset,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
) -> Result<TransitionCounts> {
    let mut counts = TransitionCounts::zeros(horizon, num_states, num_actions);
    for (idx, rec) in data.records.iter().enumerate() {
        if rec.h >= horizon || rec.s >= num_states || rec.a >= num_actions || rec.sp >= num_states {
            return Err(Error::RecordOutOfRange {
                record: idx,
                traj: rec.i,
                what: format!(
                    "(h={}, s={}, a={}, sp={}) outside ({horizon}, {num_states}, {num_actions}, {num_states})",
                    rec.h, rec.s, rec.a, rec.sp
                ),
            });
        }
        counts.n3[[rec.h, rec.s, rec.a, rec.sp]] += 1;
        counts.n2[[rec.h, rec.s, rec.a]] += 1;
        counts.n1[[rec.h, rec.s]] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use ndarray::Array2;

    #[test]
    fn deterministic_everything_gives_identical_trajectories() {
        let mdp = testutil::deterministic_chain(3, 4);
        let mu = Policy::Deterministic(Array2::zeros((3, 4)));
        let data = sample_trajectories(&mdp, &mu, 5, 7).unwrap();
        assert_eq!(data.records.len(), 15);
        for i in 0..5 {
            for t in 0..3 {
                let rec = data.records[i * 3 + t];
                assert_eq!((rec.i, rec.h, rec.s, rec.a), (i, t, t.min(3), 0));
                assert_eq!(rec.sp, (t + 1).min(3));
            }
        }
    }

    #[test]
    fn zero_trajectories_gives_empty_dataset() {
        let mdp = testutil::deterministic_chain(2, 2);
        let mu = Policy::Deterministic(Array2::zeros((2, 2)));
        let data = sample_trajectories(&mdp, &mu, 0, 1).unwrap();
        assert!(data.is_empty());
        let counts = count_transitions(&data, 2, 2, 2).unwrap();
        assert_eq!(counts.n3.sum(), 0);
    }

    #[test]
    fn sampling_is_reproducible_and_seed_sensitive() {
        let mdp = testutil::random_mdp(4, 3, 2, 3);
        let mu = testutil::random_stochastic_policy(&mdp, 4);
        let a = sample_trajectories(&mdp, &mu, 50, 99).unwrap();
        let b = sample_trajectories(&mdp, &mu, 50, 99).unwrap();
        let c = sample_trajectories(&mdp, &mu, 50, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn trim_formula_hand_cases() {
        // log(HS/delta) = 1 in all three.
        assert_eq!(n_trim(10_000, 1.0), 9_000.0);
        assert_eq!(n_trim(0, 1.0), 0.0);
        assert_eq!(n_trim(81, 1.0), 0.0);
    }

    #[test]
    fn retention_is_min_of_trim_and_main() {
        // Single (t, s) cell; 19_500 trajectories split 9_750 / 9_750.
        // With delta chosen so ln(HS/delta) = 1, n_trim(9_750) ~ 8_762.
        let h = 1;
        let s = 1;
        let delta = 1.0 / std::f64::consts::E;
        let n = 19_500;
        let records: Vec<TransitionRecord> = (0..n)
            .map(|i| TransitionRecord { i, h: 0, s: 0, a: i % 2, r: 0.5, sp: 0 })
            .collect();
        let data = TransitionDataset {
            records,
            n_trajectories: n,
            seed: 0,
            source: String::new(),
            subsampled: false,
        };
        let sub = split_and_subsample(&data, h, s, delta, 5).unwrap();
        let expect = n_trim(9_750, 1.0).min(9_750.0).floor() as usize;
        assert_eq!(sub.records.len(), expect);
        // Subsample comes from the main half only.
        assert!(sub.records.iter().all(|r| r.i < 9_750));
    }

    #[test]
    fn subsample_is_multiset_subset_of_main() {
        let mdp = testutil::random_mdp(3, 3, 2, 8);
        let mu = testutil::random_stochastic_policy(&mdp, 9);
        let data = sample_trajectories(&mdp, &mu, 400, 21).unwrap();
        let sub = split_and_subsample(&data, 3, 3, 0.1, 22).unwrap();
        let main_set: std::collections::HashSet<(usize, usize)> = data
            .records
            .iter()
            .filter(|r| r.i < 200)
            .map(|r| (r.i, r.h))
            .collect();
        assert!(sub.records.iter().all(|r| main_set.contains(&(r.i, r.h))));
        // No duplicates: a (trajectory, level) pair appears at most once.
        let mut seen = std::collections::HashSet::new();
        assert!(sub.records.iter().all(|r| seen.insert((r.i, r.h))));
        assert!(sub.subsampled);
    }

    #[test]
    fn counts_invariants_hold() {
        let mdp = testutil::random_mdp(3, 3, 2, 15);
        let mu = testutil::random_stochastic_policy(&mdp, 16);
        let data = sample_trajectories(&mdp, &mu, 120, 5).unwrap();
        let counts = count_transitions(&data, 3, 3, 2).unwrap();
        for t in 0..3 {
            let mut level_total = 0;
            for s in 0..3 {
                let mut n1 = 0;
                for a in 0..2 {
                    let mut n2 = 0;
                    for sp in 0..3 {
                        n2 += counts.n3[[t, s, a, sp]];
                    }
                    assert_eq!(counts.n2[[t, s, a]], n2);
                    n1 += n2;
                }
                assert_eq!(counts.n1[[t, s]], n1);
                level_total += n1;
            }
            assert_eq!(level_total, 120);
        }
    }

    #[test]
    fn out_of_range_record_is_named() {
        let data = TransitionDataset {
            records: vec![TransitionRecord { i: 3, h: 0, s: 9, a: 0, r: 0.0, sp: 0 }],
            n_trajectories: 4,
            seed: 0,
            source: String::new(),
            subsampled: false,
        };
        match count_transitions(&data, 2, 3, 2) {
            Err(Error::RecordOutOfRange { record: 0, traj: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}

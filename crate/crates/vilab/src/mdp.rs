//! Tabular finite-horizon time-inhomogeneous MDPs and their exact
//! dynamic-programming analysis.
//!
//! Levels are 0-based throughout: `t` in `0..H` indexes decision steps, and
//! value tables carry one extra terminal level `H` that is identically zero.
//! The transition kernel is `[H, S, A, S]`, rewards are `[H, S, A]`, and the
//! initial distribution is over states at level 0.

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel rows and the initial distribution must sum to 1 within this.
pub const DIST_SUM_TOL: f64 = 1e-12;
/// Bellman residuals of exact DP solutions stay within this.
pub const BELLMAN_TOL: f64 = 1e-10;
/// Occupancy flow conservation holds within this.
pub const FLOW_TOL: f64 = 1e-10;
/// Default tolerance classifying an action as optimal at `(t, s)`.
pub const DEFAULT_OPT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Transition kernel, `[H, S, A, S]`.
    pub kernel: Array4<f64>,
    /// Initial state distribution, `[S]`.
    pub p0: Array1<f64>,
    /// Known deterministic reward table, `[H, S, A]`.
    pub rewards: Array3<f64>,
}

/// Strict mode additionally requires rewards in `[0, 1]`. Relaxed mode admits
/// any finite reward, which the imaginary/thresholded MDPs need (their
/// rewards can be negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationMode {
    Strict,
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    KernelRowSum { t: usize, s: usize, a: usize, sum: f64 },
    KernelEntryNegative { t: usize, s: usize, a: usize, sp: usize, value: f64 },
    KernelEntryNonFinite { t: usize, s: usize, a: usize, sp: usize },
    InitialSum { sum: f64 },
    InitialEntryNegative { s: usize, value: f64 },
    RewardOutOfRange { t: usize, s: usize, a: usize, value: f64 },
    RewardNonFinite { t: usize, s: usize, a: usize },
    ShapeMismatch { what: String },
    EmptyDimension { what: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::KernelRowSum { t, s, a, sum } => {
                write!(f, "kernel row (t={t}, s={s}, a={a}) sums to {sum}")
            }
            Violation::KernelEntryNegative { t, s, a, sp, value } => {
                write!(f, "kernel entry (t={t}, s={s}, a={a}, s'={sp}) = {value} < 0")
            }
            Violation::KernelEntryNonFinite { t, s, a, sp } => {
                write!(f, "kernel entry (t={t}, s={s}, a={a}, s'={sp}) is not finite")
            }
            Violation::InitialSum { sum } => write!(f, "p0 sums to {sum}"),
            Violation::InitialEntryNegative { s, value } => {
                write!(f, "p0[{s}] = {value} < 0")
            }
            Violation::RewardOutOfRange { t, s, a, value } => {
                write!(f, "reward (t={t}, s={s}, a={a}) = {value} outside [0, 1]")
            }
            Violation::RewardNonFinite { t, s, a } => {
                write!(f, "reward (t={t}, s={s}, a={a}) is not finite")
            }
            Violation::ShapeMismatch { what } => write!(f, "shape mismatch: {what}"),
            Violation::EmptyDimension { what } => write!(f, "empty dimension: {what}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Collects every violated invariant; never fails.
pub fn validate_mdp(mdp: &TabularMdp, mode: ValidationMode) -> ValidationReport {
    let mut out = ValidationReport::default();
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    if h == 0 || s == 0 || a == 0 {
        out.violations.push(Violation::EmptyDimension {
            what: format!("H={h}, S={s}, A={a}"),
        });
        return out;
    }
    if mdp.kernel.dim() != (h, s, a, s) {
        out.violations.push(Violation::ShapeMismatch {
            what: format!("kernel has shape {:?}, expected ({h}, {s}, {a}, {s})", mdp.kernel.dim()),
        });
        return out;
    }
    if mdp.rewards.dim() != (h, s, a) {
        out.violations.push(Violation::ShapeMismatch {
            what: format!("rewards have shape {:?}, expected ({h}, {s}, {a})", mdp.rewards.dim()),
        });
        return out;
    }
    if mdp.p0.len() != s {
        out.violations.push(Violation::ShapeMismatch {
            what: format!("p0 has length {}, expected {s}", mdp.p0.len()),
        });
        return out;
    }

    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let mut sum = 0.0;
                for sp in 0..s {
                    let p = mdp.kernel[[t, ss, aa, sp]];
                    if !p.is_finite() {
                        out.violations
                            .push(Violation::KernelEntryNonFinite { t, s: ss, a: aa, sp });
                    } else if p < 0.0 {
                        out.violations.push(Violation::KernelEntryNegative {
                            t,
                            s: ss,
                            a: aa,
                            sp,
                            value: p,
                        });
                    }
                    sum += p;
                }
                if !sum.is_finite() || (sum - 1.0).abs() > DIST_SUM_TOL {
                    out.violations
                        .push(Violation::KernelRowSum { t, s: ss, a: aa, sum });
                }
                let r = mdp.rewards[[t, ss, aa]];
                if !r.is_finite() {
                    out.violations.push(Violation::RewardNonFinite { t, s: ss, a: aa });
                } else if mode == ValidationMode::Strict && !(0.0..=1.0).contains(&r) {
                    out.violations
                        .push(Violation::RewardOutOfRange { t, s: ss, a: aa, value: r });
                }
            }
        }
    }

    let mut p0_sum = 0.0;
    for ss in 0..s {
        let p = mdp.p0[ss];
        if p < 0.0 {
            out.violations
                .push(Violation::InitialEntryNegative { s: ss, value: p });
        }
        p0_sum += p;
    }
    if !p0_sum.is_finite() || (p0_sum - 1.0).abs() > DIST_SUM_TOL {
        out.violations.push(Violation::InitialSum { sum: p0_sum });
    }
    out
}

fn ensure_valid(mdp: &TabularMdp, mode: ValidationMode) -> Result<()> {
    let report = validate_mdp(mdp, mode);
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidMdp(report))
    }
}

/// Per-timestep action rule; covers behavior policies and greedy outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// `[H, S]` action indices.
    Deterministic(Array2<usize>),
    /// `[H, S, A]` action distributions.
    Stochastic(Array3<f64>),
}

impl Policy {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
        match self {
            Policy::Deterministic(actions) => {
                if actions.dim() != (h, s) {
                    return Err(Error::PolicyMismatch(format!(
                        "action table has shape {:?}, expected ({h}, {s})",
                        actions.dim()
                    )));
                }
                for t in 0..h {
                    for ss in 0..s {
                        if actions[[t, ss]] >= a {
                            return Err(Error::PolicyMismatch(format!(
                                "action {} at (t={t}, s={ss}) exceeds A={a}",
                                actions[[t, ss]]
                            )));
                        }
                    }
                }
            }
            Policy::Stochastic(probs) => {
                if probs.dim() != (h, s, a) {
                    return Err(Error::PolicyMismatch(format!(
                        "probability table has shape {:?}, expected ({h}, {s}, {a})",
                        probs.dim()
                    )));
                }
                for t in 0..h {
                    for ss in 0..s {
                        let mut sum = 0.0;
                        for aa in 0..a {
                            let p = probs[[t, ss, aa]];
                            if !(p >= 0.0) {
                                return Err(Error::PolicyMismatch(format!(
                                    "negative probability at (t={t}, s={ss}, a={aa})"
                                )));
                            }
                            sum += p;
                        }
                        if (sum - 1.0).abs() > DIST_SUM_TOL {
                            return Err(Error::PolicyMismatch(format!(
                                "row (t={t}, s={ss}) sums to {sum}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic(actions) => {
                if actions[[t, s]] == a {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Stochastic(probs) => probs[[t, s, a]],
        }
    }

    pub fn action(&self, t: usize, s: usize) -> Option<usize> {
        match self {
            Policy::Deterministic(actions) => Some(actions[[t, s]]),
            Policy::Stochastic(_) => None,
        }
    }
}

/// Value and Q tables; `v` has the terminal level `H` appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    /// `[H+1, S]`.
    pub v: Array2<f64>,
    /// `[H, S, A]`.
    pub q: Array3<f64>,
}

impl ValueTables {
    /// `p0`-weighted value at level 0.
    pub fn initial_value(&self, mdp: &TabularMdp) -> f64 {
        let mut acc = 0.0;
        for s in 0..mdp.num_states {
            acc += mdp.p0[s] * self.v[[0, s]];
        }
        acc
    }
}

/// State-action occupancy `d_t(s, a)`; the state marginal is the action sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    /// `[H, S, A]`.
    pub d: Array3<f64>,
}

impl OccupancyTable {
    pub fn marginal(&self, t: usize, s: usize) -> f64 {
        let a = self.d.dim().2;
        (0..a).map(|aa| self.d[[t, s, aa]]).sum()
    }
}

/// Backward induction for the optimal value and Q functions.
pub fn optimal_values(mdp: &TabularMdp) -> Result<ValueTables> {
    ensure_valid(mdp, ValidationMode::Relaxed)?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut v = Array2::<f64>::zeros((h + 1, s));
    let mut q = Array3::<f64>::zeros((h, s, a));
    for t in (0..h).rev() {
        for ss in 0..s {
            let mut best = f64::NEG_INFINITY;
            for aa in 0..a {
                let mut ev = 0.0;
                for sp in 0..s {
                    ev += mdp.kernel[[t, ss, aa, sp]] * v[[t + 1, sp]];
                }
                let qv = mdp.rewards[[t, ss, aa]] + ev;
                q[[t, ss, aa]] = qv;
                if qv > best {
                    best = qv;
                }
            }
            v[[t, ss]] = best;
        }
    }
    Ok(ValueTables { v, q })
}

/// Backward policy evaluation.
pub fn policy_values(mdp: &TabularMdp, pi: &Policy) -> Result<ValueTables> {
    ensure_valid(mdp, ValidationMode::Relaxed)?;
    pi.validate(mdp)?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut v = Array2::<f64>::zeros((h + 1, s));
    let mut q = Array3::<f64>::zeros((h, s, a));
    for t in (0..h).rev() {
        for ss in 0..s {
            for aa in 0..a {
                let mut ev = 0.0;
                for sp in 0..s {
                    ev += mdp.kernel[[t, ss, aa, sp]] * v[[t + 1, sp]];
                }
                q[[t, ss, aa]] = mdp.rewards[[t, ss, aa]] + ev;
            }
            let mut val = 0.0;
            match pi {
                Policy::Deterministic(actions) => val = q[[t, ss, actions[[t, ss]]]],
                Policy::Stochastic(probs) => {
                    for aa in 0..a {
                        val += probs[[t, ss, aa]] * q[[t, ss, aa]];
                    }
                }
            }
            v[[t, ss]] = val;
        }
    }
    Ok(ValueTables { v, q })
}

/// Forward occupancy recursion from `p0`.
pub fn occupancy(mdp: &TabularMdp, pi: &Policy) -> Result<OccupancyTable> {
    ensure_valid(mdp, ValidationMode::Relaxed)?;
    pi.validate(mdp)?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut d = Array3::<f64>::zeros((h, s, a));
    let mut state = Array1::<f64>::zeros(s);
    state.assign(&mdp.p0);
    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                d[[t, ss, aa]] = state[ss] * pi.prob(t, ss, aa);
            }
        }
        if t + 1 < h {
            let mut next = Array1::<f64>::zeros(s);
            for ss in 0..s {
                for aa in 0..a {
                    let mass = d[[t, ss, aa]];
                    if mass > 0.0 {
                        for sp in 0..s {
                            next[sp] += mass * mdp.kernel[[t, ss, aa, sp]];
                        }
                    }
                }
            }
            state = next;
        }
    }
    Ok(OccupancyTable { d })
}

/// Full gap table `V*_t(s) - Q*_t(s, a)` and the smallest gap exceeding `tol`.
///
/// Errors with [`Error::NoPositiveGap`] when every gap is within `tol` of
/// zero, since the instance then has nothing to identify.
pub fn gap_min(mdp: &TabularMdp, tol: f64) -> Result<(f64, Array3<f64>)> {
    let values = optimal_values(mdp)?;
    let (h, s, a) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut gaps = Array3::<f64>::zeros((h, s, a));
    let mut smallest = f64::INFINITY;
    for t in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                let gap = values.v[[t, ss]] - values.q[[t, ss, aa]];
                gaps[[t, ss, aa]] = gap;
                if gap > tol && gap < smallest {
                    smallest = gap;
                }
            }
        }
    }
    if smallest.is_finite() {
        Ok((smallest, gaps))
    } else {
        Err(Error::NoPositiveGap)
    }
}

/// `p0 · (V*_0 - V^pi_0)`.
pub fn policy_suboptimality(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let opt = optimal_values(mdp)?;
    let vals = policy_values(mdp, pi)?;
    Ok(opt.initial_value(mdp) - vals.initial_value(mdp))
}

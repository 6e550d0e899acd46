//! File formats: MDP and policy JSON, newline-delimited transition datasets
//! with a seeded header, solution dumps with the resolved configuration,
//! certificate reports, and the sweep CSV.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4};

use crate::dataset::{TransitionDataset, TransitionRecord};
use crate::error::{Error, Result};
use crate::experiments::SweepResult;
use crate::mdp::{Policy, TabularMdp};
use crate::solver::{PessimisticSolution, TieBreak};

#[derive(Debug, Serialize, Deserialize)]
struct MdpFile {
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "A")]
    a: usize,
    p0: Vec<f64>,
    kernel: Vec<Vec<Vec<Vec<f64>>>>,
    rewards: Vec<Vec<Vec<f64>>>,
}

fn a3_to_vec(x: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    let (d0, d1, d2) = x.dim();
    (0..d0)
        .map(|i| {
            (0..d1)
                .map(|j| (0..d2).map(|k| x[[i, j, k]]).collect())
                .collect()
        })
        .collect()
}

fn a4_to_vec(x: &Array4<f64>) -> Vec<Vec<Vec<Vec<f64>>>> {
    let (d0, d1, d2, d3) = x.dim();
    (0..d0)
        .map(|i| {
            (0..d1)
                .map(|j| {
                    (0..d2)
                        .map(|k| (0..d3).map(|l| x[[i, j, k, l]]).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn vec_to_a3(v: &[Vec<Vec<f64>>], dims: (usize, usize, usize), what: &str) -> Result<Array3<f64>> {
    let mut out = Array3::zeros(dims);
    if v.len() != dims.0 {
        return Err(Error::Parse(format!("{what}: outer length {}", v.len())));
    }
    for (i, vi) in v.iter().enumerate() {
        if vi.len() != dims.1 {
            return Err(Error::Parse(format!("{what}[{i}]: length {}", vi.len())));
        }
        for (j, vj) in vi.iter().enumerate() {
            if vj.len() != dims.2 {
                return Err(Error::Parse(format!("{what}[{i}][{j}]: length {}", vj.len())));
            }
            for (k, &x) in vj.iter().enumerate() {
                out[[i, j, k]] = x;
            }
        }
    }
    Ok(out)
}

pub fn mdp_to_json(mdp: &TabularMdp) -> Result<String> {
    let file = MdpFile {
        h: mdp.horizon,
        s: mdp.num_states,
        a: mdp.num_actions,
        p0: mdp.p0.to_vec(),
        kernel: a4_to_vec(&mdp.kernel),
        rewards: a3_to_vec(&mdp.rewards),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn mdp_from_json(text: &str) -> Result<TabularMdp> {
    let file: MdpFile = serde_json::from_str(text)?;
    let (h, s, a) = (file.h, file.s, file.a);
    if file.p0.len() != s {
        return Err(Error::Parse(format!("p0 length {} != S", file.p0.len())));
    }
    let mut kernel = Array4::zeros((h, s, a, s));
    if file.kernel.len() != h {
        return Err(Error::Parse("kernel outer length != H".into()));
    }
    for (t, kt) in file.kernel.iter().enumerate() {
        if kt.len() != s {
            return Err(Error::Parse(format!("kernel[{t}] length != S")));
        }
        for (ss, ks) in kt.iter().enumerate() {
            if ks.len() != a {
                return Err(Error::Parse(format!("kernel[{t}][{ss}] length != A")));
            }
            for (aa, ka) in ks.iter().enumerate() {
                if ka.len() != s {
                    return Err(Error::Parse(format!("kernel[{t}][{ss}][{aa}] length != S")));
                }
                for (sp, &p) in ka.iter().enumerate() {
                    kernel[[t, ss, aa, sp]] = p;
                }
            }
        }
    }
    let rewards = vec_to_a3(&file.rewards, (h, s, a), "rewards")?;
    Ok(TabularMdp {
        horizon: h,
        num_states: s,
        num_actions: a,
        kernel,
        p0: Array1::from_vec(file.p0),
        rewards,
    })
}

pub fn save_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    std::fs::write(path, mdp_to_json(mdp)?)?;
    Ok(())
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    mdp_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PolicyFile {
    Deterministic { actions: Vec<Vec<usize>> },
    Stochastic { probs: Vec<Vec<Vec<f64>>> },
}

pub fn policy_to_json(policy: &Policy) -> Result<String> {
    let file = match policy {
        Policy::Deterministic(actions) => {
            let (h, s) = actions.dim();
            PolicyFile::Deterministic {
                actions: (0..h)
                    .map(|t| (0..s).map(|ss| actions[[t, ss]]).collect())
                    .collect(),
            }
        }
        Policy::Stochastic(probs) => PolicyFile::Stochastic { probs: a3_to_vec(probs) },
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn policy_from_json(text: &str) -> Result<Policy> {
    let file: PolicyFile = serde_json::from_str(text)?;
    match file {
        PolicyFile::Deterministic { actions } => {
            let h = actions.len();
            let s = actions.first().map_or(0, Vec::len);
            let mut out = Array2::zeros((h, s));
            for (t, row) in actions.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::Parse(format!("actions[{t}] length {}", row.len())));
                }
                for (ss, &a) in row.iter().enumerate() {
                    out[[t, ss]] = a;
                }
            }
            Ok(Policy::Deterministic(out))
        }
        PolicyFile::Stochastic { probs } => {
            let h = probs.len();
            let s = probs.first().map_or(0, Vec::len);
            let a = probs
                .first()
                .and_then(|r| r.first())
                .map_or(0, Vec::len);
            Ok(Policy::Stochastic(vec_to_a3(&probs, (h, s, a), "probs")?))
        }
    }
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    std::fs::write(path, policy_to_json(policy)?)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    policy_from_json(&std::fs::read_to_string(path)?)
}

/// Hex digest identifying an instance; recorded in dataset headers.
pub fn instance_hash(mdp: &TabularMdp) -> Result<String> {
    let json = mdp_to_json(mdp)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(hex_prefix(&digest, 16))
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            out.truncate(chars);
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub seed: u64,
    pub n: usize,
    pub instance_hash: String,
}

/// NDJSON: a header line, then one `{"i","h","s","a","r","sp"}` per record.
pub fn save_dataset(path: &Path, data: &TransitionDataset, instance_hash: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        seed: data.seed,
        n: data.n_trajectories,
        instance_hash: instance_hash.to_string(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for rec in &data.records {
        writeln!(w, "{}", serde_json::to_string(rec)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(TransitionDataset, DatasetHeader)> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord = serde_json::from_str(&line)?;
        records.push(rec);
    }
    let data = TransitionDataset {
        records,
        n_trajectories: header.n,
        seed: header.seed,
        source: header.instance_hash.clone(),
        subsampled: false,
    };
    Ok((data, header))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub q_lower: Vec<Vec<Vec<f64>>>,
    pub v_lower: Vec<Vec<f64>>,
    pub bonus: Vec<Vec<Vec<f64>>>,
    pub n_prime: Vec<Vec<Vec<f64>>>,
    pub policy: serde_json::Value,
    pub config: ResolvedConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub c_b: f64,
    pub iota: f64,
    pub tie_break: TieBreak,
}

pub fn solution_to_json(sol: &PessimisticSolution) -> Result<String> {
    let (hp1, s) = sol.v_lower.dim();
    let file = SolutionFile {
        q_lower: a3_to_vec(&sol.q_lower),
        v_lower: (0..hp1)
            .map(|t| (0..s).map(|ss| sol.v_lower[[t, ss]]).collect())
            .collect(),
        bonus: a3_to_vec(&sol.bonus),
        n_prime: a3_to_vec(&sol.n_prime),
        policy: serde_json::from_str(&policy_to_json(&sol.policy)?)?,
        config: ResolvedConfig {
            c_b: sol.c_b,
            iota: sol.iota,
            tie_break: sol.tie_break,
        },
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_solution(path: &Path, sol: &PessimisticSolution) -> Result<()> {
    std::fs::write(path, solution_to_json(sol)?)?;
    Ok(())
}

pub const SWEEP_CSV_HEADER: &str =
    "point,n,eps,trials,mean_subopt,median_subopt,success_rate,wilson_lo,wilson_hi,pessimism_rate";

pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in &result.points {
        let eps = p.eps.map_or(String::new(), |e| format!("{e}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.point,
            p.n,
            eps,
            p.trials,
            p.mean_subopt,
            p.median_subopt,
            p.success_rate,
            p.wilson_lo,
            p.wilson_hi,
            p.pessimism_rate
        ));
    }
    out
}

pub fn save_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    std::fs::write(path, sweep_to_csv(result))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_trajectories;
    use crate::instances::{parse_instance_spec, uniform_behavior};
    use crate::testutil;

    #[test]
    fn mdp_json_round_trip_and_field_names() {
        let mdp = testutil::random_mdp(2, 3, 2, 8);
        let json = mdp_to_json(&mdp).unwrap();
        for key in ["\"H\":", "\"S\":", "\"A\":", "\"p0\":", "\"kernel\":", "\"rewards\":"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back = mdp_from_json(&json).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn policy_json_round_trip_both_kinds() {
        let det = Policy::Deterministic(ndarray::Array2::from_elem((2, 3), 1));
        let json = policy_to_json(&det).unwrap();
        assert!(json.contains("\"kind\":\"deterministic\""));
        assert_eq!(policy_from_json(&json).unwrap(), det);

        let mdp = testutil::random_mdp(2, 3, 2, 9);
        let sto = uniform_behavior(&mdp);
        let json = policy_to_json(&sto).unwrap();
        assert!(json.contains("\"kind\":\"stochastic\""));
        assert_eq!(policy_from_json(&json).unwrap(), sto);
    }

    #[test]
    fn dataset_round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ndjson");
        let bundle = parse_instance_spec("random(3,2,3,0.15,2)").unwrap();
        let data = sample_trajectories(&bundle.mdp, &bundle.mu, 25, 77).unwrap();
        let hash = instance_hash(&bundle.mdp).unwrap();
        save_dataset(&path, &data, &hash).unwrap();
        let (back, header) = load_dataset(&path).unwrap();
        assert_eq!(header.seed, 77);
        assert_eq!(header.n, 25);
        assert_eq!(header.instance_hash, hash);
        assert_eq!(back.records, data.records);
        let first = std::fs::read_to_string(&path).unwrap();
        let record_line = first.lines().nth(1).unwrap();
        for key in ["\"i\":", "\"h\":", "\"s\":", "\"a\":", "\"r\":", "\"sp\":"] {
            assert!(record_line.contains(key));
        }
    }

    #[test]
    fn instance_hash_is_stable_and_content_sensitive() {
        let a = testutil::random_mdp(2, 2, 2, 1);
        let mut b = a.clone();
        assert_eq!(instance_hash(&a).unwrap(), instance_hash(&b).unwrap());
        b.rewards[[0, 0, 0]] += 1e-9;
        assert_ne!(instance_hash(&a).unwrap(), instance_hash(&b).unwrap());
        assert_eq!(instance_hash(&a).unwrap().len(), 16);
    }
}

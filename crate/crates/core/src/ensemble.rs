//! Deep ensembles of heteroscedastic regressors and their uncertainty
//! decomposition.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::net::{train_member, HeteroNet, NetConfig, TrainSchedule};
use crate::objective::ObjectiveKind;
use crate::seed;

pub const DEFAULT_MEMBERS: usize = 5;
const LAYER_NORM_EPS: f64 = 1e-6;
const SNAPSHOT_MAGIC: &str = "caal-ensemble";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub net: NetConfig,
    pub schedule: TrainSchedule,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: DEFAULT_MEMBERS,
            net: NetConfig::default(),
            schedule: TrainSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<HeteroNet>,
    pub member_seeds: Vec<u64>,
    pub objective: ObjectiveKind,
}

/// Per-input ensemble prediction with its uncertainty split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub mean: f64,
    /// Variance of the member means.
    pub epi: f64,
    /// Mean of the member variances.
    pub ale: f64,
    pub per_member: Vec<(f64, f64)>,
}

impl PredictiveSummary {
    /// Aggregate per-member `(mu, sigma^2)` pairs.
    pub fn from_members(per_member: Vec<(f64, f64)>) -> Self {
        let first = per_member[0];
        if per_member.iter().all(|&p| p == first) {
            return PredictiveSummary {
                mean: first.0,
                epi: 0.0,
                ale: first.1,
                per_member,
            };
        }
        let m = per_member.len() as f64;
        let mean = per_member.iter().map(|p| p.0).sum::<f64>() / m;
        // two-pass form of E[mu^2] - E[mu]^2
        let epi = per_member.iter().map(|p| (p.0 - mean) * (p.0 - mean)).sum::<f64>() / m;
        let ale = per_member.iter().map(|p| p.1).sum::<f64>() / m;
        PredictiveSummary {
            mean,
            epi,
            ale,
            per_member,
        }
    }

    pub fn total(&self) -> f64 {
        self.epi + self.ale
    }
}

/// Layer normalization without affine parameters.
pub fn layer_norm(h: &[f64]) -> Vec<f64> {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    h.iter().map(|v| (v - mean) * scale).collect()
}

/// Seeds for `m` members derived from a base seed.
pub fn member_seeds(base_seed: u64, m: usize) -> Vec<u64> {
    (0..m as u64).map(|i| seed::derive(base_seed, &[seed::tag::MEMBER, i])).collect()
}

/// Train an ensemble with member seeds derived from `base_seed`.
pub fn train_ensemble(
    train: &Samples,
    val: &Samples,
    config: &EnsembleConfig,
    objective: &ObjectiveKind,
    base_seed: u64,
) -> Result<Ensemble> {
    let seeds = member_seeds(base_seed, config.members);
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::Config("derived member seeds collide".into()));
    }
    train_ensemble_with_seeds(train, val, config, objective, &seeds)
}

/// Train one member per seed on identical data. The seed drives both
/// initialization and mini-batch shuffling. Seeds are not required to be
/// distinct here.
pub fn train_ensemble_with_seeds(
    train: &Samples,
    val: &Samples,
    config: &EnsembleConfig,
    objective: &ObjectiveKind,
    seeds: &[u64],
) -> Result<Ensemble> {
    if seeds.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("ensemble training needs non-empty labelled and validation sets".into()));
    }
    let members = seeds
        .iter()
        .map(|&s| {
            let net = HeteroNet::new(&config.net, objective.head_param(), s)?;
            let schedule = TrainSchedule {
                seed: seed::derive(s, &[1]),
                ..config.schedule
            };
            train_member(net, train, val, objective, &schedule).map(|(n, _)| n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        members,
        member_seeds: seeds.to_vec(),
        objective: *objective,
    })
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictiveSummary> {
        let per_member = self.members.iter().map(|n| n.predict(x)).collect::<Result<Vec<_>>>()?;
        Ok(PredictiveSummary::from_members(per_member))
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<PredictiveSummary>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Member average of the layer-normalized trunk outputs.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.members[0].hidden_dim()];
        for net in &self.members {
            for (acc, v) in z.iter_mut().zip(layer_norm(&net.hidden(x)?)) {
                *acc += v;
            }
        }
        let m = self.members.len() as f64;
        z.iter_mut().for_each(|v| *v /= m);
        Ok(z)
    }

    /// Write a versioned text snapshot: header lines with the objective,
    /// architecture and member count, then one line of parameters per member.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot(&text)
    }

    pub fn to_snapshot(&self) -> String {
        let cfg = self.members[0].config();
        let mut out = String::new();
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(out, "objective {}", serde_json::to_string(&self.objective).unwrap_or_default());
        let _ = writeln!(
            out,
            "arch {} {} {} {}",
            cfg.input_dim, cfg.hidden, cfg.trunk_layers, cfg.head_layers
        );
        let _ = writeln!(out, "members {}", self.members.len());
        for (net, s) in self.members.iter().zip(&self.member_seeds) {
            let params = net.params_flat();
            let _ = writeln!(out, "member {s} {}", params.len());
            let line: Vec<String> = params.iter().map(|p| format!("{p:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("ensemble snapshot: {m}"));
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(&format!("missing {what}")));
        let fields = |line: &str, key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(&format!("expected `{key}` line")));
            }
            Ok(it.map(str::to_owned).collect())
        };
        let magic = fields(next("header")?, SNAPSHOT_MAGIC)?;
        if magic != [SNAPSHOT_VERSION.to_string()] {
            return Err(bad("unsupported version"));
        }
        let obj_line = next("objective")?;
        let objective: ObjectiveKind = serde_json::from_str(obj_line.trim_start_matches("objective").trim())
            .map_err(|e| bad(&e.to_string()))?;
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let arch = fields(next("arch")?, "arch")?;
        if arch.len() != 4 {
            return Err(bad("arch needs four fields"));
        }
        let cfg = NetConfig {
            input_dim: parse_usize(&arch[0])?,
            hidden: parse_usize(&arch[1])?,
            trunk_layers: parse_usize(&arch[2])?,
            head_layers: parse_usize(&arch[3])?,
        };
        let m = parse_usize(fields(next("members")?, "members")?.first().ok_or_else(|| bad("member count"))?)?;
        let mut members = Vec::with_capacity(m);
        let mut seeds = Vec::with_capacity(m);
        for _ in 0..m {
            let head = fields(next("member")?, "member")?;
            if head.len() != 2 {
                return Err(bad("member line needs seed and count"));
            }
            seeds.push(head[0].parse::<u64>().map_err(|_| bad("bad seed"))?);
            let params = next("parameters")?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad parameter")))
                .collect::<Result<Vec<_>>>()?;
            if params.len() != parse_usize(&head[1])? {
                return Err(bad("parameter count mismatch"));
            }
            let mut net = HeteroNet::zeros(&cfg, objective.head_param())?;
            net.set_params_flat(&params)?;
            net.validate()?;
            members.push(net);
        }
        if members.is_empty() {
            return Err(bad("no members"));
        }
        Ok(Ensemble {
            members,
            member_seeds: seeds,
            objective,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::HeadParam;

    #[test]
    fn summary_examples() {
        let s = PredictiveSummary::from_members(vec![(1.0, 1.0), (1.0, 1.0)]);
        assert_eq!((s.mean, s.epi, s.ale), (1.0, 0.0, 1.0));
        let s = PredictiveSummary::from_members(vec![(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!((s.mean, s.epi, s.ale), (1.0, 1.0, 2.0));
        assert_eq!(s.total(), 3.0);
        let s = PredictiveSummary::from_members(vec![(0.37, 0.2)]);
        assert_eq!(s.epi, 0.0);
    }

    #[test]
    fn layer_norm_examples() {
        let z = layer_norm(&[1.0, -1.0]);
        assert!((z[0] - 1.0).abs() < 1e-6 && (z[1] + 1.0).abs() < 1e-6);
        assert_eq!(layer_norm(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    fn cfg() -> NetConfig {
        NetConfig {
            input_dim: 2,
            hidden: 6,
            trunk_layers: 2,
            head_layers: 0,
        }
    }

    #[test]
    fn opposite_embeddings_cancel() {
        // two members whose trunk outputs are negatives of each other
        let a = HeteroNet::new(&cfg(), HeadParam::MeanVariance, 1).unwrap();
        let mut b = a.clone();
        let last = b.trunk.last_mut().unwrap();
        last.activation = crate::net::Activation::Identity;
        let mut a2 = a.clone();
        a2.trunk.last_mut().unwrap().activation = crate::net::Activation::Identity;
        last.weights.iter_mut().for_each(|w| *w = -*w);
        let e = Ensemble {
            members: vec![a2, b],
            member_seeds: vec![1, 2],
            objective: ObjectiveKind::default(),
        };
        let z = e.embed(&[0.3, -0.9]).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12), "{z:?}");
    }

    #[test]
    fn snapshot_round_trip() {
        let e = Ensemble {
            members: (0..3).map(|s| HeteroNet::new(&cfg(), HeadParam::Natural, s).unwrap()).collect(),
            member_seeds: vec![10, 11, 12],
            objective: ObjectiveKind::Natural,
        };
        let text = e.to_snapshot();
        assert!(text.starts_with("caal-ensemble 1\n"));
        let back = Ensemble::from_snapshot(&text).unwrap();
        assert_eq!(back, e);
        assert!(Ensemble::from_snapshot(&text.replace("members 3", "members 4")).is_err());
        assert!(Ensemble::from_snapshot("caal-ensemble 2\n").is_err());
    }

    #[test]
    fn seeds_are_distinct() {
        let s = member_seeds(42, 10);
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 10);
    }
}

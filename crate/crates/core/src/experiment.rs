//! Pool-based active-learning driver.
//!
//! Each round retrains the ensemble from scratch on the labelled set,
//! evaluates it on the fixed test set, scores the unlabelled pool, queries
//! the oracle for the selected units (samples, or whole groups in
//! group-level mode) and moves them into the labelled set.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcquisitionScore, Candidates, PoolStats, StrategyKind};
use crate::data::{self, CsvSchema, Dataset, Samples, SyntheticKind, SyntheticSpec};
use crate::ensemble::{train_ensemble, Ensemble, EnsembleConfig, PredictiveSummary};
use crate::error::{Error, Result};
use crate::metrics;
use crate::objective::ObjectiveKind;
use crate::seed::{self, tag};

/// Where samples come from and how they are split, in units of groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        generator: SyntheticKind,
    },
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        schema: CsvSchema,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub source: DataSource,
    /// Seed for generation, splitting and oracle noise.
    #[serde(default)]
    pub seed: u64,
    /// Samples per group for synthetic data.
    #[serde(default = "one")]
    pub group_size: usize,
    /// Groups in the initial labelled set.
    pub initial: usize,
    pub val: usize,
    pub test: usize,
    /// Groups in the unlabelled pool; for CSV data `None` means all the rest.
    #[serde(default)]
    pub pool: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Number of acquisition rounds T.
    pub rounds: usize,
    /// Units (samples or groups) queried per round.
    pub batch: usize,
    #[serde(default)]
    pub group_level: bool,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub dump_scores: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: EnsembleConfig,
    #[serde(default)]
    pub objective: ObjectiveKind,
    pub strategy: StrategyKind,
    #[serde(rename = "loop")]
    pub loop_: LoopConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("caal-output")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.strategy.validate()?;
        self.model.schedule.validate()?;
        self.model.net.validate()?;
        let d = &self.data;
        if self.model.members == 0 {
            return Err(Error::Config("model.members must be >= 1".into()));
        }
        if self.loop_.batch == 0 {
            return Err(Error::Config("loop.batch must be >= 1".into()));
        }
        if d.initial == 0 || d.val == 0 || d.test == 0 || d.group_size == 0 {
            return Err(Error::Config("data.initial, data.val, data.test and data.group_size must be >= 1".into()));
        }
        if let DataSource::Synthetic { generator } = d.source {
            if d.pool.is_none() {
                return Err(Error::Config("synthetic data needs an explicit data.pool size".into()));
            }
            if self.model.net.input_dim != generator.input_dim() {
                return Err(Error::Config(format!(
                    "model.net.input_dim is {} but generator `{generator:?}` has {} inputs",
                    self.model.net.input_dim,
                    generator.input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Label source.
#[derive(Debug, Clone)]
pub enum Oracle {
    /// y = f(x) + sigma(x) * g with g a standard normal drawn from a stream
    /// keyed by (seed, sample id).
    Synthetic { kind: SyntheticKind, seed: u64 },
    /// Same noise model with arbitrary closed-form f and sigma.
    Function {
        f: fn(&[f64]) -> f64,
        sigma: fn(&[f64]) -> f64,
        seed: u64,
    },
    /// Pre-realized labels indexed by sample id.
    Lookup { labels: Vec<f64> },
}

impl Oracle {
    pub fn query(&self, sample_id: usize, x: &[f64]) -> Result<f64> {
        match self {
            Oracle::Synthetic { kind, seed } => Ok(kind.f(x) + kind.sigma(x) * standard_normal(*seed, sample_id)),
            Oracle::Function { f, sigma, seed } => {
                let s = sigma(x);
                if !(s >= 0.0) {
                    return Err(Error::Domain(format!("oracle noise scale must be >= 0, got {s}")));
                }
                Ok(f(x) + s * standard_normal(*seed, sample_id))
            }
            Oracle::Lookup { labels } => labels
                .get(sample_id)
                .copied()
                .ok_or_else(|| Error::Data(format!("no stored label for sample {sample_id}"))),
        }
    }
}

fn standard_normal(seed: u64, sample_id: usize) -> f64 {
    StandardNormal.sample(&mut seed::derived_rng(seed, &[tag::ORACLE, sample_id as u64]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub n_labelled: usize,
    /// Units acquired to reach this round's labelled set (0 for round 0).
    pub budget_used: usize,
    /// Mean epistemic uncertainty of the samples acquired for this round,
    /// as scored by the previous round's model (NaN for round 0).
    pub mean_epi_selected: f64,
    pub mean_ale_selected: f64,
    pub test_r2: f64,
    pub test_rmse: f64,
}

/// Scores of every pool sample in one acquisition step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDump {
    /// Round whose labelled set this acquisition produced.
    pub round: usize,
    pub rows: Vec<ScoreRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub candidate_id: usize,
    pub group_id: usize,
    pub score: AcquisitionScore,
    pub selected: bool,
}

pub const SCORE_HEADER: &str = "candidate_id,group_id,epi,ale,epi_norm,ale_norm,score,selected";

impl ScoreDump {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCORE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = r.score;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.candidate_id, r.group_id, s.epi, s.ale, s.epi_norm, s.ale_norm, s.score, r.selected as u8
            );
        }
        out
    }

    pub fn file_name(&self) -> String {
        format!("scores_round_{:03}.csv", self.round)
    }
}

/// A dataset split into the experiment's partitions with the oracle that
/// labels it. Sample ids index into `dataset`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub oracle: Oracle,
    pub initial: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub pool: Vec<usize>,
}

/// Build the dataset, oracle and group-level split described by `data`.
pub fn prepare(data: &DataConfig) -> Result<Prepared> {
    let (dataset, oracle, n_groups) = match &data.source {
        DataSource::Synthetic { generator } => {
            let groups = data.initial + data.val + data.test + data.pool.unwrap_or(0);
            let spec = SyntheticSpec {
                kind: *generator,
                n: groups * data.group_size,
                seed: data.seed,
                group_size: data.group_size,
            };
            let (ds, kind) = data::generate_synthetic(&spec)?;
            (ds, Oracle::Synthetic { kind, seed: data.seed }, groups)
        }
        DataSource::Csv { path, schema } => {
            let ds = data::load_csv(path, schema)?;
            let labels = ds.targets.clone();
            let n = ds.num_groups();
            (ds, Oracle::Lookup { labels }, n)
        }
    };
    let needed = data.initial + data.val + data.test + data.pool.unwrap_or(0);
    if needed > n_groups {
        return Err(Error::Config(format!("split needs {needed} groups but the data has {n_groups}")));
    }
    let mut order: Vec<usize> = (0..n_groups).collect();
    order.shuffle(&mut seed::derived_rng(data.seed, &[tag::SPLIT]));
    let pool_groups = data.pool.unwrap_or(n_groups - data.initial - data.val - data.test);
    let members = dataset.group_members();
    let take = |count: usize, order: &mut std::slice::Iter<usize>| {
        let mut gs: Vec<usize> = order.by_ref().take(count).copied().collect();
        gs.sort_unstable();
        gs.iter().flat_map(|&g| members[g].iter().copied()).collect::<Vec<_>>()
    };
    let mut it = order.iter();
    let initial = take(data.initial, &mut it);
    let val = take(data.val, &mut it);
    let test = take(data.test, &mut it);
    let pool = take(pool_groups, &mut it);
    Ok(Prepared {
        dataset,
        oracle,
        initial,
        val,
        test,
        pool,
    })
}

/// Per-column z-score fitted on one set of rows.
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f64]]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub score_dumps: Vec<ScoreDump>,
    pub final_ensemble: Ensemble,
    /// Labelled plus pool samples at the start.
    pub total_trainable: usize,
}

impl ExperimentOutput {
    pub fn curve(&self) -> Result<metrics::LearningCurve> {
        metrics::LearningCurve::new(self.records.clone(), self.total_trainable)
    }
}

/// Everything the loop needs about the currently trained model.
struct RoundModel {
    ensemble: Ensemble,
    x_norm: Standardizer,
    y_mean: f64,
    y_scale: f64,
}

impl RoundModel {
    /// Summary in the (transformed) target space of the data.
    fn summary(&self, x: &[f64]) -> Result<PredictiveSummary> {
        let s = self.ensemble.predict(&self.x_norm.apply(x))?;
        let scale2 = self.y_scale * self.y_scale;
        Ok(PredictiveSummary::from_members(
            s.per_member
                .iter()
                .map(|&(mu, s2)| (mu * self.y_scale + self.y_mean, s2 * scale2))
                .collect(),
        ))
    }

    fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.ensemble.embed(&self.x_norm.apply(x))
    }
}

struct Labels<'a> {
    prepared: &'a Prepared,
    y: Vec<Option<f64>>,
}

impl Labels<'_> {
    fn label(&mut self, id: usize) -> Result<f64> {
        if let Some(y) = self.y[id] {
            return Ok(y);
        }
        let y = self.prepared.oracle.query(id, &self.prepared.dataset.features[id])?;
        self.y[id] = Some(y);
        Ok(y)
    }

    fn samples(&mut self, ids: &[usize], x_norm: Option<&Standardizer>) -> Result<Samples> {
        let mut s = Samples::default();
        for &id in ids {
            let y = self.label(id)?;
            let x = &self.prepared.dataset.features[id];
            s.push(x_norm.map_or_else(|| x.clone(), |n| n.apply(x)), y);
        }
        Ok(s)
    }
}

fn train_round(cfg: &ExperimentConfig, labels: &mut Labels, labelled: &[usize], round: usize) -> Result<RoundModel> {
    let prepared = labels.prepared;
    let rows: Vec<&[f64]> = labelled.iter().map(|&i| prepared.dataset.features[i].as_slice()).collect();
    let x_norm = Standardizer::fit(&rows);
    let mut train = labels.samples(labelled, Some(&x_norm))?;
    let mut val = labels.samples(&prepared.val, Some(&x_norm))?;
    let y_fit = Standardizer::fit(&train.y.iter().map(std::slice::from_ref).collect::<Vec<_>>());
    let (y_mean, y_scale) = (y_fit.mean[0], y_fit.scale[0]);
    for y in train.y.iter_mut().chain(val.y.iter_mut()) {
        *y = (*y - y_mean) / y_scale;
    }
    let round_seed = seed::derive(cfg.loop_.base_seed, &[round as u64]);
    let ensemble = train_ensemble(&train, &val, &cfg.model, &cfg.objective, round_seed)?;
    Ok(RoundModel {
        ensemble,
        x_norm,
        y_mean,
        y_scale,
    })
}

fn evaluate(model: &RoundModel, labels: &mut Labels) -> Result<(f64, f64)> {
    let prepared = labels.prepared;
    let transform = prepared.dataset.target_transform;
    let mut truth = Vec::with_capacity(prepared.test.len());
    let mut pred = Vec::with_capacity(prepared.test.len());
    for &id in &prepared.test {
        truth.push(transform.inverse(labels.label(id)?));
        pred.push(transform.inverse(model.summary(&prepared.dataset.features[id])?.mean));
    }
    Ok((metrics::r_squared(&truth, &pred)?, metrics::rmse(&truth, &pred)?))
}

/// Run the full loop in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let prepared = prepare(&cfg.data)?;
    run_prepared(cfg, &prepared)
}

/// Run the loop on an already prepared split.
pub fn run_prepared(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let ds = &prepared.dataset;
    if ds.dim() != cfg.model.net.input_dim {
        return Err(Error::Config(format!(
            "model.net.input_dim is {} but the data has {} features",
            cfg.model.net.input_dim,
            ds.dim()
        )));
    }
    if prepared.test.len() < 2 {
        return Err(Error::Config("test split needs at least two samples".into()));
    }
    let mut labels = Labels {
        prepared,
        y: vec![None; ds.len()],
    };
    let group_level = cfg.loop_.group_level;
    let unit_of = |id: usize| if group_level { ds.group_id[id] } else { id };

    let mut labelled: Vec<usize> = prepared.initial.clone();
    let mut pool: Vec<usize> = prepared.pool.clone();
    let total_trainable = labelled.len() + pool.len();
    let mut records = Vec::new();
    let mut dumps = Vec::new();
    let mut pending: Option<(usize, f64, f64)> = None;

    let mut round = 0;
    let final_model = loop {
        let model = train_round(cfg, &mut labels, &labelled, round)?;
        let (r2, rmse) = evaluate(&model, &mut labels)?;
        let (budget_used, epi_sel, ale_sel) = pending.take().unwrap_or((0, f64::NAN, f64::NAN));
        records.push(RoundRecord {
            round,
            n_labelled: labelled.len(),
            budget_used,
            mean_epi_selected: epi_sel,
            mean_ale_selected: ale_sel,
            test_r2: r2,
            test_rmse: rmse,
        });
        if round >= cfg.loop_.rounds || pool.is_empty() {
            break model;
        }

        // score the pool
        let summaries = pool
            .iter()
            .map(|&id| model.summary(&ds.features[id]))
            .collect::<Result<Vec<_>>>()?;
        let needs_embed = !cfg.strategy.is_score_based();
        let embeddings = if needs_embed {
            pool.iter().map(|&id| model.embed(&ds.features[id])).collect::<Result<Vec<_>>>()?
        } else {
            vec![Vec::new(); pool.len()]
        };
        let stats = PoolStats::new(summaries, embeddings)?;
        let scores = acquisition::score(
            &cfg.strategy,
            &stats,
            seed::derive(cfg.loop_.base_seed, &[tag::RANDOM_SCORES, round as u64]),
        );

        // candidate units in ascending unit-id order
        let mut units: Vec<usize> = pool.iter().map(|&id| unit_of(id)).collect();
        units.dedup();
        let local: std::collections::HashMap<usize, usize> = units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let unit_idx: Vec<usize> = pool.iter().map(|&id| local[&unit_of(id)]).collect();
        let cands = Candidates {
            scores: acquisition::aggregate_group_scores(
                &scores.iter().map(|s| s.score).collect::<Vec<_>>(),
                &unit_idx,
                units.len(),
            )?,
            embeddings: if needs_embed {
                acquisition::aggregate_group_vectors(&stats.embeddings, &unit_idx, units.len())?
            } else {
                vec![Vec::new(); units.len()]
            },
            epi: acquisition::aggregate_group_scores(
                &scores.iter().map(|s| s.epi).collect::<Vec<_>>(),
                &unit_idx,
                units.len(),
            )?,
        };
        let labelled_embeddings = if matches!(cfg.strategy, StrategyKind::Coreset) {
            let emb = labelled.iter().map(|&id| model.embed(&ds.features[id])).collect::<Result<Vec<_>>>()?;
            let mut lunits: Vec<usize> = labelled.iter().map(|&id| unit_of(id)).collect();
            lunits.sort_unstable();
            lunits.dedup();
            let lmap: std::collections::HashMap<usize, usize> =
                lunits.iter().enumerate().map(|(i, &u)| (u, i)).collect();
            let lidx: Vec<usize> = labelled.iter().map(|&id| lmap[&unit_of(id)]).collect();
            acquisition::aggregate_group_vectors(&emb, &lidx, lunits.len())?
        } else {
            Vec::new()
        };
        let b = cfg.loop_.batch.min(units.len());
        let picked = acquisition::select(
            &cfg.strategy,
            &cands,
            &labelled_embeddings,
            b,
            seed::derive(cfg.loop_.base_seed, &[tag::KMEANS, round as u64]),
        )?;
        let mut chosen = vec![false; units.len()];
        for &u in &picked {
            chosen[u] = true;
        }

        let selected_rows: Vec<usize> = (0..pool.len()).filter(|&i| chosen[unit_idx[i]]).collect();
        let n_sel = selected_rows.len() as f64;
        let epi_sel = selected_rows.iter().map(|&i| scores[i].epi).sum::<f64>() / n_sel;
        let ale_sel = selected_rows.iter().map(|&i| scores[i].ale).sum::<f64>() / n_sel;
        pending = Some((picked.len(), epi_sel, ale_sel));

        if cfg.loop_.dump_scores {
            dumps.push(ScoreDump {
                round: round + 1,
                rows: pool
                    .iter()
                    .enumerate()
                    .map(|(i, &id)| ScoreRow {
                        candidate_id: id,
                        group_id: ds.group_id[id],
                        score: scores[i],
                        selected: chosen[unit_idx[i]],
                    })
                    .collect(),
            });
        }

        // query and move into the labelled set
        let mut remaining = Vec::with_capacity(pool.len());
        for (i, &id) in pool.iter().enumerate() {
            if chosen[unit_idx[i]] {
                labels.label(id)?;
                labelled.push(id);
            } else {
                remaining.push(id);
            }
        }
        pool = remaining;
        round += 1;
    };

    Ok(ExperimentOutput {
        records,
        score_dumps: dumps,
        final_ensemble: final_model.ensemble,
        total_trainable,
    })
}

pub const CURVE_FILE: &str = "learning_curve.csv";
pub const ENSEMBLE_FILE: &str = "ensemble.txt";

/// Write the learning curve, score dumps and final ensemble snapshot into
/// `dir` (created if missing).
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    metrics::emit_curve(&out.records, &dir.join(CURVE_FILE))?;
    for d in &out.score_dumps {
        let p = dir.join(d.file_name());
        std::fs::write(&p, d.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    out.final_ensemble.save(&dir.join(ENSEMBLE_FILE))
}

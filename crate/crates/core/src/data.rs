//! Datasets: synthetic heteroscedastic generators, CSV ingestion and target
//! transforms.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aerosol::{csv_error, mixing_state_index, ParticlePopulation};
use crate::error::{Error, Result};
use crate::seed;

/// Clipping margin for the bounded logit transform.
pub const LOGIT_EPS: f64 = 1e-6;

/// Default number of samples per scenario group.
pub const DEFAULT_GROUP_SIZE: usize = 25;

/// Feature rows and targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.x.push(x);
        self.y.push(y);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Identity,
    /// Clip to [eps, 1 - eps] then logit.
    LogitBounded,
    /// Natural log of a positive target.
    LogPositive,
}

impl TransformKind {
    pub fn forward(self, y: f64) -> Result<f64> {
        match self {
            TransformKind::Identity => Ok(y),
            TransformKind::LogitBounded => {
                if !(0.0..=1.0).contains(&y) {
                    return Err(Error::Domain(format!("logit transform needs a target in [0, 1], got {y}")));
                }
                let c = y.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                Ok((c / (1.0 - c)).ln())
            }
            TransformKind::LogPositive => {
                if !(y > 0.0) {
                    return Err(Error::Domain(format!("log transform needs a positive target, got {y}")));
                }
                Ok(y.ln())
            }
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            TransformKind::Identity => z,
            TransformKind::LogitBounded => crate::objective::sigmoid(z),
            TransformKind::LogPositive => z.exp(),
        }
    }
}

pub fn transform_target(kind: TransformKind, y: f64) -> Result<f64> {
    kind.forward(y)
}

pub fn inverse_transform(kind: TransformKind, z: f64) -> f64 {
    kind.inverse(z)
}

/// Tabular dataset. Targets are stored in transformed space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub group_id: Vec<usize>,
    pub feature_names: Vec<String>,
    pub target_transform: TransformKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_id.iter().max().map_or(0, |g| g + 1)
    }

    /// Sample indices of each group, in group order.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_groups()];
        for (i, &g) in self.group_id.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.targets.len();
        if self.features.len() != n || self.group_id.len() != n {
            return Err(Error::Data("features, targets and group ids differ in length".into()));
        }
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != self.dim() {
                return Err(Error::Data(format!("row {i} has {} features, expected {}", row.len(), self.dim())));
            }
            if row.iter().any(|v| !v.is_finite()) || !self.targets[i].is_finite() {
                return Err(Error::Data(format!("row {i} contains a non-finite value")));
            }
        }
        check_contiguous_groups(&self.group_id)
    }
}

fn check_contiguous_groups(ids: &[usize]) -> Result<()> {
    let mut seen = vec![false; ids.iter().max().map_or(0, |g| g + 1)];
    let mut prev = None;
    for (i, &g) in ids.iter().enumerate() {
        if prev != Some(g) {
            if seen[g] {
                return Err(Error::Data(format!("group {g} is not contiguous (reappears at row {i})")));
            }
            seen[g] = true;
            prev = Some(g);
        }
    }
    if let Some(g) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("group id {g} has no samples")));
    }
    Ok(())
}

fn blocks(n: usize, group_size: usize) -> Vec<usize> {
    (0..n).map(|i| i / group_size).collect()
}

/// Desk-scale benchmark families with closed-form noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// x ~ U[-3, 3], f = sin 2x + 0.3x, high-noise band on [0.5, 1.5].
    #[serde(rename = "hetero_sine_1d")]
    HeteroSine1D,
    /// x ~ U[-2, 2]^2, high-noise annulus 1 <= |x| <= 1.5.
    #[serde(rename = "noise_band_2d")]
    NoiseBand2D,
    /// Logit of the mixing-state index of a parametrized particle population.
    MixingStateToy,
}

const TOY_PARTICLES: usize = 6;
const TOY_SPECIES: usize = 3;

impl SyntheticKind {
    pub fn input_dim(self) -> usize {
        match self {
            SyntheticKind::HeteroSine1D => 1,
            SyntheticKind::NoiseBand2D => 2,
            SyntheticKind::MixingStateToy => 3,
        }
    }

    /// Noise-free response, in the dataset's (transformed) target space.
    pub fn f(self, x: &[f64]) -> f64 {
        match self {
            SyntheticKind::HeteroSine1D => (2.0 * x[0]).sin() + 0.3 * x[0],
            SyntheticKind::NoiseBand2D => x[0].sin() * x[1].cos() + 0.2 * (x[0] + x[1]),
            SyntheticKind::MixingStateToy => {
                let chi = mixing_state_index(&toy_population(x)).chi;
                // chi lies in [0, 1] by construction
                TransformKind::LogitBounded.forward(chi).unwrap_or_default()
            }
        }
    }

    /// Noise standard deviation sigma_data(x).
    pub fn sigma(self, x: &[f64]) -> f64 {
        match self {
            SyntheticKind::HeteroSine1D => 0.05 + if (0.5..=1.5).contains(&x[0]) { 0.45 } else { 0.0 },
            SyntheticKind::NoiseBand2D => {
                let r = x[0].hypot(x[1]);
                0.05 + if (1.0..=1.5).contains(&r) { 0.45 } else { 0.0 }
            }
            SyntheticKind::MixingStateToy => 0.1 + 0.4 * x[2],
        }
    }

    /// Upper bound on |f(x)| over the input domain.
    pub fn f_bound(self) -> f64 {
        match self {
            SyntheticKind::HeteroSine1D => 1.9,
            SyntheticKind::NoiseBand2D => 1.8,
            SyntheticKind::MixingStateToy => ((1.0 - LOGIT_EPS) / LOGIT_EPS).ln(),
        }
    }

    pub fn target_transform(self) -> TransformKind {
        match self {
            SyntheticKind::MixingStateToy => TransformKind::LogitBounded,
            _ => TransformKind::Identity,
        }
    }

    pub fn sample_x<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        match self {
            SyntheticKind::HeteroSine1D => vec![rng.random_range(-3.0..3.0)],
            SyntheticKind::NoiseBand2D => vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            SyntheticKind::MixingStateToy => (0..3).map(|_| rng.random_range(0.0..1.0)).collect(),
        }
    }

    fn feature_names(self) -> Vec<String> {
        match self {
            SyntheticKind::MixingStateToy => vec!["internal_fraction".into(), "bulk_share".into(), "noise_level".into()],
            _ => (0..self.input_dim()).map(|i| format!("x{i}")).collect(),
        }
    }
}

/// Population used by the mixing-state toy: particle i starts as pure
/// species i mod A and is blended toward a shared bulk composition by an
/// amount set by x[0]; x[1] tilts the bulk composition.
pub fn toy_population(x: &[f64]) -> ParticlePopulation {
    let blend = 0.05 + 0.9 * x[0].clamp(0.0, 1.0);
    let share = x[1].clamp(0.0, 1.0);
    let bulk = [0.2 + share, 0.2 + (1.0 - share), 0.6];
    let total: f64 = bulk.iter().sum();
    let masses = (0..TOY_PARTICLES)
        .map(|i| {
            (0..TOY_SPECIES)
                .map(|a| {
                    let pure = if a == i % TOY_SPECIES { 1.0 } else { 0.0 };
                    (1.0 - blend) * pure + blend * bulk[a] / total
                })
                .collect()
        })
        .collect();
    ParticlePopulation::new(masses).expect("toy population rows are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
}

fn default_group_size() -> usize {
    1
}

/// Generate `n` inputs with their noise-free responses. Noise is added by
/// the oracle at query time; `kind.sigma` gives its level.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticKind)> {
    if spec.n == 0 || spec.group_size == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs n >= 1 and group_size >= 1, got n={} group_size={}",
            spec.n, spec.group_size
        )));
    }
    let mut rng = seed::rng(spec.seed);
    let features: Vec<Vec<f64>> = (0..spec.n).map(|_| spec.kind.sample_x(&mut rng)).collect();
    let targets = features.iter().map(|x| spec.kind.f(x)).collect();
    let ds = Dataset {
        features,
        targets,
        group_id: blocks(spec.n, spec.group_size),
        feature_names: spec.kind.feature_names(),
        target_transform: spec.kind.target_transform(),
    };
    Ok((ds, spec.kind))
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub transform: TransformKind,
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}, column `{column}`: cannot parse `{cell}`")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}, column `{column}`: non-finite value `{cell}`")));
    }
    Ok(v)
}

/// Load a dataset from a headed CSV file. Group labels (if a group column is
/// named) are mapped to ids in order of first appearance; rows of one group
/// must be contiguous.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let feature_cols = schema.features.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;
    let target_col = column(&schema.target)?;
    let group_col = schema.group.as_deref().map(column).transpose()?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut group_id = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let get = |c: usize| rec.get(c).ok_or_else(|| Error::Data(format!("line {line}: missing cell {c}")));
        let row = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| parse_cell(get(c)?, line, name))
            .collect::<Result<Vec<f64>>>()?;
        let raw = parse_cell(get(target_col)?, line, &schema.target)?;
        let z = schema
            .transform
            .forward(raw)
            .map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let g = match group_col {
            Some(c) => {
                let next = labels.len();
                *labels.entry(get(c)?.trim().to_owned()).or_insert(next)
            }
            None => i,
        };
        features.push(row);
        targets.push(z);
        group_id.push(g);
    }
    if targets.is_empty() {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }
    let ds = Dataset {
        features,
        targets,
        group_id,
        feature_names: schema.features.clone(),
        target_transform: schema.transform,
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset in the layout `load_csv` reads, with the target mapped
/// back to its original space and a `group` column.
pub fn save_csv(ds: &Dataset, path: &Path, target_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = ds.feature_names.clone();
    header.push(target_name.to_owned());
    header.push("group".to_owned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features[i].iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", ds.target_transform.inverse(ds.targets[i])));
        rec.push(ds.group_id[i].to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn logit_transform() {
        assert_eq!(transform_target(TransformKind::LogitBounded, 0.5).unwrap(), 0.0);
        let z = transform_target(TransformKind::LogitBounded, 1.0).unwrap();
        assert!((z - 999_999f64.ln()).abs() < 1e-9);
        assert!((z - 13.8155).abs() < 1e-4);
        for &y in &[1e-6, 0.01, 0.3, 0.99, 1.0 - 1e-6] {
            let back = inverse_transform(TransformKind::LogitBounded, transform_target(TransformKind::LogitBounded, y).unwrap());
            assert!((back - y).abs() < 1e-9);
        }
        assert!(transform_target(TransformKind::LogitBounded, 1.5).is_err());
    }

    #[test]
    fn log_transform_domain() {
        assert!(matches!(transform_target(TransformKind::LogPositive, 0.0), Err(Error::Domain(_))));
        let z = transform_target(TransformKind::LogPositive, 7.0).unwrap();
        assert!((inverse_transform(TransformKind::LogPositive, z) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn hetero_sine_noise_band() {
        let k = SyntheticKind::HeteroSine1D;
        assert_eq!(k.sigma(&[1.0]), 0.5);
        assert_eq!(k.sigma(&[0.0]), 0.05);
        assert_eq!(k.sigma(&[1.5]), 0.5);
    }

    #[test]
    fn generation_is_reproducible_and_grouped() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::NoiseBand2D,
            n: 60,
            seed: 3,
            group_size: 25,
        };
        let (a, _) = generate_synthetic(&spec).unwrap();
        let (b, _) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_groups(), 3);
        assert_eq!(a.group_members()[2].len(), 10);
        a.validate().unwrap();
        assert!(generate_synthetic(&SyntheticSpec { n: 0, ..spec }).is_err());
    }

    #[test]
    fn mixing_toy_spans_mixing_states() {
        let lo = mixing_state_index(&toy_population(&[0.0, 0.5, 0.0])).chi;
        let hi = mixing_state_index(&toy_population(&[1.0, 0.5, 0.0])).chi;
        assert!(lo < 0.5 && hi > 0.9, "lo={lo} hi={hi}");
        assert_eq!(SyntheticKind::MixingStateToy.target_transform(), TransformKind::LogitBounded);
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn schema(transform: TransformKind) -> CsvSchema {
        CsvSchema {
            features: vec!["a".into(), "b".into()],
            target: "chi".into(),
            group: None,
            transform,
        }
    }

    #[test]
    fn csv_load_basic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,chi\n1,2,0.5\n3,4,0.25\n5,6,1.0\n");
        let ds = load_csv(&p, &schema(TransformKind::LogitBounded)).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.targets[0], 0.0);
        assert!((ds.targets[2] - 13.8155).abs() < 1e-4);
        assert_eq!(ds.group_id, vec![0, 1, 2]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,y\n1,2,0.5\n");
        match load_csv(&p, &schema(TransformKind::Identity)) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "chi"),
            other => panic!("{other:?}"),
        }
        let p = write(&dir, "nan.csv", "a,b,chi\n1,2,0.5\n1,NaN,0.5\n");
        let err = load_csv(&p, &schema(TransformKind::Identity)).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let p = write(&dir, "inf.csv", "a,b,chi\n1,inf,0.5\n");
        assert!(load_csv(&p, &schema(TransformKind::Identity)).is_err());
        let p = write(&dir, "bad.csv", "a,b,chi\n1,x,0.5\n");
        assert!(matches!(load_csv(&p, &schema(TransformKind::Identity)), Err(Error::Data(_))));
        let p = write(&dir, "empty.csv", "a,b,chi\n");
        assert!(load_csv(&p, &schema(TransformKind::Identity)).is_err());
        let missing = dir.path().join("nope.csv");
        assert!(matches!(load_csv(&missing, &schema(TransformKind::Identity)), Err(Error::Io { .. })));
    }

    #[test]
    fn csv_groups_must_be_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let s = CsvSchema { group: Some("g".into()), ..schema(TransformKind::Identity) };
        let p = write(&dir, "g.csv", "g,a,b,chi\nx,1,2,3\nx,1,2,3\ny,1,2,3\n");
        assert_eq!(load_csv(&p, &s).unwrap().group_id, vec![0, 0, 1]);
        let p = write(&dir, "g2.csv", "g,a,b,chi\nx,1,2,3\ny,1,2,3\nx,1,2,3\n");
        assert!(load_csv(&p, &s).is_err());
    }

    #[test]
    fn csv_save_load_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,chi\n1,2,0.5\n3,4,0.25\n5,6,1.0\n");
        let s = schema(TransformKind::LogitBounded);
        let first = load_csv(&p, &s).unwrap();
        let q = dir.path().join("again.csv");
        save_csv(&first, &q, "chi").unwrap();
        let s2 = CsvSchema { group: Some("group".into()), ..s };
        let second = load_csv(&q, &s2).unwrap();
        assert_eq!(first.features, second.features);
        assert_eq!(first.group_id, second.group_id);
        for (a, b) in first.targets.iter().zip(&second.targets) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

//! Acquisition scoring and batch selection.
//!
//! Score-based strategies rank candidates by a scalar computed from the
//! ensemble's uncertainty split; geometry-based strategies (Coreset, LCMD,
//! BADGE) pick batches directly in embedding space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::PredictiveSummary;
use crate::error::{Error, Result};
use crate::seed;

/// Denominator stabilizer for min-max normalization.
pub const MINMAX_EPS: f64 = 1e-6;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Confidence,
    Ale,
    Alm,
    Qbc,
    Bald,
    /// Epistemic score gated by aleatoric confidence, `beta` >= 0.
    Caal {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Coreset,
    Lcmd,
    Badge,
}

impl StrategyKind {
    pub const ALL_NAMES: [&'static str; 10] = [
        "random", "confidence", "ale", "alm", "qbc", "bald", "caal", "coreset", "lcmd", "badge",
    ];

    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategyKind::Caal { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(Error::Config(format!("CAAL beta must be finite and >= 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Confidence => "confidence",
            StrategyKind::Ale => "ale",
            StrategyKind::Alm => "alm",
            StrategyKind::Qbc => "qbc",
            StrategyKind::Bald => "bald",
            StrategyKind::Caal { .. } => "caal",
            StrategyKind::Coreset => "coreset",
            StrategyKind::Lcmd => "lcmd",
            StrategyKind::Badge => "badge",
        }
    }

    /// Parse a bare strategy name; CAAL gets the default gate exponent.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "random" => StrategyKind::Random,
            "confidence" => StrategyKind::Confidence,
            "ale" => StrategyKind::Ale,
            "alm" => StrategyKind::Alm,
            "qbc" => StrategyKind::Qbc,
            "bald" => StrategyKind::Bald,
            "caal" => StrategyKind::Caal { beta: default_beta() },
            "coreset" => StrategyKind::Coreset,
            "lcmd" => StrategyKind::Lcmd,
            "badge" => StrategyKind::Badge,
            other => return Err(Error::Config(format!("unknown strategy `{other}`"))),
        })
    }

    /// True when selection is by the top-B of the score list.
    pub fn is_score_based(&self) -> bool {
        !matches!(self, StrategyKind::Coreset | StrategyKind::Lcmd | StrategyKind::Badge)
    }
}

/// Uncertainty summaries and embeddings of the current pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolStats {
    pub summaries: Vec<PredictiveSummary>,
    pub embeddings: Vec<Vec<f64>>,
    pub epi_norm: Vec<f64>,
    pub ale_norm: Vec<f64>,
}

impl PoolStats {
    pub fn new(summaries: Vec<PredictiveSummary>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::Budget { requested: 1, available: 0 });
        }
        if summaries.len() != embeddings.len() {
            return Err(Error::Data("pool summaries and embeddings differ in length".into()));
        }
        let epi: Vec<f64> = summaries.iter().map(|s| s.epi).collect();
        let ale: Vec<f64> = summaries.iter().map(|s| s.ale).collect();
        Ok(PoolStats {
            epi_norm: minmax_normalize(&epi),
            ale_norm: minmax_normalize(&ale),
            summaries,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionScore {
    pub score: f64,
    pub epi: f64,
    pub ale: f64,
    pub epi_norm: f64,
    pub ale_norm: f64,
}

/// `(v - min) / (max - min + eps)` over the list.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let denom = hi - lo + MINMAX_EPS;
    values.iter().map(|v| (v - lo) / denom).collect()
}

/// CAAL score: normalized epistemic uncertainty times the confidence gate.
#[inline]
pub fn caal_score(epi_norm: f64, ale_norm: f64, beta: f64) -> f64 {
    epi_norm * (1.0 - ale_norm).powf(beta)
}

/// Ensemble BALD approximation: half log total variance minus the mean half
/// log member variance.
pub fn bald_score(s: &PredictiveSummary) -> f64 {
    if s.epi == 0.0 && s.per_member.iter().all(|p| p.1 == s.ale) {
        return 0.0;
    }
    let m = s.per_member.len() as f64;
    0.5 * s.total().ln() - s.per_member.iter().map(|p| p.1.ln()).sum::<f64>() / (2.0 * m)
}

/// One score per pool candidate. `seed` drives the Random strategy only.
/// Geometry-based strategies get a zero score; they select via [`select`].
pub fn score(strategy: &StrategyKind, stats: &PoolStats, seed: u64) -> Vec<AcquisitionScore> {
    let mut rng = seed::rng(seed);
    stats
        .summaries
        .iter()
        .zip(stats.epi_norm.iter().zip(&stats.ale_norm))
        .map(|(s, (&en, &an))| {
            let score = match *strategy {
                StrategyKind::Random => rng.random::<f64>(),
                StrategyKind::Confidence => 1.0 - an,
                StrategyKind::Ale => s.ale,
                StrategyKind::Alm => s.epi + s.ale,
                StrategyKind::Qbc => s.epi,
                StrategyKind::Bald => bald_score(s),
                StrategyKind::Caal { beta } => caal_score(en, an, beta),
                StrategyKind::Coreset | StrategyKind::Lcmd | StrategyKind::Badge => 0.0,
            };
            AcquisitionScore {
                score,
                epi: s.epi,
                ale: s.ale,
                epi_norm: en,
                ale_norm: an,
            }
        })
        .collect()
}

fn check_budget(b: usize, n: usize) -> Result<()> {
    if b > n || n == 0 {
        return Err(Error::Budget { requested: b, available: n });
    }
    Ok(())
}

/// Indices of the `b` largest scores, best first; ties go to the lower
/// index.
pub fn select_top_b(scores: &[f64], b: usize) -> Result<Vec<usize>> {
    check_budget(b, scores.len())?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx.truncate(b);
    Ok(idx)
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-first traversal seeded with the labelled embeddings.
/// With nothing labelled the first pick is index 0.
pub fn kcenter_greedy(pool: &[Vec<f64>], labelled: &[Vec<f64>], b: usize) -> Result<Vec<usize>> {
    check_budget(b, pool.len())?;
    let mut nearest: Vec<f64> = pool
        .iter()
        .map(|p| labelled.iter().map(|l| dist2(p, l)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; pool.len()];
    let mut picks = Vec::with_capacity(b);
    for _ in 0..b {
        let mut best: Option<usize> = None;
        for i in (0..pool.len()).filter(|&i| !taken[i]) {
            if best.is_none_or(|j| nearest[i] > nearest[j]) {
                best = Some(i);
            }
        }
        let pick = best.expect("budget checked");
        taken[pick] = true;
        picks.push(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(&pool[i], &pool[pick]));
        }
    }
    Ok(picks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn kmeans_pp_seeds<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining point coincides with a chosen center
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(&points[i], &points[next]));
        }
    }
    chosen
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.iter().enumerate() {
                let d = dist2(p, cen);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

/// Give every empty cluster the point farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = dist2(p, &centroids[a]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            sizes[assignments[i]] -= 1;
            assignments[i] = c;
            sizes[c] = 1;
            centroids[c] = points[i].clone();
        }
    }
}

fn means(points: &[Vec<f64>], assignments: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, c), prev)| {
            if c == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

/// Lloyd's k-means with k-means++ seeding.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    check_budget(k, points.len())?;
    if k == 0 {
        return Err(Error::Budget { requested: 0, available: points.len() });
    }
    let mut rng = seed::rng(seed);
    let mut centroids: Vec<Vec<f64>> = kmeans_pp_seeds(points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignments;
    let mut iterations = 0;
    loop {
        assignments = assign(points, &centroids);
        repair_empty(points, &mut centroids, &mut assignments);
        let updated = means(points, &assignments, &centroids);
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        iterations += 1;
        if shift < KMEANS_TOL || iterations >= KMEANS_MAX_ITER {
            break;
        }
    }
    assignments = assign(points, &centroids);
    repair_empty(points, &mut centroids, &mut assignments);
    Ok(KMeans {
        assignments,
        centroids,
        iterations,
    })
}

/// For each cluster, the member closest to its centroid (lowest index on
/// ties).
pub fn cluster_representatives(points: &[Vec<f64>], km: &KMeans) -> Vec<usize> {
    km.centroids
        .iter()
        .enumerate()
        .filter_map(|(c, cen)| {
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in points.iter().enumerate().filter(|(i, _)| km.assignments[*i] == c) {
                let d = dist2(p, cen);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

/// k-means in embedding space, one representative per cluster.
pub fn select_lcmd(embeddings: &[Vec<f64>], b: usize, seed: u64) -> Result<Vec<usize>> {
    let km = kmeans(embeddings, b, seed)?;
    Ok(cluster_representatives(embeddings, &km))
}

/// k-means over embeddings scaled by the square root of epistemic
/// uncertainty, one representative per cluster.
pub fn badge_select(embeddings: &[Vec<f64>], epi: &[f64], b: usize, seed: u64) -> Result<Vec<usize>> {
    if embeddings.len() != epi.len() {
        return Err(Error::Data("embeddings and uncertainties differ in length".into()));
    }
    let g: Vec<Vec<f64>> = embeddings
        .iter()
        .zip(epi)
        .map(|(z, &u)| {
            let s = u.max(0.0).sqrt();
            z.iter().map(|v| v * s).collect()
        })
        .collect();
    select_lcmd(&g, b, seed)
}

/// Mean score per group. `group_of[i]` is the group of sample `i`, with
/// groups numbered `0..n_groups`.
pub fn aggregate_group_scores(sample_scores: &[f64], group_of: &[usize], n_groups: usize) -> Result<Vec<f64>> {
    aggregate_group_vectors(
        &sample_scores.iter().map(|&s| vec![s]).collect::<Vec<_>>(),
        group_of,
        n_groups,
    )
    .map(|v| v.into_iter().map(|g| g[0]).collect())
}

/// Mean vector per group (used for group embeddings).
pub fn aggregate_group_vectors(values: &[Vec<f64>], group_of: &[usize], n_groups: usize) -> Result<Vec<Vec<f64>>> {
    if values.len() != group_of.len() {
        return Err(Error::Data("every sample needs exactly one group".into()));
    }
    let dim = values.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(group_of) {
        if g >= n_groups {
            return Err(Error::Data(format!("group id {g} out of range")));
        }
        counts[g] += 1;
        for (s, x) in sums[g].iter_mut().zip(v) {
            *s += x;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("group {g} has no samples")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect())
}

/// Selection units (samples or whole groups) ready for batch selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub scores: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    pub epi: Vec<f64>,
}

/// Choose `b` candidates under `strategy`. `labelled` holds the embeddings of
/// already-labelled units (used by Coreset).
pub fn select(strategy: &StrategyKind, cands: &Candidates, labelled: &[Vec<f64>], b: usize, seed: u64) -> Result<Vec<usize>> {
    match strategy {
        StrategyKind::Coreset => kcenter_greedy(&cands.embeddings, labelled, b),
        StrategyKind::Lcmd => select_lcmd(&cands.embeddings, b, seed),
        StrategyKind::Badge => badge_select(&cands.embeddings, &cands.epi, b, seed),
        _ => select_top_b(&cands.scores, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn minmax_examples() {
        let n = minmax_normalize(&[2.0, 4.0, 6.0]);
        assert_eq!(n, vec![0.0, 2.0 / (4.0 + 1e-6), 4.0 / (4.0 + 1e-6)]);
        assert_eq!(minmax_normalize(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
        let n = minmax_normalize(&[0.0, 1e-7]);
        assert!((n[1] - 1e-7 / (1e-7 + 1e-6)).abs() < 1e-15);
        assert!((n[1] - 0.0909).abs() < 1e-4);
    }

    #[test]
    fn caal_and_bald_examples() {
        assert!((caal_score(0.8, 0.25, 1.0) - 0.6).abs() < 1e-15);
        assert_eq!(caal_score(0.8, 0.25, 0.0), 0.8);
        let s = PredictiveSummary::from_members(vec![(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(bald_score(&s), 0.0);
        let s = PredictiveSummary::from_members(vec![(0.0, 1.0), (2.0, 1.0)]);
        assert!((bald_score(&s) - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((bald_score(&s) - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn top_b_examples() {
        assert_eq!(select_top_b(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(select_top_b(&[0.3; 4], 2).unwrap(), vec![0, 1]);
        let mut all = select_top_b(&[0.2, 0.1, 0.7], 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(select_top_b(&[0.1], 2), Err(Error::Budget { requested: 2, available: 1 })));
    }

    #[test]
    fn kcenter_examples() {
        let pool = pts(&[0.0, 10.0, 5.0]);
        assert_eq!(kcenter_greedy(&pool, &pts(&[0.0]), 1).unwrap(), vec![1]);
        assert_eq!(kcenter_greedy(&pool, &pts(&[0.0]), 2).unwrap(), vec![1, 2]);
        assert_eq!(kcenter_greedy(&pts(&[4.0, 9.0]), &[], 1).unwrap(), vec![0]);
        assert!(kcenter_greedy(&[], &[], 1).is_err());
        // duplicates never produce a repeated pick
        assert_eq!(kcenter_greedy(&pts(&[1.0, 1.0, 1.0]), &pts(&[1.0]), 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_examples() {
        let p = pts(&[0.0, 0.1, 10.0, 10.1]);
        let mut reps = select_lcmd(&p, 2, 7).unwrap();
        reps.sort();
        assert!(reps[0] <= 1 && reps[1] >= 2, "{reps:?}");

        let p = pts(&[3.0, -1.0, 8.0]);
        let km = kmeans(&p, 3, 1).unwrap();
        let mut reps = cluster_representatives(&p, &km);
        reps.sort();
        assert_eq!(reps, vec![0, 1, 2]);
        for (c, cen) in km.centroids.iter().enumerate() {
            let members: Vec<usize> = (0..3).filter(|&i| km.assignments[i] == c).collect();
            assert_eq!(members.len(), 1);
            assert_eq!(cen, &p[members[0]]);
        }

        let dup = pts(&[2.0, 2.0, 2.0]);
        assert_eq!(select_lcmd(&dup, 1, 3).unwrap(), vec![0]);
        assert!(matches!(kmeans(&dup, 4, 0), Err(Error::Budget { .. })));
    }

    #[test]
    fn degenerate_clusters_still_yield_distinct_picks() {
        let dup = pts(&[2.0, 2.0, 2.0, 2.0]);
        let mut reps = select_lcmd(&dup, 3, 5).unwrap();
        reps.sort();
        assert_eq!(reps, vec![0, 1, 2]);
    }

    #[test]
    fn badge_with_zero_uncertainty_is_index_ordered() {
        let z = vec![vec![0.3, -0.2], vec![1.0, 0.5], vec![-0.7, 0.1], vec![0.2, 0.2]];
        let mut picks = badge_select(&z, &[0.0; 4], 2, 9).unwrap();
        picks.sort();
        assert_eq!(picks, vec![0, 1]);
    }

    #[test]
    fn group_aggregation() {
        let g = aggregate_group_scores(&[0.2, 0.4, 0.9, 0.1], &[0, 0, 1, 1], 2).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        assert_eq!(select_top_b(&g, 1).unwrap(), vec![1]);
        let swapped = aggregate_group_scores(&[0.4, 0.2, 0.1, 0.9], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(g, swapped);
        assert!(aggregate_group_scores(&[0.1], &[0], 2).is_err());
        let single = aggregate_group_scores(&[0.5, 0.1], &[0, 1], 2).unwrap();
        assert_eq!(single, vec![0.5, 0.1]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in StrategyKind::ALL_NAMES {
            assert_eq!(StrategyKind::from_name(name).unwrap().name(), name);
        }
        assert!(StrategyKind::from_name("batchbald").is_err());
        assert!(StrategyKind::Caal { beta: -1.0 }.validate().is_err());
        let s: StrategyKind = serde_json::from_str(r#"{"kind":"caal","beta":5}"#).unwrap();
        assert_eq!(s, StrategyKind::Caal { beta: 5.0 });
    }

    #[test]
    fn random_scores_are_seeded() {
        let sums: Vec<PredictiveSummary> = (0..5).map(|i| PredictiveSummary::from_members(vec![(i as f64, 1.0)])).collect();
        let stats = PoolStats::new(sums, vec![vec![0.0]; 5]).unwrap();
        let a = score(&StrategyKind::Random, &stats, 3);
        let b = score(&StrategyKind::Random, &stats, 3);
        let c = score(&StrategyKind::Random, &stats, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|s| (0.0..1.0).contains(&s.score)));
    }
}

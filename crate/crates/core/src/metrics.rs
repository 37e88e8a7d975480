//! Regression metrics, learning curves and labelling-efficiency accounting.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::RoundRecord;

pub const CURVE_HEADER: &str = "round,n_labelled,r2,rmse,mean_epi_selected,mean_ale_selected";

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(Error::Data(format!(
            "metrics need equal-length inputs with at least two points, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(())
}

/// Coefficient of determination, 1 - SS_res / SS_tot.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Data("R^2 is undefined for a constant target".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let mse = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// Budget fraction at which a curve first reaches the reference score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyMatch {
    pub fraction: f64,
    pub labeling_saved: f64,
}

/// First budget whose R^2 is at least `reference`; `None` when never
/// reached.
pub fn data_to_match(budgets: &[f64], r2: &[f64], reference: f64) -> Option<EfficiencyMatch> {
    budgets
        .iter()
        .zip(r2)
        .find(|(_, &r)| r >= reference)
        .map(|(&fraction, _)| EfficiencyMatch {
            fraction,
            labeling_saved: 1.0 - fraction,
        })
}

/// Round records with the budget expressed as the labelled fraction of all
/// trainable samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<RoundRecord>,
    pub total_trainable: usize,
}

impl LearningCurve {
    pub fn new(records: Vec<RoundRecord>, total_trainable: usize) -> Result<Self> {
        if total_trainable == 0 {
            return Err(Error::Data("learning curve needs a non-zero sample total".into()));
        }
        if records.windows(2).any(|w| w[1].n_labelled <= w[0].n_labelled) {
            return Err(Error::Data("learning-curve budget must strictly increase".into()));
        }
        Ok(LearningCurve {
            records,
            total_trainable,
        })
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.n_labelled as f64 / self.total_trainable as f64)
            .collect()
    }

    pub fn r2(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_r2).collect()
    }

    pub fn data_to_match(&self, reference_r2: f64) -> Option<EfficiencyMatch> {
        data_to_match(&self.budgets(), &self.r2(), reference_r2)
    }

    pub fn best_r2(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_r2).reduce(f64::max)
    }

    pub fn best_rmse(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_rmse).reduce(f64::min)
    }
}

fn opt(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Learning curve as CSV text, rows in round order.
pub fn curve_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            r.n_labelled,
            r.test_r2,
            r.test_rmse,
            opt(r.mean_epi_selected),
            opt(r.mean_ale_selected)
        ));
    }
    out
}

pub fn emit_curve(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(curve_csv(records).as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let y = [0.0, 1.0, 2.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(r_squared(&y, &[1.0; 3]).unwrap(), 0.0);
        assert!((rmse(&y, &[0.0, 1.0, 1.0]).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r_squared(&y, &[0.0, 1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(r_squared(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn first_crossing() {
        let m = data_to_match(&[0.2, 0.5, 1.0], &[0.5, 0.7, 0.8], 0.6966).unwrap();
        assert_eq!(m.fraction, 0.5);
        assert_eq!(m.labeling_saved, 0.5);
        assert!(data_to_match(&[0.2, 0.5], &[0.5, 0.6], 0.6966).is_none());
        let m = data_to_match(&[0.1, 0.5], &[0.4, 0.9], 0.4).unwrap();
        assert_eq!(m.fraction, 0.1);
        assert!((m.labeling_saved - 0.9).abs() < 1e-15);
    }

    fn rec(round: usize, n: usize) -> RoundRecord {
        RoundRecord {
            round,
            n_labelled: n,
            budget_used: if round == 0 { 0 } else { 1 },
            mean_epi_selected: if round == 0 { f64::NAN } else { 0.25 },
            mean_ale_selected: if round == 0 { f64::NAN } else { 0.5 },
            test_r2: 0.1 * round as f64,
            test_rmse: 1.0 / (1 + round) as f64,
        }
    }

    #[test]
    fn curve_csv_rows() {
        assert_eq!(curve_csv(&[]), format!("{CURVE_HEADER}\n"));
        let recs: Vec<RoundRecord> = (0..21).map(|r| rec(r, 10 + r)).collect();
        let text = curve_csv(&recs);
        assert_eq!(text.lines().count(), 22);
        assert!(text.lines().nth(1).unwrap().ends_with(",,"));
        assert_eq!(text, curve_csv(&recs));
    }

    #[test]
    fn curve_budget_must_increase() {
        assert!(LearningCurve::new(vec![rec(0, 5), rec(1, 5)], 10).is_err());
        let c = LearningCurve::new(vec![rec(0, 5), rec(1, 8)], 10).unwrap();
        assert_eq!(c.budgets(), vec![0.5, 0.8]);
        assert_eq!(c.best_rmse(), Some(0.5));
    }
}

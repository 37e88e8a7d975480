use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AdamState, HeteroNet};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::objective::ObjectiveKind;
use crate::seed;

/// Optimizer and stopping schedule for one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            max_epochs: 100,
            batch_size: 128,
            lr0: 1e-4,
            plateau_patience: 10,
            lr_factor: 0.5,
            min_lr: 1e-7,
            early_stop_patience: 20,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return fail(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if !(self.lr0 > 0.0) || !(self.min_lr > 0.0) || self.min_lr > self.lr0 {
            return fail(format!("need 0 < min_lr <= lr0, got min_lr={} lr0={}", self.min_lr, self.lr0));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return fail("patience values must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored snapshot.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Train on `train`, early-stopping on the objective's loss over `val`.
/// Returns the best-validation snapshot.
pub fn train_member(
    net: HeteroNet,
    train: &Samples,
    val: &Samples,
    objective: &ObjectiveKind,
    schedule: &TrainSchedule,
) -> Result<(HeteroNet, TrainHistory)> {
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    train_with_monitor(net, train, objective, schedule, |n| n.mean_loss(&val.x, &val.y, objective))
}

/// Training loop with an arbitrary per-epoch validation monitor.
pub fn train_with_monitor<F>(
    mut net: HeteroNet,
    train: &Samples,
    objective: &ObjectiveKind,
    schedule: &TrainSchedule,
    mut monitor: F,
) -> Result<(HeteroNet, TrainHistory)>
where
    F: FnMut(&HeteroNet) -> Result<f64>,
{
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    schedule.validate()?;
    objective.validate()?;
    let mut history = TrainHistory::default();
    if schedule.max_epochs == 0 {
        return Ok((net, history));
    }

    let mut rng = seed::rng(schedule.seed);
    let mut adam = AdamState::new(net.num_params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = schedule.lr0;
    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut since_lr_change = 0;
    let mut batch: Vec<(&[f64], f64)> = Vec::with_capacity(schedule.batch_size);

    for epoch in 0..schedule.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| (train.x[i].as_slice(), train.y[i])));
            let grads = net.backward(&batch, objective)?;
            train_loss += grads.loss * chunk.len() as f64;
            let g = grads.slices();
            adam.step_slices(&mut net.param_slices_mut(), &g, lr, schedule.weight_decay)?;
        }
        train_loss /= train.len() as f64;

        let val_loss = monitor(&net)?;
        if !val_loss.is_finite() {
            return Err(Error::numeric("validation", format!("non-finite validation loss at epoch {epoch}")));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best = net.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
            since_lr_change = 0;
        } else {
            since_best += 1;
            since_lr_change += 1;
            if since_lr_change >= schedule.plateau_patience {
                lr = (lr * schedule.lr_factor).max(schedule.min_lr);
                since_lr_change = 0;
            }
            if since_best >= schedule.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, history))
}

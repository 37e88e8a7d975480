//! Training objectives for heteroscedastic regressors.
//!
//! Each objective evaluates a per-sample loss and its gradient with respect
//! to the two quantities the heads parameterize (mean and variance, or the
//! Gaussian natural parameters). Stop-gradient semantics are encoded in the
//! returned gradients and the `var_to_trunk` routing flag: the network
//! backward pass follows those exactly and never differentiates through a
//! detached quantity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positivity floor added after the softplus link.
pub const SIGMA2_FLOOR: f64 = 1e-6;

/// Default weight on the variance term of the decoupled objective.
pub const DEFAULT_LAMBDA: f64 = 0.1;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_beta_nll() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Plain Gaussian negative log-likelihood.
    Nll,
    /// MSE on the mean plus `lambda` times an NLL variance term whose
    /// residual treats the mean as a constant.
    Decoupled {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    /// NLL reweighted by the detached variance raised to `beta_nll`.
    BetaNll {
        #[serde(default = "default_beta_nll")]
        beta_nll: f64,
    },
    /// MSE on the mean; the NLL variance term only trains the variance head.
    Faithful,
    /// Gaussian NLL under the natural parameterization (eta1, eta2 < 0).
    Natural,
}

impl Default for ObjectiveKind {
    fn default() -> Self {
        ObjectiveKind::Decoupled {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Which additive component of an objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPart {
    Total,
    /// The mean-fitting term (MSE) of a split objective.
    Mean,
    /// The (weighted) variance-calibration term of a split objective.
    Variance,
}

/// How the two raw head outputs map onto a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadParam {
    /// mean head emits mu, variance head emits a logit r with
    /// sigma^2 = softplus(r) + floor.
    MeanVariance,
    /// mean head emits eta1, variance head emits u with
    /// eta2 = -softplus(u) - floor.
    Natural,
}

/// Per-sample loss with gradients w.r.t. the head quantities.
///
/// `d_mean` is the derivative with respect to mu (or eta1), `d_var` with
/// respect to sigma^2 (or eta2). When `var_to_trunk` is false the variance
/// head's gradient stops at the trunk output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerSampleLoss {
    pub loss: f64,
    pub d_mean: f64,
    pub d_var: f64,
    pub var_to_trunk: bool,
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl HeadParam {
    /// Map the raw variance-head output to the second head quantity
    /// (sigma^2 or eta2) and its derivative w.r.t. the raw output.
    #[inline]
    pub fn link(self, raw: f64) -> (f64, f64) {
        match self {
            HeadParam::MeanVariance => (softplus(raw) + SIGMA2_FLOOR, sigmoid(raw)),
            HeadParam::Natural => (-softplus(raw) - SIGMA2_FLOOR, -sigmoid(raw)),
        }
    }

    /// Mean and variance implied by the head quantities.
    #[inline]
    pub fn moments(self, q_mean: f64, q_var: f64) -> (f64, f64) {
        match self {
            HeadParam::MeanVariance => (q_mean, q_var),
            HeadParam::Natural => (-q_mean / (2.0 * q_var), -1.0 / (2.0 * q_var)),
        }
    }
}

fn check_var(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(
            "objective",
            format!("variance must be positive and finite, got {sigma2}"),
        ))
    }
}

/// d/dsigma^2 of 0.5*res^2/sigma^2 + 0.5*ln sigma^2.
#[inline]
fn nll_dvar(res2: f64, sigma2: f64) -> f64 {
    0.5 / sigma2 - 0.5 * res2 / (sigma2 * sigma2)
}

#[inline]
fn nll_value(res2: f64, sigma2: f64) -> f64 {
    0.5 * sigma2.ln() + 0.5 * res2 / sigma2
}

pub fn eval_nll(mu: f64, sigma2: f64, y: f64) -> Result<PerSampleLoss> {
    check_var(sigma2)?;
    let res = y - mu;
    Ok(PerSampleLoss {
        loss: nll_value(res * res, sigma2),
        d_mean: -res / sigma2,
        d_var: nll_dvar(res * res, sigma2),
        var_to_trunk: true,
    })
}

pub fn eval_decoupled(mu: f64, sigma2: f64, y: f64, lambda: f64) -> Result<PerSampleLoss> {
    eval_split(mu, sigma2, y, lambda, true, LossPart::Total)
}

pub fn eval_beta_nll(mu: f64, sigma2: f64, y: f64, beta_nll: f64) -> Result<PerSampleLoss> {
    check_var(sigma2)?;
    let weight = sigma2.powf(beta_nll);
    let res = y - mu;
    Ok(PerSampleLoss {
        loss: weight * nll_value(res * res, sigma2),
        d_mean: -weight * res / sigma2,
        d_var: weight * nll_dvar(res * res, sigma2),
        var_to_trunk: true,
    })
}

pub fn eval_faithful(mu: f64, sigma2: f64, y: f64) -> Result<PerSampleLoss> {
    eval_split(mu, sigma2, y, 1.0, false, LossPart::Total)
}

pub fn eval_natural(eta1: f64, eta2: f64, y: f64) -> Result<PerSampleLoss> {
    if !(eta2 < 0.0) || !eta2.is_finite() || !eta1.is_finite() {
        return Err(Error::Domain(format!(
            "natural parameterization requires eta2 < 0, got eta2 = {eta2}"
        )));
    }
    let (mu, sigma2) = HeadParam::Natural.moments(eta1, eta2);
    let res = y - mu;
    Ok(PerSampleLoss {
        loss: nll_value(res * res, sigma2),
        d_mean: mu - y,
        d_var: sigma2 - y * y + mu * mu,
        var_to_trunk: true,
    })
}

/// MSE + weight * NLL(sg(mu)) with the variance branch optionally cut at the
/// trunk output.
fn eval_split(
    mu: f64,
    sigma2: f64,
    y: f64,
    weight: f64,
    var_to_trunk: bool,
    part: LossPart,
) -> Result<PerSampleLoss> {
    check_var(sigma2)?;
    let res = y - mu;
    let res2 = res * res;
    let (mean_loss, d_mean) = match part {
        LossPart::Variance => (0.0, 0.0),
        _ => (res2, -2.0 * res),
    };
    let (var_loss, d_var) = match part {
        LossPart::Mean => (0.0, 0.0),
        _ => (weight * nll_value(res2, sigma2), weight * nll_dvar(res2, sigma2)),
    };
    Ok(PerSampleLoss {
        loss: mean_loss + var_loss,
        d_mean,
        d_var,
        var_to_trunk,
    })
}

impl ObjectiveKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObjectiveKind::Decoupled { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => Err(
                Error::Config(format!("lambda must be finite and >= 0, got {lambda}")),
            ),
            ObjectiveKind::BetaNll { beta_nll } if !(0.0..=1.0).contains(&beta_nll) => Err(
                Error::Config(format!("beta_nll must lie in [0, 1], got {beta_nll}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn head_param(&self) -> HeadParam {
        match self {
            ObjectiveKind::Natural => HeadParam::Natural,
            _ => HeadParam::MeanVariance,
        }
    }

    /// True for objectives made of a separate mean term and variance term.
    pub fn is_split(&self) -> bool {
        matches!(
            self,
            ObjectiveKind::Decoupled { .. } | ObjectiveKind::Faithful
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Nll => "nll",
            ObjectiveKind::Decoupled { .. } => "decoupled",
            ObjectiveKind::BetaNll { .. } => "beta_nll",
            ObjectiveKind::Faithful => "faithful",
            ObjectiveKind::Natural => "natural",
        }
    }

    /// Evaluate on the head quantities (mu, sigma^2) or (eta1, eta2).
    pub fn eval(&self, q_mean: f64, q_var: f64, y: f64) -> Result<PerSampleLoss> {
        self.eval_part(q_mean, q_var, y, LossPart::Total)
    }

    pub fn eval_part(&self, q_mean: f64, q_var: f64, y: f64, part: LossPart) -> Result<PerSampleLoss> {
        if part != LossPart::Total && !self.is_split() {
            return Err(Error::Config(format!(
                "objective `{}` has no separate mean/variance terms",
                self.name()
            )));
        }
        match *self {
            ObjectiveKind::Nll => eval_nll(q_mean, q_var, y),
            ObjectiveKind::Decoupled { lambda } => eval_split(q_mean, q_var, y, lambda, true, part),
            ObjectiveKind::BetaNll { beta_nll } => eval_beta_nll(q_mean, q_var, y, beta_nll),
            ObjectiveKind::Faithful => eval_split(q_mean, q_var, y, 1.0, false, part),
            ObjectiveKind::Natural => eval_natural(q_mean, q_var, y),
        }
    }
}

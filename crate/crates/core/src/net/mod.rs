//! Heteroscedastic feedforward regressor with hand-derived gradients.
//!
//! The network is a GELU trunk feeding two heads. Parameters fall into three
//! disjoint partitions (trunk, mean head, variance head); gradients come
//! back in the same partitioning so stop-gradient routing can be checked
//! partition by partition.

mod adam;
mod train;

pub use adam::AdamState;
pub use train::{train_member, train_with_monitor, EpochRecord, TrainHistory, TrainSchedule};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{HeadParam, LossPart, ObjectiveKind};
use crate::seed;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// tanh approximation of GELU
    Gelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; `weights` is row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        DenseLayer {
            weights,
            ..DenseLayer::zeros(in_dim, out_dim, activation)
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check(&self) -> bool {
        self.weights.len() == self.in_dim * self.out_dim && self.bias.len() == self.out_dim
    }

    fn pre_activation(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)
        }));
    }

    /// Post-activation output.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        self.pre_activation(x, &mut out);
        for v in &mut out {
            *v = self.activation.apply(*v);
        }
        out
    }
}

/// Input and pre-activation of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub trunk: Vec<LayerCache>,
    pub mean_head: Vec<LayerCache>,
    pub var_head: Vec<LayerCache>,
    /// Trunk output.
    pub hidden: Vec<f64>,
    /// Raw mean-head output (mu, or eta1 under the natural parameterization).
    pub mean_out: f64,
    /// Raw variance-head output (the variance logit r).
    pub r: f64,
    /// Second head quantity after the link: sigma^2, or eta2.
    pub var_q: f64,
    /// d var_q / d r
    pub var_link_grad: f64,
    pub mu: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub trunk_layers: usize,
    /// Hidden GELU layers in each head before its final linear layer.
    pub head_layers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: 1,
            hidden: 64,
            trunk_layers: 2,
            head_layers: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.trunk_layers == 0 {
            return Err(Error::Config(format!(
                "network needs input_dim, hidden and trunk_layers >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Gradient (or parameter-shaped buffer) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrad {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|g| *g *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|&g| g == 0.0)
    }
}

/// Mean-over-batch gradients, partitioned like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<LayerGrad>,
    pub mean_head: Vec<LayerGrad>,
    pub var_head: Vec<LayerGrad>,
    /// Mean loss over the batch.
    pub loss: f64,
}

impl Gradients {
    fn zeros_like(net: &HeteroNet) -> Self {
        let z = |ls: &[DenseLayer]| ls.iter().map(LayerGrad::zeros_like).collect();
        Gradients {
            trunk: z(&net.trunk),
            mean_head: z(&net.mean_head),
            var_head: z(&net.var_head),
            loss: 0.0,
        }
    }

    fn layers(&self) -> impl Iterator<Item = &LayerGrad> {
        self.trunk.iter().chain(&self.mean_head).chain(&self.var_head)
    }

    /// Flattened in the same order as [`HeteroNet::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

/// Shared trunk with a mean head and a variance head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroNet {
    pub trunk: Vec<DenseLayer>,
    pub mean_head: Vec<DenseLayer>,
    pub var_head: Vec<DenseLayer>,
    pub head_param: HeadParam,
}

fn layer_name(part: &str, i: usize) -> String {
    format!("{part}[{i}]")
}

impl HeteroNet {
    fn build(config: &NetConfig, head_param: HeadParam, mut make: impl FnMut(usize, usize, Activation) -> DenseLayer) -> Self {
        let h = config.hidden;
        let trunk = (0..config.trunk_layers)
            .map(|i| make(if i == 0 { config.input_dim } else { h }, h, Activation::Gelu))
            .collect();
        let mut head = || {
            let mut layers: Vec<DenseLayer> =
                (0..config.head_layers).map(|_| make(h, h, Activation::Gelu)).collect();
            layers.push(make(h, 1, Activation::Identity));
            layers
        };
        let mean_head = head();
        let var_head = head();
        HeteroNet {
            trunk,
            mean_head,
            var_head,
            head_param,
        }
    }

    /// Randomly initialized network.
    pub fn new(config: &NetConfig, head_param: HeadParam, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        Ok(Self::build(config, head_param, |i, o, a| DenseLayer::init(i, o, a, &mut rng)))
    }

    /// All-zero network.
    pub fn zeros(config: &NetConfig, head_param: HeadParam) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, head_param, DenseLayer::zeros))
    }

    pub fn config(&self) -> NetConfig {
        NetConfig {
            input_dim: self.input_dim(),
            hidden: self.hidden_dim(),
            trunk_layers: self.trunk.len(),
            head_layers: self.mean_head.len() - 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.trunk.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Check the structural invariants: consistent dimensions, scalar head
    /// outputs, finite parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trunk.is_empty() || self.mean_head.is_empty() || self.var_head.is_empty() {
            return bad("network needs a non-empty trunk and two heads".into());
        }
        let chain_ok = |ls: &[DenseLayer], start: usize| {
            ls.iter()
                .try_fold(start, |d, l| (l.check() && l.in_dim == d).then_some(l.out_dim))
        };
        let h = match chain_ok(&self.trunk, self.input_dim()) {
            Some(h) => h,
            None => return bad("inconsistent trunk dimensions".into()),
        };
        for (name, head) in [("mean_head", &self.mean_head), ("var_head", &self.var_head)] {
            if chain_ok(head, h) != Some(1) {
                return bad(format!("{name} must map width {h} to a scalar"));
            }
            if head.last().map(|l| l.activation) != Some(Activation::Identity) {
                return bad(format!("{name} must end in an identity layer"));
            }
        }
        if !self.layers().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite())) {
            return Err(Error::numeric("parameters", "non-finite parameter value"));
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.trunk.iter().chain(&self.mean_head).chain(&self.var_head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.trunk
            .iter_mut()
            .chain(self.mean_head.iter_mut())
            .chain(self.var_head.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(DenseLayer::num_params).sum()
    }

    /// Parameters flattened as trunk, mean head, variance head; within a
    /// layer, weights then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for layer in self.layers_mut() {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn run_stack(layers: &[DenseLayer], part: &str, input: Vec<f64>, caches: &mut Vec<LayerCache>) -> Result<Vec<f64>> {
        let mut x = input;
        for (i, layer) in layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(layer.out_dim);
            layer.pre_activation(&x, &mut pre);
            let post: Vec<f64> = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            if post.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(layer_name(part, i), "non-finite activation"));
            }
            caches.push(LayerCache { input: x, pre });
            x = post;
        }
        Ok(x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut trunk = Vec::with_capacity(self.trunk.len());
        let hidden = Self::run_stack(&self.trunk, "trunk", x.to_vec(), &mut trunk)?;
        let mut mean_head = Vec::with_capacity(self.mean_head.len());
        let mean_out = Self::run_stack(&self.mean_head, "mean_head", hidden.clone(), &mut mean_head)?[0];
        let mut var_head = Vec::with_capacity(self.var_head.len());
        let r = Self::run_stack(&self.var_head, "var_head", hidden.clone(), &mut var_head)?[0];
        let (var_q, var_link_grad) = self.head_param.link(r);
        let (mu, sigma2) = self.head_param.moments(mean_out, var_q);
        if !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::numeric("output", format!("non-finite prediction mu={mu}, sigma2={sigma2}")));
        }
        Ok(ForwardTrace {
            trunk,
            mean_head,
            var_head,
            hidden,
            mean_out,
            r,
            var_q,
            var_link_grad,
            mu,
            sigma2,
        })
    }

    /// Predictive mean and variance without keeping caches.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let h = self.hidden(x)?;
        let head = |layers: &[DenseLayer]| layers.iter().fold(h.clone(), |a, l| l.apply(&a))[0];
        let (q_var, _) = self.head_param.link(head(&self.var_head));
        let (mu, sigma2) = self.head_param.moments(head(&self.mean_head), q_var);
        if !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::numeric("output", format!("non-finite prediction mu={mu}, sigma2={sigma2}")));
        }
        Ok((mu, sigma2))
    }

    /// Trunk output h(x).
    pub fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for (i, layer) in self.trunk.iter().enumerate() {
            h = layer.apply(&h);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(layer_name("trunk", i), "non-finite activation"));
            }
        }
        Ok(h)
    }

    /// Mean objective value over a set of samples.
    pub fn mean_loss(&self, xs: &[Vec<f64>], ys: &[f64], objective: &ObjectiveKind) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let t = self.forward(x)?;
            total += objective.eval(t.mean_out, t.var_q, y)?.loss;
        }
        Ok(total / xs.len().max(1) as f64)
    }

    /// Mean-over-batch gradients of the full objective.
    pub fn backward(&self, batch: &[(&[f64], f64)], objective: &ObjectiveKind) -> Result<Gradients> {
        self.backward_part(batch, objective, LossPart::Total)
    }

    /// Mean-over-batch gradients of one component of the objective.
    pub fn backward_part(&self, batch: &[(&[f64], f64)], objective: &ObjectiveKind, part: LossPart) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::Config("backward needs a non-empty batch".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut dh = vec![0.0; self.hidden_dim()];
        for &(x, y) in batch {
            let trace = self.forward(x)?;
            let l = objective.eval_part(trace.mean_out, trace.var_q, y, part)?;
            grads.loss += l.loss;

            dh.iter_mut().for_each(|v| *v = 0.0);
            let dh_mean = backprop_stack(&self.mean_head, &trace.mean_head, &mut grads.mean_head, vec![l.d_mean]);
            for (a, b) in dh.iter_mut().zip(&dh_mean) {
                *a += b;
            }
            let dh_var = backprop_stack(&self.var_head, &trace.var_head, &mut grads.var_head, vec![l.d_var * trace.var_link_grad]);
            if l.var_to_trunk {
                for (a, b) in dh.iter_mut().zip(&dh_var) {
                    *a += b;
                }
            }
            backprop_stack(&self.trunk, &trace.trunk, &mut grads.trunk, dh.clone());
        }
        let inv = 1.0 / batch.len() as f64;
        grads.loss *= inv;
        grads.trunk.iter_mut().chain(grads.mean_head.iter_mut()).chain(grads.var_head.iter_mut()).for_each(|g| g.scale(inv));
        let nonfinite = grads.flat().iter().any(|g| !g.is_finite());
        if nonfinite || !grads.loss.is_finite() {
            return Err(Error::numeric("backward", "non-finite gradient"));
        }
        Ok(grads)
    }
}

/// Backpropagate `upstream` (d loss / d stack output) through a layer stack,
/// accumulating parameter gradients; returns d loss / d stack input.
fn backprop_stack(layers: &[DenseLayer], caches: &[LayerCache], grads: &mut [LayerGrad], upstream: Vec<f64>) -> Vec<f64> {
    let mut delta = upstream;
    for ((layer, cache), grad) in layers.iter().zip(caches).zip(grads.iter_mut()).rev() {
        for (d, &p) in delta.iter_mut().zip(&cache.pre) {
            *d *= layer.activation.derivative(p);
        }
        let mut down = vec![0.0; layer.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            grad.bias[o] += d;
            let row = o * layer.in_dim..(o + 1) * layer.in_dim;
            for ((gw, &w), (&xi, dn)) in grad.weights[row.clone()]
                .iter_mut()
                .zip(&layer.weights[row])
                .zip(cache.input.iter().zip(down.iter_mut()))
            {
                *gw += d * xi;
                *dn += d * w;
            }
        }
        delta = down;
    }
    delta
}

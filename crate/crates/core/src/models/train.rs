//! Mini-batch training with Adam and weighted cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Dropout, ModelKind, ModelParams, ModelSpec, Network, Real, N_CLASSES};
use crate::error::{Error, Result};
use crate::session::CommandLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Explicit per-class weights; inverse class frequency when absent.
    pub class_weights: Option<[f64; N_CLASSES]>,
    /// Weight the loss at all. Off means unit weights.
    pub weighted_loss: bool,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 150,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            class_weights: None,
            weighted_loss: true,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad("class_weights must be finite and > 0");
            }
        }
        Ok(())
    }

    /// Effective loss weights given pre-oversampling class counts.
    pub fn resolve_weights(&self, counts: &[usize; N_CLASSES]) -> [f64; N_CLASSES] {
        match (self.weighted_loss, self.class_weights) {
            (false, _) => [1.0; N_CLASSES],
            (true, Some(w)) => w,
            (true, None) => class_weights(counts),
        }
    }
}

/// Inverse class frequency over present classes, normalised to mean 1.
/// Absent classes get weight 1; they never contribute to the loss.
pub fn class_weights(counts: &[usize; N_CLASSES]) -> [f64; N_CLASSES] {
    let present: Vec<usize> = (0..N_CLASSES).filter(|&k| counts[k] > 0).collect();
    let mut w = [1.0; N_CLASSES];
    if present.is_empty() {
        return w;
    }
    let inv: Vec<f64> = present.iter().map(|&k| 1.0 / counts[k] as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    for (&k, v) in present.iter().zip(inv) {
        w[k] = v / mean;
    }
    w
}

/// Adam with bias correction; moments kept per tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig, params: &ModelParams<T>) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Adam {
            lr: cfg.learning_rate,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.t += 1;
        let (b1, b2) = (T::of(self.b1), T::of(self.b2));
        let c1 = T::of(1.0 / (1.0 - self.b1.powi(self.t)));
        let c2 = T::of(1.0 / (1.0 - self.b2.powi(self.t)));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (ti, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub class_weights: [f64; N_CLASSES],
}

/// Train a fresh model on windows `x` (`[n][C][S]`, flattened).
pub fn train<T: Real>(
    spec: &ModelSpec,
    x: &[T],
    labels: &[CommandLabel],
    class_weights: [f64; N_CLASSES],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    spec.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let w = spec.window_size();
    if x.len() != n * w {
        return Err(Error::Shape(format!("{} values for {n} windows of {w}", x.len())));
    }

    let mut params = ModelParams::init(spec, derive_seed(cfg.rng_seed, &[1]));
    let mut adam = Adam::new(cfg, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[2]));
    let dropout_p = match spec.kind {
        ModelKind::ShallowConvnet => spec.shallow.as_ref().map_or(0.0, |s| s.dropout_p),
        ModelKind::Linear => 0.0,
    };
    let dropout_seed = derive_seed(cfg.rng_seed, &[3]);

    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut xb: Vec<T> = Vec::with_capacity(cfg.batch_size * w);
    let mut yb: Vec<CommandLabel> = Vec::with_capacity(cfg.batch_size);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(&x[i * w..(i + 1) * w]);
                yb.push(labels[i]);
            }
            let dropout = (dropout_p > 0.0).then_some(Dropout { p: dropout_p, seed: dropout_seed, step });
            let net = Network::new(spec, &params)?;
            let (loss, grads) = net.loss_and_grad(&xb, &yb, &class_weights, dropout)?;
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, msg: format!("non-finite loss at step {step}") });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut params, &grads);
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch, msg: "non-finite parameters".into() });
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    Ok(TrainOutcome { params, loss_trace: trace, class_weights })
}

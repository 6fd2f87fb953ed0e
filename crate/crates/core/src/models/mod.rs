//! Reference classifiers with hand-written gradients: a linear softmax
//! baseline and ShallowConvNet. Generic over the float type so the same code
//! trains in f32 and gradient-checks in f64.

pub mod checkpoint;
mod linear;
mod shallow;
pub mod train;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::CommandLabel;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use train::{class_weights, train, Adam, TrainConfig, TrainOutcome};

pub const N_CLASSES: usize = CommandLabel::COUNT;

/// Floating-point element type for model computation.
pub trait Real: Float + NumAssign + Sum + Send + Sync + Debug + Default + 'static {
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite constant")
    }
    fn f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    ShallowConvnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::ShallowConvnet => "shallow_convnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "shallow_convnet" | "shallowconvnet" | "shallow" => Ok(ModelKind::ShallowConvnet),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected `linear` or `shallow_convnet`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowConvNetSpec {
    pub n_temporal_filters: usize,
    pub temporal_kernel: usize,
    pub n_spatial_filters: usize,
    pub pool_len: usize,
    pub pool_stride: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
}

impl Default for ShallowConvNetSpec {
    fn default() -> Self {
        ShallowConvNetSpec {
            n_temporal_filters: 40,
            temporal_kernel: 13,
            n_spatial_filters: 40,
            pool_len: 35,
            pool_stride: 7,
            dropout_p: 0.5,
            n_classes: N_CLASSES,
        }
    }
}

impl ShallowConvNetSpec {
    pub fn validate(&self, window_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_temporal_filters == 0 || self.n_spatial_filters == 0 {
            return bad("filter counts must be >= 1".into());
        }
        if self.temporal_kernel == 0 || self.temporal_kernel > window_len {
            return bad(format!(
                "temporal_kernel {} must lie in 1..={window_len}",
                self.temporal_kernel
            ));
        }
        let conv_len = window_len - self.temporal_kernel + 1;
        if self.pool_len == 0 || self.pool_len > conv_len {
            return bad(format!("pool_len {} must lie in 1..={conv_len}", self.pool_len));
        }
        if self.pool_stride == 0 {
            return bad("pool_stride must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must lie in [0, 1)", self.dropout_p));
        }
        if self.n_classes != N_CLASSES {
            return bad(format!("n_classes must be {N_CLASSES}"));
        }
        Ok(())
    }

    pub fn conv_len(&self, window_len: usize) -> usize {
        window_len - self.temporal_kernel + 1
    }

    /// Pooled time frames after the temporal convolution.
    pub fn frames(&self, window_len: usize) -> usize {
        (self.conv_len(window_len) - self.pool_len) / self.pool_stride + 1
    }
}

/// Architecture plus input geometry; everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_channels: usize,
    pub window_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shallow: Option<ShallowConvNetSpec>,
}

impl ModelSpec {
    pub fn linear(n_channels: usize, window_len: usize) -> Self {
        ModelSpec { kind: ModelKind::Linear, n_channels, window_len, shallow: None }
    }

    pub fn shallow(n_channels: usize, window_len: usize, spec: ShallowConvNetSpec) -> Self {
        ModelSpec { kind: ModelKind::ShallowConvnet, n_channels, window_len, shallow: Some(spec) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.window_len < 2 {
            return Err(Error::Config("model needs >= 1 channel and window_len >= 2".into()));
        }
        match (self.kind, &self.shallow) {
            (ModelKind::Linear, _) => Ok(()),
            (ModelKind::ShallowConvnet, Some(s)) => s.validate(self.window_len),
            (ModelKind::ShallowConvnet, None) => {
                Err(Error::Config("shallow_convnet spec missing".into()))
            }
        }
    }

    pub fn window_size(&self) -> usize {
        self.n_channels * self.window_len
    }

    fn shallow_spec(&self) -> &ShallowConvNetSpec {
        self.shallow.as_ref().expect("validated shallow spec")
    }

    /// Tensor names, shapes and Glorot fans, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize, usize)> {
        let (c, s, k) = (self.n_channels, self.window_len, N_CLASSES);
        match self.kind {
            ModelKind::Linear => vec![
                ("dense.weight", vec![k, c * s], c * s, k),
                ("dense.bias", vec![k], 0, 0),
            ],
            ModelKind::ShallowConvnet => {
                let sp = self.shallow_spec();
                let (f1, f2, kt) = (sp.n_temporal_filters, sp.n_spatial_filters, sp.temporal_kernel);
                let d = f2 * sp.frames(s);
                vec![
                    ("temporal.weight", vec![f1, kt], kt, f1 * kt),
                    ("temporal.bias", vec![f1], 0, 0),
                    ("spatial.weight", vec![f2, f1, c], f1 * c, f2 * c),
                    ("spatial.bias", vec![f2], 0, 0),
                    ("dense.weight", vec![k, d], d, k),
                    ("dense.bias", vec![k], 0, 0),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named parameter tensors of one model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let tensors = spec
            .layout()
            .into_iter()
            .map(|(name, shape, _, _)| {
                let n = shape.iter().product();
                Tensor { name: name.to_string(), shape, data: vec![T::zero(); n] }
            })
            .collect();
        ModelParams { tensors }
    }

    /// Glorot-uniform weights, zero biases, drawn from one seeded stream.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(spec);
        for (t, (_, _, fan_in, fan_out)) in p.tensors.iter_mut().zip(spec.layout()) {
            if fan_in + fan_out == 0 {
                continue;
            }
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        p
    }

    pub fn get(&self, name: &str) -> &[T] {
        &self.tensor(name).data
    }

    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Vec<T> {
        &mut self
            .tensors
            .iter_mut()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor `{name}`"))
            .data
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.layout();
        if layout.len() != self.tensors.len()
            || layout.iter().zip(&self.tensors).any(|((n, s, _, _), t)| {
                *n != t.name || *s != t.shape || t.data.len() != s.iter().product::<usize>()
            })
        {
            return Err(Error::Shape("parameters do not match model spec".into()));
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }
}

/// Counter-based dropout: the keep decision for a unit is a pure function of
/// (seed, step, window, unit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
    pub step: u64,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a seed with a sequence of identifiers into a new seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

impl Dropout {
    /// Multiplicative mask (0 or 1/(1-p)) for one window.
    pub fn mask<T: Real>(&self, window: usize, units: usize) -> Vec<T> {
        let scale = T::of(1.0 / (1.0 - self.p));
        let base = derive_seed(self.seed, &[self.step, window as u64]);
        (0..units)
            .map(|u| {
                let r = splitmix64(base ^ (u as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
                let uniform = (r >> 11) as f64 / (1u64 << 53) as f64;
                if uniform < self.p {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect()
    }
}

/// Row-wise log-softmax with the maximum shifted out.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    log_softmax(logits).into_iter().map(T::exp).collect()
}

/// Mean over the batch of `w[y] * -log p[y]`.
pub fn weighted_ce<T: Real>(log_probs: &[Vec<T>], labels: &[CommandLabel], weights: &[f64; N_CLASSES]) -> T {
    let n = T::of(labels.len() as f64);
    log_probs
        .iter()
        .zip(labels)
        .map(|(lp, y)| -T::of(weights[y.index()]) * lp[y.index()])
        .sum::<T>()
        / n
}

/// Index of the largest value; the first wins ties.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// A forward/backward-capable model bound to its spec.
pub struct Network<'a, T> {
    spec: &'a ModelSpec,
    params: &'a ModelParams<T>,
}

impl<'a, T: Real> Network<'a, T> {
    pub fn new(spec: &'a ModelSpec, params: &'a ModelParams<T>) -> Result<Self> {
        spec.validate()?;
        params.check(spec)?;
        Ok(Network { spec, params })
    }

    fn check_batch(&self, x: &[T], n: usize) -> Result<()> {
        if x.len() != n * self.spec.window_size() {
            return Err(Error::Shape(format!(
                "batch of {} values is not {n} windows of {}x{}",
                x.len(),
                self.spec.n_channels,
                self.spec.window_len
            )));
        }
        Ok(())
    }

    fn n_windows(&self, x: &[T]) -> Result<usize> {
        let w = self.spec.window_size();
        if x.len() % w != 0 {
            return Err(Error::Shape(format!("{} values is not a multiple of {w}", x.len())));
        }
        Ok(x.len() / w)
    }

    /// Logits for every window; dropout applies when given.
    pub fn logits(&self, x: &[T], dropout: Option<Dropout>) -> Result<Vec<Vec<T>>> {
        let n = self.n_windows(x)?;
        let w = self.spec.window_size();
        Ok(match self.spec.kind {
            ModelKind::Linear => x.par_chunks(w).map(|xw| linear::logits(self.params, xw)).collect(),
            ModelKind::ShallowConvnet => {
                let net = shallow::Shallow::new(self.spec, self.params);
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mask = dropout.map(|d| d.mask(i, net.dense_in()));
                        net.forward(&x[i * w..(i + 1) * w], mask.as_deref()).logits
                    })
                    .collect()
            }
        })
    }

    pub fn log_probs(&self, x: &[T], dropout: Option<Dropout>) -> Result<Vec<Vec<T>>> {
        Ok(self.logits(x, dropout)?.iter().map(|l| log_softmax(l)).collect())
    }

    pub fn probs(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        Ok(self.logits(x, None)?.iter().map(|l| softmax(l)).collect())
    }

    /// Argmax class per window with dropout disabled; ties go to the lowest code.
    pub fn predict(&self, x: &[T]) -> Result<Vec<CommandLabel>> {
        Ok(self
            .logits(x, None)?
            .iter()
            .map(|l| CommandLabel::ALL[argmax(l)])
            .collect())
    }

    pub fn loss(
        &self,
        x: &[T],
        labels: &[CommandLabel],
        weights: &[f64; N_CLASSES],
        dropout: Option<Dropout>,
    ) -> Result<T> {
        self.check_batch(x, labels.len())?;
        Ok(weighted_ce(&self.log_probs(x, dropout)?, labels, weights))
    }

    /// Weighted cross-entropy and its exact gradient with respect to every
    /// parameter. Per-window contributions are summed in window order.
    pub fn loss_and_grad(
        &self,
        x: &[T],
        labels: &[CommandLabel],
        weights: &[f64; N_CLASSES],
        dropout: Option<Dropout>,
    ) -> Result<(T, ModelParams<T>)> {
        let n = labels.len();
        self.check_batch(x, n)?;
        if n == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let w = self.spec.window_size();
        let inv_n = T::of(1.0 / n as f64);
        // dL/dlogits for one window: w_y (p - onehot(y)) / n
        let dlogits = |logits: &[T], y: CommandLabel| -> (T, Vec<T>) {
            let lp = log_softmax(logits);
            let wy = T::of(weights[y.index()]);
            let mut g: Vec<T> = lp.iter().map(|v| v.exp() * wy * inv_n).collect();
            g[y.index()] -= wy * inv_n;
            (-wy * lp[y.index()] * inv_n, g)
        };

        match self.spec.kind {
            ModelKind::Linear => {
                let parts: Vec<(T, ModelParams<T>)> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let xw = &x[i * w..(i + 1) * w];
                        let (l, g) = dlogits(&linear::logits(self.params, xw), labels[i]);
                        (l, linear::backward(self.spec, xw, &g))
                    })
                    .collect();
                let mut grad = ModelParams::zeros(self.spec);
                let mut loss = T::zero();
                for (l, g) in &parts {
                    loss += *l;
                    grad.add_assign(g);
                }
                Ok((loss, grad))
            }
            ModelKind::ShallowConvnet => {
                let net = shallow::Shallow::new(self.spec, self.params);
                let parts: Vec<(T, shallow::WindowGrad<T>)> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let xw = &x[i * w..(i + 1) * w];
                        let mask = dropout.map(|d| d.mask(i, net.dense_in()));
                        let fwd = net.forward(xw, mask.as_deref());
                        let (l, g) = dlogits(&fwd.logits, labels[i]);
                        (l, net.backward(xw, &fwd, &g, mask.as_deref()))
                    })
                    .collect();
                let mut loss = T::zero();
                let mut acc = shallow::WindowGrad::zeros(&net);
                for (l, g) in &parts {
                    loss += *l;
                    acc.add_assign(g);
                }
                Ok((loss, net.unfuse(&acc)))
            }
        }
    }
}

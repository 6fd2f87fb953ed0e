//! Flatten, affine, softmax.

use super::{ModelParams, ModelSpec, Real, N_CLASSES};

pub(super) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Eight independent accumulators let the compiler vectorise.
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| *x * *y).sum();
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(super) fn logits<T: Real>(params: &ModelParams<T>, x: &[T]) -> Vec<T> {
    let w = params.get("dense.weight");
    let b = params.get("dense.bias");
    let d = x.len();
    (0..N_CLASSES).map(|k| b[k] + dot(&w[k * d..(k + 1) * d], x)).collect()
}

pub(super) fn backward<T: Real>(spec: &ModelSpec, x: &[T], dlogits: &[T]) -> ModelParams<T> {
    let mut g = ModelParams::zeros(spec);
    let d = x.len();
    let dw = g.get_mut("dense.weight");
    for (k, &gk) in dlogits.iter().enumerate() {
        for (o, &xi) in dw[k * d..(k + 1) * d].iter_mut().zip(x) {
            *o = gk * xi;
        }
    }
    g.get_mut("dense.bias").copy_from_slice(dlogits);
    g
}

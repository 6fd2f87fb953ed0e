//! ShallowConvNet: temporal conv, spatial conv, square, mean pool, log,
//! dropout, dense.
//!
//! Both convolutions are linear, so they are folded into one effective
//! kernel `weff[f2][c][k] = sum_f1 ws[f2][f1][c] * wt[f1][k]` before the
//! batch is processed. Gradients are accumulated for the folded kernel and
//! mapped back to the original tensors once per batch.

use super::linear::dot;
use super::{ModelParams, ModelSpec, Real, ShallowConvNetSpec, N_CLASSES};

pub(super) const LOG_FLOOR: f64 = 1e-6;

pub(super) struct Shallow<'a, T> {
    spec: &'a ModelSpec,
    sp: &'a ShallowConvNetSpec,
    params: &'a ModelParams<T>,
    /// `[f2][c][k]`
    weff: Vec<T>,
    /// `[f2]`
    beff: Vec<T>,
}

pub(super) struct Forward<T> {
    pub logits: Vec<T>,
    /// Spatial-conv output `[f2][t]`.
    h: Vec<T>,
    /// Pooled power `[f2][frame]`.
    pooled: Vec<T>,
    /// Dense input after log and dropout.
    features: Vec<T>,
}

/// Gradient of one window with respect to the folded parameters.
pub(super) struct WindowGrad<T> {
    weff: Vec<T>,
    beff: Vec<T>,
    dense_w: Vec<T>,
    dense_b: Vec<T>,
}

impl<T: Real> WindowGrad<T> {
    pub fn zeros(net: &Shallow<T>) -> Self {
        WindowGrad {
            weff: vec![T::zero(); net.weff.len()],
            beff: vec![T::zero(); net.beff.len()],
            dense_w: vec![T::zero(); N_CLASSES * net.dense_in()],
            dense_b: vec![T::zero(); N_CLASSES],
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for (a, b) in [
            (&mut self.weff, &o.weff),
            (&mut self.beff, &o.beff),
            (&mut self.dense_w, &o.dense_w),
            (&mut self.dense_b, &o.dense_b),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

impl<'a, T: Real> Shallow<'a, T> {
    pub fn new(spec: &'a ModelSpec, params: &'a ModelParams<T>) -> Self {
        let sp = spec.shallow.as_ref().expect("validated shallow spec");
        let (f1n, f2n, kt, c) =
            (sp.n_temporal_filters, sp.n_spatial_filters, sp.temporal_kernel, spec.n_channels);
        let wt = params.get("temporal.weight");
        let bt = params.get("temporal.bias");
        let ws = params.get("spatial.weight");
        let bs = params.get("spatial.bias");
        let mut weff = vec![T::zero(); f2n * c * kt];
        let mut beff = bs.to_vec();
        for f2 in 0..f2n {
            for f1 in 0..f1n {
                let wt_row = &wt[f1 * kt..(f1 + 1) * kt];
                for ch in 0..c {
                    let s = ws[(f2 * f1n + f1) * c + ch];
                    beff[f2] += s * bt[f1];
                    let out = &mut weff[(f2 * c + ch) * kt..(f2 * c + ch + 1) * kt];
                    for (o, &w) in out.iter_mut().zip(wt_row) {
                        *o += s * w;
                    }
                }
            }
        }
        Shallow { spec, sp, params, weff, beff }
    }

    pub fn dense_in(&self) -> usize {
        self.sp.n_spatial_filters * self.sp.frames(self.spec.window_len)
    }

    pub fn forward(&self, x: &[T], mask: Option<&[T]>) -> Forward<T> {
        let (c, s) = (self.spec.n_channels, self.spec.window_len);
        let (f2n, kt) = (self.sp.n_spatial_filters, self.sp.temporal_kernel);
        let tn = self.sp.conv_len(s);
        let frames = self.sp.frames(s);
        let (pl, ps) = (self.sp.pool_len, self.sp.pool_stride);

        let mut h = vec![T::zero(); f2n * tn];
        for f2 in 0..f2n {
            let row = &mut h[f2 * tn..(f2 + 1) * tn];
            row.fill(self.beff[f2]);
            for ch in 0..c {
                let xc = &x[ch * s..(ch + 1) * s];
                for k in 0..kt {
                    let w = self.weff[(f2 * c + ch) * kt + k];
                    for (o, &v) in row.iter_mut().zip(&xc[k..k + tn]) {
                        *o += w * v;
                    }
                }
            }
        }

        let inv_pool = T::of(1.0 / pl as f64);
        let floor = T::of(LOG_FLOOR);
        let mut pooled = vec![T::zero(); f2n * frames];
        let mut features = vec![T::zero(); f2n * frames];
        for f2 in 0..f2n {
            let row = &h[f2 * tn..(f2 + 1) * tn];
            for j in 0..frames {
                let win = &row[j * ps..j * ps + pl];
                let p = win.iter().map(|&v| v * v).sum::<T>() * inv_pool;
                let i = f2 * frames + j;
                pooled[i] = p;
                features[i] = p.max(floor).ln() * mask.map_or(T::one(), |m| m[i]);
            }
        }

        let wd = self.params.get("dense.weight");
        let bd = self.params.get("dense.bias");
        let d = features.len();
        let logits = (0..N_CLASSES).map(|k| bd[k] + dot(&wd[k * d..(k + 1) * d], &features)).collect();
        Forward { logits, h, pooled, features }
    }

    pub fn backward(&self, x: &[T], fwd: &Forward<T>, dlogits: &[T], mask: Option<&[T]>) -> WindowGrad<T> {
        let (c, s) = (self.spec.n_channels, self.spec.window_len);
        let (f2n, kt) = (self.sp.n_spatial_filters, self.sp.temporal_kernel);
        let tn = self.sp.conv_len(s);
        let frames = self.sp.frames(s);
        let (pl, ps) = (self.sp.pool_len, self.sp.pool_stride);
        let d = fwd.features.len();
        let wd = self.params.get("dense.weight");

        let mut g = WindowGrad::zeros(self);
        for (k, &gk) in dlogits.iter().enumerate() {
            for (o, &f) in g.dense_w[k * d..(k + 1) * d].iter_mut().zip(&fwd.features) {
                *o = gk * f;
            }
        }
        g.dense_b.copy_from_slice(dlogits);

        let floor = T::of(LOG_FLOOR);
        let inv_pool = T::of(1.0 / pl as f64);
        let two = T::of(2.0);
        let mut dh = vec![T::zero(); tn];
        for f2 in 0..f2n {
            dh.fill(T::zero());
            for j in 0..frames {
                let i = f2 * frames + j;
                let mut dfeat = T::zero();
                for (k, &gk) in dlogits.iter().enumerate() {
                    dfeat += wd[k * d + i] * gk;
                }
                if let Some(m) = mask {
                    dfeat *= m[i];
                }
                let p = fwd.pooled[i];
                if p > floor {
                    let dp = dfeat / p * inv_pool;
                    for v in &mut dh[j * ps..j * ps + pl] {
                        *v += dp;
                    }
                }
            }
            let hrow = &fwd.h[f2 * tn..(f2 + 1) * tn];
            for (v, &hv) in dh.iter_mut().zip(hrow) {
                *v *= two * hv;
            }
            g.beff[f2] = dh.iter().copied().sum();
            for ch in 0..c {
                let xc = &x[ch * s..(ch + 1) * s];
                for k in 0..kt {
                    g.weff[(f2 * c + ch) * kt + k] = dot(&dh, &xc[k..k + tn]);
                }
            }
        }
        g
    }

    /// Map folded-kernel gradients back onto the model's tensors.
    pub fn unfuse(&self, g: &WindowGrad<T>) -> ModelParams<T> {
        let (f1n, f2n, kt, c) = (
            self.sp.n_temporal_filters,
            self.sp.n_spatial_filters,
            self.sp.temporal_kernel,
            self.spec.n_channels,
        );
        let wt = self.params.get("temporal.weight");
        let bt = self.params.get("temporal.bias");
        let ws = self.params.get("spatial.weight");
        let mut out = ModelParams::zeros(self.spec);

        let mut dwt = vec![T::zero(); f1n * kt];
        let mut dbt = vec![T::zero(); f1n];
        let mut dws = vec![T::zero(); f2n * f1n * c];
        for f2 in 0..f2n {
            for f1 in 0..f1n {
                let mut ws_sum = T::zero();
                for ch in 0..c {
                    let gw = &g.weff[(f2 * c + ch) * kt..(f2 * c + ch + 1) * kt];
                    let wsv = ws[(f2 * f1n + f1) * c + ch];
                    ws_sum += wsv;
                    dws[(f2 * f1n + f1) * c + ch] =
                        dot(gw, &wt[f1 * kt..(f1 + 1) * kt]) + g.beff[f2] * bt[f1];
                    for (o, &v) in dwt[f1 * kt..(f1 + 1) * kt].iter_mut().zip(gw) {
                        *o += v * wsv;
                    }
                }
                dbt[f1] += g.beff[f2] * ws_sum;
            }
        }
        *out.get_mut("temporal.weight") = dwt;
        *out.get_mut("temporal.bias") = dbt;
        *out.get_mut("spatial.weight") = dws;
        *out.get_mut("spatial.bias") = g.beff.clone();
        *out.get_mut("dense.weight") = g.dense_w.clone();
        *out.get_mut("dense.bias") = g.dense_b.clone();
        out
    }
}

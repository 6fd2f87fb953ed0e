//! IIR filter design (Butterworth high-pass, notch) as second-order sections,
//! and zero-phase forward-backward application.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::solve_small;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Transposed direct-form II state for the steady-state response to a unit step.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b2 - self.a2 * y;
        let z1 = self.b1 - self.a1 * y + z2;
        [z1, z2]
    }
}

/// Cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn order(&self) -> usize {
        self.sections
            .iter()
            .map(|s| if s.b2 == 0.0 && s.a2 == 0.0 { 1 } else { 2 })
            .sum()
    }

    pub fn frequency_response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.frequency_response(freq_hz, fs).norm()
    }

    /// Initial per-section states for a unit step, scaled by the DC gain of
    /// the preceding sections.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal single pass with the given initial states.
    pub fn filter_with_state(&self, x: &[f64], init: &[[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z0) in self.sections.iter().zip(init) {
            let [mut z1, mut z2] = *z0;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b0 * xin + z1;
                z1 = s.b1 * xin - s.a1 * out + z2;
                z2 = s.b2 * xin - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.filter_with_state(x, &vec![[0.0, 0.0]; self.sections.len()])
    }

    pub fn then(mut self, other: &Sos) -> Sos {
        self.sections.extend_from_slice(&other.sections);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    /// Also notch the first harmonic when it lies below Nyquist.
    pub notch_harmonic: bool,
    pub zero_phase: bool,
    /// Seconds at each end of a session excluded from windowing (filter transients).
    pub edge_trim_s: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            highpass_hz: 1.0,
            highpass_order: 4,
            notch_hz: 50.0,
            notch_q: 30.0,
            notch_harmonic: false,
            zero_phase: true,
            edge_trim_s: 1.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        let nyq = fs / 2.0;
        if !(self.highpass_hz > 0.0 && self.highpass_hz < self.notch_hz && self.notch_hz < nyq) {
            return Err(Error::Config(format!(
                "need 0 < highpass_hz ({}) < notch_hz ({}) < Nyquist ({nyq})",
                self.highpass_hz, self.notch_hz
            )));
        }
        if self.highpass_order == 0 || (self.zero_phase && self.highpass_order % 2 != 0) {
            return Err(Error::Config(format!(
                "highpass_order {} must be positive and even for zero-phase filtering",
                self.highpass_order
            )));
        }
        if !(self.notch_q > 0.0) {
            return Err(Error::Config(format!("notch_q must be > 0, got {}", self.notch_q)));
        }
        if !(self.edge_trim_s >= 0.0) {
            return Err(Error::Config("edge_trim_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// Butterworth high-pass via the bilinear transform with pre-warping.
pub fn design_highpass(spec: &FilterSpec, fs: f64) -> Result<Sos> {
    let fc = spec.highpass_hz;
    let n = spec.highpass_order;
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::Filter(format!(
            "high-pass cutoff {fc} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    if n == 0 {
        return Err(Error::Filter("filter order must be positive".into()));
    }
    let k = 2.0 * fs;
    let warped = k * (PI * fc / fs).tan();
    let mut sections = Vec::with_capacity(n.div_ceil(2));
    // Upper-half-plane prototype poles; conjugates are implied.
    for i in 0..n / 2 {
        let theta = PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let pole = warped / proto;
        let zp = (k + pole) / (k - pole);
        let a1 = -2.0 * zp.re;
        let a2 = zp.norm_sqr();
        // unity gain at Nyquist (z = -1)
        let g = (1.0 - a1 + a2) / 4.0;
        sections.push(Biquad {
            b0: g,
            b1: -2.0 * g,
            b2: g,
            a1,
            a2,
        });
    }
    if n % 2 == 1 {
        let pole = -warped;
        let zp = (k + pole) / (k - pole);
        let g = (1.0 + zp) / 2.0;
        sections.push(Biquad {
            b0: g,
            b1: -g,
            b2: 0.0,
            a1: -zp,
            a2: 0.0,
        });
    }
    Ok(Sos { sections })
}

fn notch_at(f0: f64, q: f64, fs: f64) -> Result<Biquad> {
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::Filter(format!(
            "notch centre {f0} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    if !(q > 0.0) {
        return Err(Error::Filter(format!("notch Q must be > 0, got {q}")));
    }
    // -3 dB bandwidth of f0/Q, pre-warped.
    let w0 = 2.0 * PI * f0 / fs;
    let beta = (PI * (f0 / q) / fs).tan();
    let g = 1.0 / (1.0 + beta);
    let c = -2.0 * w0.cos();
    Ok(Biquad {
        b0: g,
        b1: g * c,
        b2: g,
        a1: g * c,
        a2: 2.0 * g - 1.0,
    })
}

/// Second-order IIR notch with zeros on the unit circle at `notch_hz`.
pub fn design_notch(spec: &FilterSpec, fs: f64) -> Result<Sos> {
    let mut sections = vec![notch_at(spec.notch_hz, spec.notch_q, fs)?];
    let harmonic = 2.0 * spec.notch_hz;
    if spec.notch_harmonic && harmonic < fs / 2.0 {
        sections.push(notch_at(harmonic, spec.notch_q, fs)?);
    }
    Ok(Sos { sections })
}

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions. Output has the input's length and zero net phase.
/// Local edge model: a level plus sinusoids at fixed angular frequencies,
/// `dc + sum Re(amp * exp(i w t))`, with `t = 0` at the edge sample.
struct EdgeModel {
    dc: f64,
    tones: Vec<(f64, Complex64)>,
}

impl EdgeModel {
    /// Least-squares fit to the first `len` samples of `x`.
    fn fit(x: &[f64], freqs: &[f64], len: usize) -> EdgeModel {
        let len = len.min(x.len());
        let k = 1 + 2 * freqs.len();
        let basis = |t: usize| {
            let mut row = Vec::with_capacity(k);
            row.push(1.0);
            for &w in freqs {
                row.push((w * t as f64).cos());
                row.push((w * t as f64).sin());
            }
            row
        };
        let mut ata = vec![vec![0.0; k]; k];
        let mut atb = vec![0.0; k];
        for (t, &v) in x[..len].iter().enumerate() {
            let row = basis(t);
            for i in 0..k {
                atb[i] += row[i] * v;
                for j in 0..k {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let c = solve_small(ata, atb);
        let tones = freqs
            .iter()
            .enumerate()
            .map(|(i, &w)| (w, Complex64::new(c[1 + 2 * i], -c[2 + 2 * i])))
            .collect();
        EdgeModel { dc: c[0], tones }
    }

    fn tone_value(&self, t: f64) -> f64 {
        self.tones
            .iter()
            .map(|&(w, a)| (a * Complex64::from_polar(1.0, w * t)).re)
            .sum()
    }

    fn value(&self, t: f64) -> f64 {
        self.dc + self.tone_value(t)
    }
}

/// `len` samples preceding `x[0]`, in time order: the fitted edge model
/// continued backwards plus the odd reflection of the residual.
fn reflect_pad(x: &[f64], freqs: &[f64], fit_len: usize, len: usize) -> Vec<f64> {
    let m = EdgeModel::fit(x, freqs, fit_len);
    let r = |i: usize| x[i] - m.value(i as f64);
    (1..=len)
        .rev()
        .map(|i| m.value(-(i as f64)) + 2.0 * r(0) - r(i))
        .collect()
}

impl Sos {
    /// Angular frequencies (rad/sample) of zeros on the unit circle strictly
    /// between DC and Nyquist.
    fn rejected_tones(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.sections {
            if s.b0 == 0.0 || s.b1 * s.b1 >= 4.0 * s.b0 * s.b2 {
                continue;
            }
            if ((s.b2 / s.b0) - 1.0).abs() > 1e-9 {
                continue;
            }
            let w = (-s.b1 / (2.0 * s.b0)).clamp(-1.0, 1.0).acos();
            if w > 1e-6 && w < PI - 1e-6 && !out.iter().any(|o| (o - w).abs() < 1e-9) {
                out.push(w);
            }
        }
        out
    }

    /// Initial states matching the steady-state response to the edge model
    /// fitted at the start of `x`, with the non-tonal part treated as a step.
    fn edge_states(&self, x: &[f64], freqs: &[f64], fit_len: usize) -> Vec<[f64; 2]> {
        let m = EdgeModel::fit(x, freqs, fit_len);
        let level = x[0] - m.tone_value(0.0);
        let mut states: Vec<[f64; 2]> = self
            .step_states()
            .into_iter()
            .map(|s| [s[0] * level, s[1] * level])
            .collect();
        for &(w, amp) in &m.tones {
            let z_inv = Complex64::from_polar(1.0, -w);
            let mut input = amp;
            for (st, s) in states.iter_mut().zip(&self.sections) {
                let output = input * s.response(z_inv);
                st[0] += (output - s.b0 * input).re;
                st[1] += ((s.b2 * input - s.a2 * output) * z_inv).re;
                input = output;
            }
        }
        states
    }

    /// Samples until the impulse response stays below `tol` of its peak.
    pub fn settle_len(&self, tol: f64) -> usize {
        const LIMIT: usize = 1 << 16;
        let mut impulse = vec![0.0; LIMIT];
        impulse[0] = 1.0;
        let zero = vec![[0.0, 0.0]; self.sections.len()];
        let h = self.filter_with_state(&impulse, &zero);
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        h.iter().rposition(|v| v.abs() > tol * peak).map_or(0, |i| i + 1)
    }
}

pub fn filter_zero_phase(signal: &[f64], sos: &Sos) -> Result<Vec<f64>> {
    let min_pad = 3 * sos.order();
    if signal.len() <= min_pad {
        return Err(Error::Filter(format!(
            "signal of {} samples too short for zero-phase filtering (need > {min_pad})",
            signal.len()
        )));
    }
    let n = signal.len();
    let settle = sos.settle_len(1e-4);
    let pad = settle.max(min_pad).min(n - 1);
    let fit_len = settle.max(min_pad + 1);
    let tones = sos.rejected_tones();

    let head: Vec<f64> = signal.iter().rev().copied().collect();
    let mut ext = reflect_pad(signal, &tones, fit_len, pad);
    ext.extend_from_slice(signal);
    ext.extend(reflect_pad(&head, &tones, fit_len, pad).into_iter().rev());

    let fwd = sos.filter_with_state(&ext, &sos.edge_states(&ext, &tones, fit_len));
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = sos.filter_with_state(&rev, &sos.edge_states(&rev, &tones, fit_len));
    rev.reverse();
    Ok(rev[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 125.0;

    fn sine(freq: f64, secs: f64, amp: f64) -> Vec<f64> {
        (0..(secs * FS) as usize)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn analog_butter_hp(f: f64, fc: f64, n: i32) -> f64 {
        1.0 / (1.0 + (fc / f).powi(2 * n)).sqrt()
    }

    #[test]
    fn highpass_endpoints_and_cutoff() {
        let sos = design_highpass(&FilterSpec::default(), FS).unwrap();
        assert_eq!(sos.order(), 4);
        assert!(sos.magnitude(0.0, FS) < 1e-12);
        assert!((sos.magnitude(62.5, FS) - 1.0).abs() < 0.01);
        assert!((sos.magnitude(1.0, FS) - 0.5f64.sqrt()).abs() < 0.02);
        // analytic Butterworth magnitude at 0.25 Hz is 1/sqrt(1 + 4^8) ~ 0.0039
        let analytic = analog_butter_hp(0.25, 1.0, 4);
        assert!(analytic <= 0.01);
        assert!(sos.magnitude(0.25, FS) <= 0.01);
        assert!((sos.magnitude(0.25, FS) - analytic).abs() < 1e-3);
    }

    #[test]
    fn odd_order_highpass_is_supported() {
        let spec = FilterSpec { highpass_order: 3, zero_phase: false, ..Default::default() };
        let sos = design_highpass(&spec, FS).unwrap();
        assert_eq!(sos.order(), 3);
        assert!((sos.magnitude(1.0, FS) - 0.5f64.sqrt()).abs() < 0.02);
    }

    #[test]
    fn cutoff_at_nyquist_rejected() {
        let spec = FilterSpec { highpass_hz: 62.5, ..Default::default() };
        assert!(design_highpass(&spec, FS).is_err());
        let spec = FilterSpec { notch_hz: 70.0, ..Default::default() };
        assert!(design_notch(&spec, FS).is_err());
    }

    #[test]
    fn notch_response() {
        let sos = design_notch(&FilterSpec::default(), FS).unwrap();
        assert!(sos.magnitude(50.0, FS) <= 1e-6);
        assert!(sos.magnitude(10.0, FS) >= 0.99);
        // -3 dB band edges by a fine sweep
        let target = 0.5f64.sqrt();
        let sweep: Vec<f64> = (0..=200_000).map(|i| 40.0 + i as f64 * 1e-4).collect();
        let below: Vec<&f64> = sweep.iter().filter(|&&f| sos.magnitude(f, FS) < target).collect();
        let bw = **below.last().unwrap() - **below.first().unwrap();
        let expected = 50.0 / 30.0;
        assert!((bw - expected).abs() / expected < 0.10, "bandwidth {bw}");
    }

    #[test]
    fn harmonic_above_nyquist_is_skipped() {
        let spec = FilterSpec { notch_harmonic: true, ..Default::default() };
        assert_eq!(design_notch(&spec, FS).unwrap().sections.len(), 1);
        assert_eq!(design_notch(&spec, 500.0).unwrap().sections.len(), 2);
    }

    #[test]
    fn notch_removes_50hz_tone() {
        let sos = design_notch(&FilterSpec::default(), FS).unwrap();
        let x = sine(50.0, 2.0, 1.0);
        let y = filter_zero_phase(&x, &sos).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(rms(&y) <= 0.03 * rms(&x), "{} vs {}", rms(&y), rms(&x));
    }

    #[test]
    fn notch_edges_do_not_ring_for_any_phase() {
        let sos = design_notch(&FilterSpec::default(), FS).unwrap();
        for (len, phase) in [(253usize, 0.7), (311, 2.1), (500, -1.3)] {
            let x: Vec<f64> =
                (0..len).map(|i| (2.0 * PI * 50.0 * i as f64 / FS + phase).sin()).collect();
            let y = filter_zero_phase(&x, &sos).unwrap();
            assert!(rms(&y) <= 0.03 * rms(&x), "len {len}: {}", rms(&y) / rms(&x));
        }
    }

    fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
        (-max_lag..=max_lag)
            .max_by(|&l1, &l2| {
                let c = |l: i64| -> f64 {
                    (0..a.len() as i64)
                        .filter_map(|i| {
                            let j = i + l;
                            (j >= 0 && j < b.len() as i64).then(|| a[i as usize] * b[j as usize])
                        })
                        .sum()
                };
                c(l1).partial_cmp(&c(l2)).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn highpass_passes_10hz_without_lag() {
        let sos = design_highpass(&FilterSpec::default(), FS).unwrap();
        let x = sine(10.0, 4.0, 1.0);
        let y = filter_zero_phase(&x, &sos).unwrap();
        assert!((rms(&y) / rms(&x) - 1.0).abs() < 0.01);
        assert_eq!(xcorr_peak_lag(&x, &y, 6), 0);
    }

    #[test]
    fn dc_is_rejected() {
        let sos = design_highpass(&FilterSpec::default(), FS).unwrap();
        let x = vec![37.5; 500];
        let y = filter_zero_phase(&x, &sos).unwrap();
        let trim = FS as usize;
        let worst = y[trim..y.len() - trim].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-6 * 37.5, "{worst}");
    }

    #[test]
    fn short_signal_rejected() {
        let sos = design_highpass(&FilterSpec::default(), FS).unwrap();
        assert!(filter_zero_phase(&[1.0; 12], &sos).is_err());
        assert!(filter_zero_phase(&[1.0; 13], &sos).is_ok());
    }

    proptest! {
        #[test]
        fn zero_phase_filter_is_linear(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            x in proptest::collection::vec(-100.0f64..100.0, 64),
            y in proptest::collection::vec(-100.0f64..100.0, 64),
        ) {
            let sos = design_highpass(&FilterSpec::default(), FS).unwrap()
                .then(&design_notch(&FilterSpec::default(), FS).unwrap());
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = filter_zero_phase(&mix, &sos).unwrap();
            let fx = filter_zero_phase(&x, &sos).unwrap();
            let fy = filter_zero_phase(&y, &sos).unwrap();
            let scale = lhs.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for i in 0..lhs.len() {
                let rhs = a * fx[i] + b * fy[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}

//! Bad-channel detection (deviation, correlation, RANSAC) and iterative
//! robust average referencing.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::solve_small;
use crate::session::EegRecording;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BadChannelCriteria {
    pub deviation_z: f64,
    pub correlation_min: f64,
    pub correlation_window_s: f64,
    /// Fraction of correlation windows that may fall below `correlation_min`.
    pub correlation_bad_frac: f64,
    pub ransac_frac: f64,
    pub ransac_corr_min: f64,
    pub ransac_samples: usize,
    pub ransac_window_s: f64,
    /// Fraction of RANSAC windows that may fall below `ransac_corr_min`.
    pub ransac_bad_frac: f64,
    pub ransac_seed: u64,
}

impl Default for BadChannelCriteria {
    fn default() -> Self {
        BadChannelCriteria {
            deviation_z: 5.0,
            correlation_min: 0.4,
            correlation_window_s: 1.0,
            correlation_bad_frac: 0.01,
            ransac_frac: 0.25,
            ransac_corr_min: 0.75,
            ransac_samples: 50,
            ransac_window_s: 5.0,
            ransac_bad_frac: 0.4,
            ransac_seed: 0x5eed,
        }
    }
}

impl BadChannelCriteria {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        let ok = self.deviation_z > 0.0
            && unit(self.correlation_min)
            && unit(self.ransac_corr_min)
            && unit(self.ransac_frac)
            && unit(self.correlation_bad_frac)
            && unit(self.ransac_bad_frac)
            && self.correlation_window_s > 0.0
            && self.ransac_window_s > 0.0
            && self.ransac_samples > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bad-channel criteria {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BadReason {
    NonFinite,
    Flat,
    Deviation,
    Correlation,
    Ransac,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadChannel {
    pub name: String,
    pub reasons: Vec<BadReason>,
}

/// Channel index -> triggering criteria.
pub type BadSet = BTreeMap<usize, Vec<BadReason>>;

pub fn bad_indices(bad: &BadSet) -> BTreeSet<usize> {
    bad.keys().copied().collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Robust standard deviation: 0.7413 times the interquartile range.
fn robust_std(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    0.7413 * (quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

fn window_bounds(n: usize, len: usize) -> Vec<(usize, usize)> {
    let len = len.max(2);
    (0..n / len).map(|w| (w * len, (w + 1) * len)).collect()
}

/// Robust z-scores of per-channel amplitude (robust std) across `candidates`.
pub fn deviation_scores(rec: &EegRecording, candidates: &[usize]) -> Vec<(usize, f64)> {
    let amps: Vec<f64> = candidates.iter().map(|&c| robust_std(rec.channel(c))).collect();
    let mut tmp = amps.clone();
    let med = median(&mut tmp);
    let mut dev: Vec<f64> = amps.iter().map(|a| (a - med).abs()).collect();
    let mad = 1.4826 * median(&mut dev);
    candidates
        .iter()
        .zip(amps)
        .map(|(&c, a)| {
            let z = if mad > 0.0 {
                (a - med) / mad
            } else if a == med {
                0.0
            } else {
                f64::INFINITY
            };
            (c, z)
        })
        .collect()
}

/// Per channel, the fraction of windows in which its maximum absolute
/// correlation with any other candidate falls below `min_corr`.
pub fn low_correlation_fraction(
    rec: &EegRecording,
    candidates: &[usize],
    window: usize,
    min_corr: f64,
) -> Vec<(usize, f64)> {
    let bounds = window_bounds(rec.n_samples(), window);
    let k = candidates.len();
    let mut low = vec![0usize; k];
    for &(s, e) in &bounds {
        let mut maxc = vec![0.0f64; k];
        for a in 0..k {
            for b in a + 1..k {
                let r = pearson(&rec.channel(candidates[a])[s..e], &rec.channel(candidates[b])[s..e]).abs();
                maxc[a] = maxc[a].max(r);
                maxc[b] = maxc[b].max(r);
            }
        }
        for a in 0..k {
            if maxc[a] < min_corr {
                low[a] += 1;
            }
        }
    }
    let nw = bounds.len().max(1) as f64;
    candidates.iter().zip(low).map(|(&c, l)| (c, l as f64 / nw)).collect()
}

/// Per channel, the fraction of windows in which it correlates poorly with its
/// median prediction from random subsets of the other `predictors`. Each
/// subset predicts the channel by least squares over the whole recording.
pub fn ransac_bad_fraction(
    rec: &EegRecording,
    targets: &[usize],
    predictors: &[usize],
    criteria: &BadChannelCriteria,
) -> Vec<(usize, f64)> {
    let n = rec.n_samples();
    let window = (criteria.ransac_window_s * rec.sample_rate_hz()).round() as usize;
    let bounds = window_bounds(n, window);

    let centered: Vec<Vec<f64>> = rec
        .samples()
        .iter()
        .map(|row| {
            let m = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut involved: Vec<usize> = targets.iter().chain(predictors).copied().collect();
    involved.sort_unstable();
    involved.dedup();
    let c = rec.n_channels();
    let mut gram = vec![vec![0.0; c]; c];
    for (k, &i) in involved.iter().enumerate() {
        for &j in &involved[k..] {
            let g: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[i][j] = g;
            gram[j][i] = g;
        }
    }

    targets
        .par_iter()
        .map(|&t| {
            let pool: Vec<usize> = predictors.iter().copied().filter(|&p| p != t).collect();
            let subset = ((criteria.ransac_frac * pool.len() as f64).ceil() as usize)
                .clamp(1, pool.len());
            let mut rng = ChaCha8Rng::seed_from_u64(
                criteria.ransac_seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let preds: Vec<Vec<f64>> = (0..criteria.ransac_samples)
                .map(|_| {
                    let mut pick: Vec<usize> =
                        sample(&mut rng, pool.len(), subset).into_iter().map(|i| pool[i]).collect();
                    pick.sort_unstable();
                    let a: Vec<Vec<f64>> =
                        pick.iter().map(|&i| pick.iter().map(|&j| gram[i][j]).collect()).collect();
                    let b: Vec<f64> = pick.iter().map(|&i| gram[i][t]).collect();
                    let beta = solve_small(a, b);
                    let mut out = vec![0.0; n];
                    for (&i, bi) in pick.iter().zip(beta) {
                        for (o, x) in out.iter_mut().zip(&centered[i]) {
                            *o += bi * x;
                        }
                    }
                    out
                })
                .collect();
            let mut column = vec![0.0; preds.len()];
            let predicted: Vec<f64> = (0..n)
                .map(|s| {
                    for (c, p) in column.iter_mut().zip(&preds) {
                        *c = p[s];
                    }
                    median(&mut column)
                })
                .collect();
            let actual = &centered[t];
            let bad = bounds
                .iter()
                .filter(|&&(s, e)| pearson(&actual[s..e], &predicted[s..e]) < criteria.ransac_corr_min)
                .count();
            (t, bad as f64 / bounds.len().max(1) as f64)
        })
        .collect()
}

/// Flag channels by amplitude deviation, low correlation, or RANSAC
/// mispredictability. Channels in `exclude` are neither tested nor used as
/// references.
pub fn detect_bad_channels(
    rec: &EegRecording,
    criteria: &BadChannelCriteria,
    exclude: &BTreeSet<usize>,
) -> Result<BadSet> {
    let candidates: Vec<usize> = (0..rec.n_channels()).filter(|c| !exclude.contains(c)).collect();
    if candidates.len() < 4 {
        return Err(Error::Data(format!(
            "bad-channel detection needs at least 4 usable channels, have {}",
            candidates.len()
        )));
    }
    let mut bad = BadSet::new();
    let mut flag = |c: usize, r: BadReason| bad.entry(c).or_insert_with(Vec::new).push(r);

    let mut usable = Vec::new();
    for &c in &candidates {
        if rec.channel(c).iter().any(|v| !v.is_finite()) {
            flag(c, BadReason::NonFinite);
        } else {
            usable.push(c);
        }
    }
    if usable.len() < 4 {
        return Ok(bad);
    }

    let amps: Vec<f64> = usable.iter().map(|&c| robust_std(rec.channel(c))).collect();
    let mut tmp = amps.clone();
    let typical = median(&mut tmp);
    for (&c, &a) in usable.iter().zip(&amps) {
        if a <= 1e-9 * typical.max(1e-300) || a < 1e-12 {
            flag(c, BadReason::Flat);
        }
    }
    for (c, z) in deviation_scores(rec, &usable) {
        if z.abs() > criteria.deviation_z {
            flag(c, BadReason::Deviation);
        }
    }
    let corr_win = (criteria.correlation_window_s * rec.sample_rate_hz()).round() as usize;
    for (c, frac) in low_correlation_fraction(rec, &usable, corr_win, criteria.correlation_min) {
        if frac > criteria.correlation_bad_frac {
            flag(c, BadReason::Correlation);
        }
    }

    let predictors: Vec<usize> = usable.iter().copied().filter(|c| !bad.contains_key(c)).collect();
    if predictors.len() >= 4 {
        for (c, frac) in ransac_bad_fraction(rec, &usable, &predictors, criteria) {
            if frac > criteria.ransac_bad_frac {
                bad.entry(c).or_default().push(BadReason::Ransac);
            }
        }
    }
    Ok(bad)
}

pub fn named(rec: &EegRecording, bad: &BadSet) -> Vec<BadChannel> {
    bad.iter()
        .map(|(&c, r)| BadChannel {
            name: rec.channels()[c].name.clone(),
            reasons: r.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub stages: Vec<String>,
    /// Bad channels detected at each reference iteration (iteration 0 is the
    /// detection on the un-referenced input).
    pub bad_channels: Vec<Vec<BadChannel>>,
    pub reference_iterations: usize,
    /// Channels excluded from the final reference estimate.
    pub final_bad: Vec<String>,
    pub oscillation: bool,
    pub interpolated: Vec<String>,
}

fn subtract_reference(rec: &EegRecording, good: &[usize]) -> Result<EegRecording> {
    let n = rec.n_samples();
    let mut reference = vec![0.0; n];
    for &c in good {
        for (r, x) in reference.iter_mut().zip(rec.channel(c)) {
            *r += x;
        }
    }
    let inv = 1.0 / good.len() as f64;
    reference.iter_mut().for_each(|r| *r *= inv);
    let samples = rec
        .samples()
        .iter()
        .map(|row| row.iter().zip(&reference).map(|(x, r)| x - r).collect())
        .collect();
    rec.with_samples(samples)
}

/// Iteratively estimate the average reference over channels not flagged bad,
/// re-detecting on the re-referenced data until the bad set stabilises or
/// `max_iter` is reached. A repeated set ends the loop with the union of all
/// sets seen. Bad channels stay in the matrix for later interpolation.
pub fn robust_average_reference(
    rec: &EegRecording,
    criteria: &BadChannelCriteria,
    max_iter: usize,
) -> Result<(EegRecording, PreprocessReport)> {
    let none = BTreeSet::new();
    let mut bad = detect_bad_channels(rec, criteria, &none)?;
    let mut report = PreprocessReport {
        bad_channels: vec![named(rec, &bad)],
        ..Default::default()
    };
    let mut history: Vec<BTreeSet<usize>> = vec![bad_indices(&bad)];
    let good_of = |bad: &BadSet| -> Result<Vec<usize>> {
        let g: Vec<usize> = (0..rec.n_channels()).filter(|c| !bad.contains_key(c)).collect();
        if g.is_empty() {
            Err(Error::Data("all channels flagged bad".into()))
        } else {
            Ok(g)
        }
    };

    let mut referenced = subtract_reference(rec, &good_of(&bad)?)?;
    for it in 1..=max_iter.max(1) {
        report.reference_iterations = it;
        let next = detect_bad_channels(&referenced, criteria, &none)?;
        report.bad_channels.push(named(rec, &next));
        let next_idx = bad_indices(&next);
        if next_idx == bad_indices(&bad) {
            break;
        }
        if history.contains(&next_idx) {
            for (c, r) in next {
                bad.entry(c).or_default().extend(r);
            }
            for set in &history {
                for &c in set {
                    bad.entry(c).or_default();
                }
            }
            report.oscillation = true;
            referenced = subtract_reference(rec, &good_of(&bad)?)?;
            break;
        }
        history.push(next_idx);
        bad = next;
        referenced = subtract_reference(rec, &good_of(&bad)?)?;
    }
    report.final_bad = bad
        .keys()
        .map(|&c| rec.channels()[c].name.clone())
        .collect();
    Ok((referenced, report))
}

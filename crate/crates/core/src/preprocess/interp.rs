//! Inverse-distance-weighted channel interpolation on the unit sphere.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::session::{ChannelMeta, EegRecording};

pub const NEIGHBOURS: usize = 3;
pub const IDW_POWER: i32 = 2;

/// Weights `d_i^-p / sum_j d_j^-p` over the given donor channels, keyed by index.
/// A donor at zero distance takes all the weight.
pub fn idw_weights(target: &ChannelMeta, donors: &[(usize, &ChannelMeta)]) -> Vec<(usize, f64)> {
    let dists: Vec<(usize, f64)> = donors
        .iter()
        .map(|(i, m)| (*i, target.angular_distance(m)))
        .collect();
    if let Some(&(i, _)) = dists.iter().find(|(_, d)| *d == 0.0) {
        return vec![(i, 1.0)];
    }
    let raw: Vec<f64> = dists.iter().map(|(_, d)| d.powi(-IDW_POWER)).collect();
    let total: f64 = raw.iter().sum();
    dists
        .iter()
        .zip(raw)
        .map(|((i, _), w)| (*i, w / total))
        .collect()
}

/// The `k` good channels nearest to `target` (great-circle distance), ties by index.
pub fn nearest_good(
    channels: &[ChannelMeta],
    target: usize,
    bad: &BTreeSet<usize>,
    k: usize,
) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..channels.len())
        .filter(|i| *i != target && !bad.contains(i))
        .map(|i| (channels[target].angular_distance(&channels[i]), i))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Interpolation weights for every bad channel from its three nearest good neighbours.
pub fn interpolation_plan(
    channels: &[ChannelMeta],
    bad: &BTreeSet<usize>,
) -> Result<Vec<(usize, Vec<(usize, f64)>)>> {
    let n_good = channels.len() - bad.len();
    if n_good < NEIGHBOURS {
        return Err(Error::Data(format!(
            "interpolation needs at least {NEIGHBOURS} good channels, have {n_good}"
        )));
    }
    if 2 * bad.len() >= channels.len() {
        return Err(Error::Data(format!(
            "{} of {} channels are bad; interpolation requires fewer than half",
            bad.len(),
            channels.len()
        )));
    }
    Ok(bad
        .iter()
        .map(|&b| {
            let donors: Vec<(usize, &ChannelMeta)> = nearest_good(channels, b, bad, NEIGHBOURS)
                .into_iter()
                .map(|i| (i, &channels[i]))
                .collect();
            (b, idw_weights(&channels[b], &donors))
        })
        .collect())
}

/// Replace each bad channel by the IDW combination of its nearest good channels.
/// Good channels are returned unchanged.
pub fn interpolate_channels(rec: &EegRecording, bad: &BTreeSet<usize>) -> Result<EegRecording> {
    if let Some(&b) = bad.iter().find(|&&b| b >= rec.n_channels()) {
        return Err(Error::Data(format!("bad channel index {b} out of range")));
    }
    let plan = interpolation_plan(rec.channels(), bad)?;
    let mut samples = rec.samples().to_vec();
    for (b, weights) in plan {
        let row = &mut samples[b];
        row.iter_mut().for_each(|v| *v = 0.0);
        for (i, w) in weights {
            for (dst, src) in row.iter_mut().zip(rec.channel(i)) {
                *dst += w * src;
            }
        }
    }
    rec.with_samples(samples)
}

//! Uncertainty-aware candidate selection.
//!
//! K chains are drawn, each candidate is scored by its mean absolute
//! deviation from the all-K mean `μ`, the M most consistent are kept, and the
//! survivors are fused voxelwise with weights `exp(−β·U·d)` where `U` is their
//! population variance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rgs::{sample_chain, RgsConfig};
use crate::rng::{streams, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::volume::ImageVolume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UcsConfig {
    pub k: usize,
    pub m: usize,
    pub beta: f64,
    /// Candidate `k` samples from stream `base_seed ^ k`.
    pub base_seed: u64,
}

impl Default for UcsConfig {
    fn default() -> Self {
        UcsConfig {
            k: 8,
            m: 6,
            beta: 1.0,
            base_seed: 0,
        }
    }
}

impl UcsConfig {
    /// A single candidate passed through unchanged.
    pub fn single(base_seed: u64) -> Self {
        UcsConfig {
            k: 1,
            m: 1,
            beta: 1.0,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k", "need at least one candidate"));
        }
        if self.m == 0 || self.m > self.k {
            return Err(Error::param(
                "m",
                format!("must satisfy 1 <= m <= k = {}", self.k),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Generator for candidate `index`.
    pub fn candidate_rng(&self, index: usize) -> SeededRng {
        SeededRng::new(self.base_seed ^ index as u64, streams::CHAIN)
    }
}

/// Everything computed on the way to the fused output.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub candidates: Vec<ImageVolume>,
    pub mean: ImageVolume,
    pub deviations: Vec<ImageVolume>,
    pub scores: Vec<f64>,
    /// Ascending candidate indices.
    pub retained: Vec<usize>,
    pub variance: ImageVolume,
    /// One per retained candidate, in `retained` order.
    pub weights: Vec<ImageVolume>,
}

/// Runs `k` independent chains, concurrently.
pub fn generate_candidates(
    x: &ImageVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rgs_cfg: &RgsConfig,
    ucs_cfg: &UcsConfig,
) -> Result<Vec<ImageVolume>> {
    ucs_cfg.validate()?;
    (0..ucs_cfg.k)
        .into_par_iter()
        .map(|index| {
            sample_chain(
                x,
                denoiser,
                schedule,
                rgs_cfg,
                &mut ucs_cfg.candidate_rng(index),
            )
            .map_err(|e| Error::Candidate {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

fn check_candidates(candidates: &[ImageVolume]) -> Result<()> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::param("candidates", "list is empty"))?;
    candidates.iter().try_for_each(|c| first.same_shape(c))
}

/// `μ`, per-voxel `|ŷ^(k) − μ|` and each candidate's spatial mean deviation.
pub fn deviation_scores(
    candidates: &[ImageVolume],
) -> Result<(ImageVolume, Vec<ImageVolume>, Vec<f64>)> {
    check_candidates(candidates)?;
    let k = candidates.len() as f64;
    let shape = candidates[0].shape().to_vec();
    let len = candidates[0].len();
    let (mut sum, mut lo, mut hi) = (
        vec![0.0; len],
        vec![f64::INFINITY; len],
        vec![f64::NEG_INFINITY; len],
    );
    for c in candidates {
        for (i, &v) in c.data().iter().enumerate() {
            sum[i] += v;
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    // the clamp only bites on rounding, and makes agreeing voxels exact
    let mean = (0..len).map(|i| (sum[i] / k).clamp(lo[i], hi[i])).collect();
    let mean = ImageVolume::from_parts(shape, mean);
    let deviations: Vec<ImageVolume> = candidates
        .iter()
        .map(|c| c.zip_map(&mean, |a, m| (a - m).abs()))
        .collect::<Result<_>>()?;
    let scores = deviations.iter().map(ImageVolume::mean).collect();
    Ok((mean, deviations, scores))
}

/// Indices of the `m` smallest scores, ascending; ties go to the lower index.
pub fn filter_top_m(scores: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > scores.len() {
        return Err(Error::param(
            "m",
            format!("must satisfy 1 <= m <= {}", scores.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("scores", "contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut kept = order[..m].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Per-voxel population variance (divisor M).
pub fn variance_map(retained: &[&ImageVolume]) -> Result<ImageVolume> {
    let first = retained
        .first()
        .ok_or_else(|| Error::param("retained", "list is empty"))?;
    let n = retained.len() as f64;
    let len = first.len();
    let mut mean = vec![0.0; len];
    for c in retained {
        first.same_shape(c)?;
        for (m, v) in mean.iter_mut().zip(c.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for c in retained {
        for ((s, v), m) in var.iter_mut().zip(c.data()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    Ok(ImageVolume::from_parts(
        first.shape().to_vec(),
        var.into_iter().map(|s| s / n).collect(),
    ))
}

/// Weighted fusion of the retained candidates. Returns the output and the
/// weight maps `exp(−β·U·d)`.
///
/// The quotient is evaluated with every exponent shifted by the voxel's
/// smallest `β·U·d`, which leaves it unchanged but keeps the denominator
/// at least 1 when the raw weights underflow. It is then clamped to the
/// retained candidates' voxel range so rounding can never leave the convex
/// hull; where all retained candidates agree the output is that value
/// exactly.
pub fn aggregate(
    retained: &[&ImageVolume],
    deviations: &[&ImageVolume],
    variance: &ImageVolume,
    beta: f64,
) -> Result<(ImageVolume, Vec<ImageVolume>)> {
    if retained.is_empty() || retained.len() != deviations.len() {
        return Err(Error::param(
            "retained",
            "need one deviation map per retained candidate",
        ));
    }
    if !(beta >= 0.0) {
        return Err(Error::param("beta", "must be >= 0"));
    }
    for (c, d) in retained.iter().zip(deviations) {
        variance.same_shape(c)?;
        variance.same_shape(d)?;
    }
    let weights: Vec<ImageVolume> = deviations
        .iter()
        .map(|d| d.zip_map(variance, |dv, u| (-beta * u * dv).exp()))
        .collect::<Result<_>>()?;
    let out = (0..variance.len())
        .map(|i| {
            let u = variance.data()[i];
            let shift = deviations
                .iter()
                .map(|d| d.data()[i])
                .fold(f64::INFINITY, f64::min);
            let (mut num, mut den) = (0.0, 0.0);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (c, d) in retained.iter().zip(deviations) {
                let v = c.data()[i];
                let wv = (-beta * u * (d.data()[i] - shift)).exp();
                num += wv * v;
                den += wv;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (num / den).clamp(lo, hi)
        })
        .collect();
    Ok((
        ImageVolume::from_parts(variance.shape().to_vec(), out),
        weights,
    ))
}

/// Deviation scoring, filtering, variance and fusion on given candidates.
pub fn select_and_aggregate(
    candidates: Vec<ImageVolume>,
    m: usize,
    beta: f64,
) -> Result<(ImageVolume, CandidateSet)> {
    let (mean, deviations, scores) = deviation_scores(&candidates)?;
    let retained = filter_top_m(&scores, m)?;
    let kept: Vec<&ImageVolume> = retained.iter().map(|&i| &candidates[i]).collect();
    let kept_dev: Vec<&ImageVolume> = retained.iter().map(|&i| &deviations[i]).collect();
    let variance = variance_map(&kept)?;
    let (output, weights) = aggregate(&kept, &kept_dev, &variance, beta)?;
    Ok((
        output,
        CandidateSet {
            candidates,
            mean,
            deviations,
            scores,
            retained,
            variance,
            weights,
        },
    ))
}

/// Full candidate generation plus selection.
pub fn ucs_pipeline(
    x: &ImageVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rgs_cfg: &RgsConfig,
    ucs_cfg: &UcsConfig,
) -> Result<(ImageVolume, CandidateSet)> {
    let candidates = generate_candidates(x, denoiser, schedule, rgs_cfg, ucs_cfg)?;
    select_and_aggregate(candidates, ucs_cfg.m, ucs_cfg.beta)
}

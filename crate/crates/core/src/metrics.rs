//! PSNR, SSIM and a high-frequency artifact score.
//!
//! SSIM follows the reference-implementation constants: an 11×11 Gaussian
//! window with σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, averaged over valid window
//! positions only (no padding). 3D volumes are scored slice by slice along
//! the last axis.

use std::fmt;

use crate::degradation::gaussian_blur;
use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const HF_SIGMA: f64 = 1.5;

/// Peak signal-to-noise ratio in dB; `+∞` for identical inputs.
pub fn psnr(a: &ImageVolume, b: &ImageVolume, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::param("peak", "must be > 0"));
    }
    a.same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Peak to use for a pair: the reference's range hint span, else 1.
pub fn default_peak(reference: &ImageVolume) -> f64 {
    match reference.range_hint() {
        Some((lo, hi)) if hi > lo => hi - lo,
        _ => 1.0,
    }
}

fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Valid-mode separable correlation: `(h-10) × (w-10)` output.
fn valid_filter(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let line = &img[r * w..(r + 1) * w];
        for j in 0..ow {
            rows[r * ow + j] = taps.iter().zip(&line[j..j + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (a, t) in taps.iter().enumerate() {
                acc += t * rows[(i + a) * ow + j];
            }
            out[i * ow + j] = acc;
        }
    }
    out
}

/// Adjoint of [`valid_filter`]: scatters an `(h-10) × (w-10)` map back to
/// `h × w`.
fn valid_filter_adjoint(map: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut cols = vec![0.0; h * ow];
    for i in 0..oh {
        for (a, t) in taps.iter().enumerate() {
            for j in 0..ow {
                cols[(i + a) * ow + j] += t * map[i * ow + j];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for j in 0..ow {
            let v = cols[r * ow + j];
            for (b, t) in taps.iter().enumerate() {
                out[r * w + j + b] += t * v;
            }
        }
    }
    out
}

/// Local statistics of one image pair over every valid window.
struct SsimMaps {
    mean_a: Vec<f64>,
    mean_b: Vec<f64>,
    /// Per-window SSIM, plus the numerator/denominator factors needed for
    /// the gradient.
    ssim: Vec<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn ssim_maps(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> SsimMaps {
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mean_a = valid_filter(a, h, w, &taps);
    let mean_b = valid_filter(b, h, w, &taps);
    let m_aa = valid_filter(&aa, h, w, &taps);
    let m_bb = valid_filter(&bb, h, w, &taps);
    let m_ab = valid_filter(&ab, h, w, &taps);
    let n = mean_a.len();
    let (mut ssim, mut n1, mut n2, mut d1, mut d2) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let (ma, mb) = (mean_a[i], mean_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let p1 = 2.0 * ma * mb + c1;
        let p2 = 2.0 * cov + c2;
        let q1 = ma * ma + mb * mb + c1;
        let q2 = var_a + var_b + c2;
        ssim.push((p1 * p2) / (q1 * q2));
        n1.push(p1);
        n2.push(p2);
        d1.push(q1);
        d2.push(q2);
    }
    SsimMaps {
        mean_a,
        mean_b,
        ssim,
        n1,
        n2,
        d1,
        d2,
    }
}

fn check_ssim_inputs(a: &ImageVolume, b: &ImageVolume, peak: f64) -> Result<()> {
    if !(peak > 0.0) {
        return Err(Error::param("peak", "must be > 0"));
    }
    a.same_shape(b)?;
    let s = a.shape();
    if s.len() < 2 || s[0] < SSIM_WINDOW || s[1] < SSIM_WINDOW {
        return Err(Error::param(
            "shape",
            format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} slices, got {s:?}"),
        ));
    }
    Ok(())
}

fn slices(v: &ImageVolume) -> Vec<Vec<f64>> {
    match v.shape() {
        [_, _] => vec![v.data().to_vec()],
        &[h, w, d] => (0..d)
            .map(|k| (0..h * w).map(|i| v.data()[i * d + k]).collect())
            .collect(),
        _ => unreachable!("checked by check_ssim_inputs"),
    }
}

/// Mean SSIM over valid windows.
pub fn ssim(a: &ImageVolume, b: &ImageVolume, peak: f64) -> Result<f64> {
    check_ssim_inputs(a, b, peak)?;
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let (sa, sb) = (slices(a), slices(b));
    let mut total = 0.0;
    for (x, y) in sa.iter().zip(&sb) {
        let maps = ssim_maps(x, y, h, w, peak);
        total += maps.ssim.iter().sum::<f64>() / maps.ssim.len() as f64;
    }
    Ok(total / sa.len() as f64)
}

/// SSIM of a 2D pair together with its gradient with respect to `a`.
pub fn ssim_with_grad(a: &ImageVolume, b: &ImageVolume, peak: f64) -> Result<(f64, ImageVolume)> {
    check_ssim_inputs(a, b, peak)?;
    let (h, w) = a.dims_2d()?;
    let maps = ssim_maps(a.data(), b.data(), h, w, peak);
    let n = maps.ssim.len();
    let value = maps.ssim.iter().sum::<f64>() / n as f64;

    // Partial derivatives of each window's SSIM with respect to the raw
    // moments E[a], E[a²] and E[ab], already divided by the window count.
    let inv_n = 1.0 / n as f64;
    let mut g_mean = Vec::with_capacity(n);
    let mut g_sq = Vec::with_capacity(n);
    let mut g_cross = Vec::with_capacity(n);
    for i in 0..n {
        let (ma, mb) = (maps.mean_a[i], maps.mean_b[i]);
        let (p1, p2, q1, q2) = (maps.n1[i], maps.n2[i], maps.d1[i], maps.d2[i]);
        let den = q1 * q2;
        let s = maps.ssim[i];
        let dnum = 2.0 * mb * (p2 - p1);
        let dden = 2.0 * ma * (q2 - q1);
        g_mean.push(inv_n * (dnum - s * dden) / den);
        g_sq.push(inv_n * (-s * q1 / den));
        g_cross.push(inv_n * (2.0 * p1 / den));
    }
    let taps = ssim_taps();
    let t_mean = valid_filter_adjoint(&g_mean, h, w, &taps);
    let t_sq = valid_filter_adjoint(&g_sq, h, w, &taps);
    let t_cross = valid_filter_adjoint(&g_cross, h, w, &taps);
    let grad = (0..h * w)
        .map(|p| t_mean[p] + 2.0 * a.data()[p] * t_sq[p] + b.data()[p] * t_cross[p])
        .collect();
    Ok((value, ImageVolume::from_parts(vec![h, w], grad)))
}

fn highpass(v: &ImageVolume) -> Result<ImageVolume> {
    let low = gaussian_blur(v, HF_SIGMA)?;
    v.zip_map(&low, |a, b| a - b)
}

/// `‖hp(pred) − hp(ref)‖₂ / ‖hp(ref)‖₂` with `hp = I − blur(σ = 1.5)`.
///
/// Zero for identical images; grows with high-frequency content in `pred`
/// that `reference` does not have.
pub fn hf_artifact_score(pred: &ImageVolume, reference: &ImageVolume) -> Result<f64> {
    pred.same_shape(reference)?;
    let hp_ref = highpass(reference)?;
    let denom = hp_ref.l2_norm();
    if denom <= 1e-12 * reference.l2_norm().max(1.0) {
        return Err(Error::UndefinedMetric(
            "reference has no high-frequency energy",
        ));
    }
    let hp_pred = highpass(pred)?;
    Ok(hp_pred.zip_map(&hp_ref, |a, b| a - b)?.l2_norm() / denom)
}

/// One evaluated (prediction, reference) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub contrast: String,
    pub case_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub hf_artifact: f64,
}

impl MetricsReport {
    pub fn evaluate(
        pred: &ImageVolume,
        reference: &ImageVolume,
        method: impl Into<String>,
        contrast: impl Into<String>,
        case_id: impl Into<String>,
    ) -> Result<Self> {
        let peak = default_peak(reference);
        Ok(MetricsReport {
            method: method.into(),
            contrast: contrast.into(),
            case_id: case_id.into(),
            psnr_db: psnr(pred, reference, peak)?,
            ssim: ssim(pred, reference, peak)?,
            hf_artifact: hf_artifact_score(pred, reference)?,
        })
    }

    pub const CSV_HEADER: [&'static str; 7] = [
        "method",
        "contrast",
        "case_id",
        "psnr_db",
        "ssim",
        "hf_artifact",
        "lpips",
    ];

    /// CSV fields; LPIPS is not computed and stays empty.
    pub fn csv_record(&self) -> [String; 7] {
        [
            self.method.clone(),
            self.contrast.clone(),
            self.case_id.clone(),
            format_metric(self.psnr_db),
            format_metric(self.ssim),
            format_metric(self.hf_artifact),
            String::new(),
        ]
    }
}

/// Shortest round-trip representation; `+∞` is written as `inf`.
pub fn format_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: PSNR {:.3} dB, SSIM {:.4}, HF {:.4}",
            self.method, self.contrast, self.case_id, self.psnr_db, self.ssim, self.hf_artifact
        )
    }
}

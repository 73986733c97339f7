//! Reliability-guided ancestral sampling.
//!
//! The sensitivity `S = E_δ |ε̂(y_t + δ) − ε̂(y_t)|`, `δ ~ N(0, σ_p² I)`, is
//! estimated by Monte Carlo and mapped to a reliability `R = exp(−γS)`. The
//! reverse step damps only the predicted-noise term:
//!
//! ```text
//! y_{t−1} = (y_t − (1−α_t)/√(1−ᾱ_t) · (R ⊙ ε̂)) / √α_t + σ_t z
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::volume::{gaussian_volume, ImageVolume};

/// Probe standard deviation σ_p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeScale {
    Absolute(f64),
    /// `fraction · std(y_t)`, re-evaluated at every probe.
    Adaptive(f64),
}

impl ProbeScale {
    pub fn resolve(&self, y_t: &ImageVolume) -> f64 {
        match *self {
            ProbeScale::Absolute(s) => s,
            ProbeScale::Adaptive(f) => f * y_t.std(),
        }
    }
}

impl Default for ProbeScale {
    fn default() -> Self {
        ProbeScale::Adaptive(0.1)
    }
}

impl fmt::Display for ProbeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeScale::Absolute(s) => write!(f, "{s}"),
            ProbeScale::Adaptive(frac) if *frac == 0.1 => write!(f, "adaptive"),
            ProbeScale::Adaptive(frac) => write!(f, "adaptive:{frac}"),
        }
    }
}

impl FromStr for ProbeScale {
    type Err = Error;

    /// `"adaptive"`, `"adaptive:<fraction>"` or an absolute number.
    fn from_str(s: &str) -> Result<Self> {
        let parsed = if s == "adaptive" {
            ProbeScale::Adaptive(0.1)
        } else if let Some(frac) = s.strip_prefix("adaptive:") {
            ProbeScale::Adaptive(
                frac.parse()
                    .map_err(|_| Error::param("probe_std", format!("bad fraction `{frac}`")))?,
            )
        } else {
            ProbeScale::Absolute(s.parse().map_err(|_| {
                Error::param(
                    "probe_std",
                    format!("expected a number or `adaptive`, got `{s}`"),
                )
            })?)
        };
        match parsed {
            ProbeScale::Absolute(v) | ProbeScale::Adaptive(v) if !(v > 0.0 && v.is_finite()) => {
                Err(Error::param("probe_std", "must be > 0"))
            }
            p => Ok(p),
        }
    }
}

impl Serialize for ProbeScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ProbeScale::Absolute(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for ProbeScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => ProbeScale::from_str(&v.to_string()),
            Raw::Text(s) => ProbeScale::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// How probe perturbations are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSampling {
    /// Independent draws per probe.
    Iid,
    /// Per voxel, the probes' normal quantiles are stratified over `n`
    /// equal-probability bins in random order. Each probe is still marginally
    /// `N(0, σ_p² I)`; the per-voxel estimate has far lower variance.
    #[default]
    LatinHypercube,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgsConfig {
    /// Attenuation strength γ; 0 disables guidance.
    pub gamma: f64,
    pub probe_std: ProbeScale,
    pub n_probes: usize,
    /// Recompute the reliability map every this many steps.
    pub probe_every: usize,
    pub probe_sampling: ProbeSampling,
    pub rng_stream: u64,
}

impl Default for RgsConfig {
    fn default() -> Self {
        RgsConfig {
            gamma: 1.0,
            probe_std: ProbeScale::default(),
            n_probes: 8,
            probe_every: 50,
            probe_sampling: ProbeSampling::default(),
            rng_stream: 0,
        }
    }
}

impl RgsConfig {
    /// Plain ancestral sampling.
    pub fn disabled() -> Self {
        RgsConfig {
            gamma: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", "must be finite and >= 0"));
        }
        if self.n_probes == 0 {
            return Err(Error::param("n_probes", "need at least one probe"));
        }
        if self.probe_every == 0 {
            return Err(Error::param("probe_every", "must be >= 1"));
        }
        match self.probe_std {
            ProbeScale::Absolute(v) | ProbeScale::Adaptive(v) if !(v > 0.0 && v.is_finite()) => {
                Err(Error::param("probe_std", "must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityMap {
    pub sensitivity: ImageVolume,
    pub reliability: ImageVolume,
    pub computed_at_t: usize,
}

/// `n_probes` perturbation volumes of standard normal draws.
fn probe_draws(
    shape: &[usize],
    n: usize,
    sampling: ProbeSampling,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<f64>>> {
    let len: usize = shape.iter().product();
    match sampling {
        ProbeSampling::Iid => (0..n)
            .map(|_| gaussian_volume(shape, rng, 0.0, 1.0).map(|v| v.into_data()))
            .collect(),
        ProbeSampling::LatinHypercube => {
            let normal = Normal::standard();
            let mut draws = vec![vec![0.0; len]; n];
            let mut strata: Vec<usize> = (0..n).collect();
            #[allow(clippy::needless_range_loop)]
            for v in 0..len {
                rng.shuffle(&mut strata);
                for (k, &bin) in strata.iter().enumerate() {
                    // keep u strictly inside (0, 1)
                    let u =
                        ((bin as f64 + rng.uniform()) / n as f64).clamp(1e-300, 1.0 - f64::EPSILON);
                    draws[k][v] = normal.inverse_cdf(u);
                }
            }
            Ok(draws)
        }
    }
}

/// Monte-Carlo estimate of the per-voxel sensitivity of `denoiser` at `y_t`.
pub fn estimate_sensitivity(
    denoiser: &dyn Denoiser,
    y_t: &ImageVolume,
    x: &ImageVolume,
    t: usize,
    schedule: &NoiseSchedule,
    cfg: &RgsConfig,
    rng: &mut SeededRng,
) -> Result<ImageVolume> {
    cfg.validate()?;
    let sigma_p = cfg.probe_std.resolve(y_t);
    let base = denoiser.predict(y_t, x, t, schedule)?;
    let mut acc = vec![0.0; y_t.len()];
    if sigma_p > 0.0 {
        for delta in probe_draws(y_t.shape(), cfg.n_probes, cfg.probe_sampling, rng)? {
            let data = y_t
                .data()
                .iter()
                .zip(&delta)
                .map(|(y, d)| y + sigma_p * d)
                .collect();
            let perturbed = ImageVolume::from_parts(y_t.shape().to_vec(), data);
            let pred = denoiser.predict(&perturbed, x, t, schedule)?;
            for ((a, p), b) in acc.iter_mut().zip(pred.data()).zip(base.data()) {
                *a += (p - b).abs();
            }
        }
    }
    let n = cfg.n_probes as f64;
    Ok(ImageVolume::from_parts(
        y_t.shape().to_vec(),
        acc.into_iter().map(|a| a / n).collect(),
    ))
}

/// `R = exp(−γ·S)` voxelwise.
pub fn reliability_from_sensitivity(sensitivity: &ImageVolume, gamma: f64) -> Result<ImageVolume> {
    if !(gamma >= 0.0) {
        return Err(Error::param("gamma", "must be >= 0"));
    }
    if sensitivity.data().iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::param("sensitivity", "must be >= 0 everywhere"));
    }
    Ok(sensitivity.map(|s| (-gamma * s).exp()))
}

pub fn reliability_map(
    denoiser: &dyn Denoiser,
    y_t: &ImageVolume,
    x: &ImageVolume,
    t: usize,
    schedule: &NoiseSchedule,
    cfg: &RgsConfig,
    rng: &mut SeededRng,
) -> Result<ReliabilityMap> {
    let sensitivity = estimate_sensitivity(denoiser, y_t, x, t, schedule, cfg, rng)?;
    let reliability = reliability_from_sensitivity(&sensitivity, cfg.gamma)?;
    Ok(ReliabilityMap {
        sensitivity,
        reliability,
        computed_at_t: t,
    })
}

/// Reverse-step noise `σ_t z`; the generator is untouched when σ_t = 0.
fn step_noise(shape: &[usize], sigma: f64, rng: &mut SeededRng) -> Result<Option<ImageVolume>> {
    if sigma == 0.0 {
        return Ok(None);
    }
    gaussian_volume(shape, rng, 0.0, 1.0).map(Some)
}

fn finish_step(
    mut data: Vec<f64>,
    shape: &[usize],
    sigma: f64,
    z: Option<ImageVolume>,
    t: usize,
) -> Result<ImageVolume> {
    if let Some(z) = z {
        for (d, zv) in data.iter_mut().zip(z.data()) {
            *d += sigma * zv;
        }
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t, index });
    }
    Ok(ImageVolume::from_parts(shape.to_vec(), data))
}

/// Standard DDPM reverse step, `y_t → y_{t−1}`.
pub fn ddpm_reverse_step(
    y_t: &ImageVolume,
    x: &ImageVolume,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<ImageVolume> {
    schedule.check_t(t)?;
    let eps = denoiser.predict(y_t, x, t, schedule)?;
    y_t.same_shape(&eps)?;
    let coef = (1.0 - schedule.alpha(t)) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sqrt_alpha = schedule.alpha(t).sqrt();
    let data = y_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(y, e)| (y - coef * e) / sqrt_alpha)
        .collect();
    let sigma = schedule.sigma(t);
    let z = step_noise(y_t.shape(), sigma, rng)?;
    finish_step(data, y_t.shape(), sigma, z, t)
}

/// Reliability-modulated reverse step. With `R ≡ 1` this is bit-identical to
/// [`ddpm_reverse_step`] for the same generator state.
pub fn rgs_reverse_step(
    y_t: &ImageVolume,
    x: &ImageVolume,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    reliability: &ImageVolume,
    rng: &mut SeededRng,
) -> Result<ImageVolume> {
    schedule.check_t(t)?;
    y_t.same_shape(reliability)?;
    let eps = denoiser.predict(y_t, x, t, schedule)?;
    y_t.same_shape(&eps)?;
    let coef = (1.0 - schedule.alpha(t)) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sqrt_alpha = schedule.alpha(t).sqrt();
    let data = y_t
        .data()
        .iter()
        .zip(eps.data())
        .zip(reliability.data())
        .map(|((y, e), r)| (y - coef * (r * e)) / sqrt_alpha)
        .collect();
    let sigma = schedule.sigma(t);
    let z = step_noise(y_t.shape(), sigma, rng)?;
    finish_step(data, y_t.shape(), sigma, z, t)
}

/// Plain ancestral sampling from `y_T ~ N(0, I)`. `rng` drives both the
/// initial draw and every step's noise.
pub fn ddpm_sample_chain(
    x: &ImageVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<ImageVolume> {
    let mut y = gaussian_volume(x.shape(), rng, 0.0, 1.0)?;
    for t in (1..=schedule.steps()).rev() {
        y = ddpm_reverse_step(&y, x, t, denoiser, schedule, rng)?;
    }
    Ok(y)
}

/// Final sample together with the last reliability map computed, if any.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub sample: ImageVolume,
    pub last_reliability: Option<ReliabilityMap>,
}

/// Reliability-guided ancestral sampling.
///
/// Chain noise comes from `rng`; probes come from a stream forked off it, so
/// probe settings never shift the chain's noise sequence. The reliability map
/// is recomputed at `t = T` and every `probe_every` steps after. With
/// `gamma = 0` no probes run and the result is bit-identical to
/// [`ddpm_sample_chain`] with the same generator.
pub fn sample_chain(
    x: &ImageVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &RgsConfig,
    rng: &mut SeededRng,
) -> Result<ImageVolume> {
    sample_chain_traced(x, denoiser, schedule, cfg, rng).map(|o| o.sample)
}

pub fn sample_chain_traced(
    x: &ImageVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &RgsConfig,
    rng: &mut SeededRng,
) -> Result<ChainOutput> {
    cfg.validate()?;
    if x.first_non_finite().is_some() {
        return Err(Error::param("x", "conditioning image must be finite"));
    }
    let mut probe_rng = rng.fork(streams::PROBE ^ cfg.rng_stream);
    let steps = schedule.steps();
    let mut y = gaussian_volume(x.shape(), rng, 0.0, 1.0)?;
    let ones = ImageVolume::ones(x.shape().to_vec())?;
    let mut current: Option<ReliabilityMap> = None;
    for t in (1..=steps).rev() {
        if cfg.gamma > 0.0 && (steps - t).is_multiple_of(cfg.probe_every) {
            current = Some(reliability_map(
                denoiser,
                &y,
                x,
                t,
                schedule,
                cfg,
                &mut probe_rng,
            )?);
        }
        let r = current.as_ref().map_or(&ones, |m| &m.reliability);
        y = rgs_reverse_step(&y, x, t, denoiser, schedule, r, rng)?;
    }
    Ok(ChainOutput {
        sample: y,
        last_reliability: current,
    })
}

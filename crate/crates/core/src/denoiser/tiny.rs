//! A small learned noise predictor.
//!
//! One hidden-layer tanh network, shared across voxels, reads a `(2r+1)²`
//! patch of `y_t`, the same patch of the conditioning image `x`, and a
//! four-value timestep embedding. Training minimizes
//! `λ1·mean|ŷ0 − y0| + λ2·(1 − SSIM(ŷ0, y0))` on the clean-image estimate
//! `ŷ0` implied by the predicted noise, with Adam.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degradation::reflect;
use crate::error::{Error, Result};
use crate::io::{read_params, write_params};
use crate::metrics::ssim_with_grad;
use crate::rng::{streams, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::volume::{gaussian_volume, ImageVolume};

use super::Denoiser;

const TIME_FEATURES: usize = 4;

/// What the network's scalar output represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    /// Output is ε̂ directly.
    Epsilon,
    /// Output is a residual on the conditioning image, `ŷ0 = x + out`;
    /// ε̂ follows from the forward-marginal identity.
    Sample,
    /// `ŷ0 = m_t + c_t·out`, where `m_t` is the posterior mean of `y0` under
    /// the prior `N(x, v)` given `y_t` and `c_t` is that posterior's standard
    /// deviation. The network only learns a correction to the Gaussian
    /// estimate, at unit scale for every `t`.
    Preconditioned,
}

impl Parametrization {
    fn code(self) -> f64 {
        match self {
            Parametrization::Epsilon => 0.0,
            Parametrization::Sample => 1.0,
            Parametrization::Preconditioned => 2.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c {
            0.0 => Ok(Parametrization::Epsilon),
            1.0 => Ok(Parametrization::Sample),
            2.0 => Ok(Parametrization::Preconditioned),
            _ => Err(Error::Format(format!("unknown parametrization code {c}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyConfig {
    /// Patch radius; the patch is `(2r+1)²` voxels.
    pub radius: usize,
    pub hidden: usize,
    pub parametrization: Parametrization,
    /// Prior variance `v` of `y0` around `x` for [`Parametrization::Preconditioned`].
    pub prior_var: f64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig {
            radius: 1,
            hidden: 16,
            parametrization: Parametrization::Preconditioned,
            prior_var: 0.001,
        }
    }
}

impl TinyConfig {
    fn patch_len(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    fn input_len(&self) -> usize {
        2 * self.patch_len() + TIME_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::param("hidden", "need at least one hidden unit"));
        }
        if !(self.prior_var > 0.0 && self.prior_var.is_finite()) {
            return Err(Error::param("prior_var", "must be > 0"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input_len() + 2 * self.hidden + 1
    }
}

/// λ1 (L1) and λ2 (1 − SSIM) weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingOptions {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Fixed `(pair, t, ε)` draws used to report per-epoch loss.
    pub eval_samples: usize,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            epochs: 20,
            iterations_per_epoch: 200,
            batch_size: 4,
            lr: 2e-3,
            weights: LossWeights::default(),
            seed: 17,
            eval_samples: 32,
        }
    }
}

/// Conditioning image and its clean target.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub x: ImageVolume,
    pub y0: ImageVolume,
}

/// One fully specified training draw: `y_t = √ᾱ_t·y0 + √(1−ᾱ_t)·eps`.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub x: ImageVolume,
    pub y0: ImageVolume,
    pub t: usize,
    pub eps: ImageVolume,
}

impl TrainingSample {
    pub fn draw(
        pair: &TrainingPair,
        schedule: &NoiseSchedule,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let t = 1 + rng.below(schedule.steps());
        let eps = gaussian_volume(pair.y0.shape(), rng, 0.0, 1.0)?;
        Ok(TrainingSample {
            x: pair.x.clone(),
            y0: pair.y0.clone(),
            t,
            eps,
        })
    }

    fn noisy(&self, schedule: &NoiseSchedule) -> Result<ImageVolume> {
        let ab = schedule.alpha_bar(self.t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        self.y0.zip_map(&self.eps, |y, e| a * y + s * e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    /// Evaluation loss before training (index 0) and after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Evaluation loss of the predictor that always returns ε̂ = 0.
    pub zero_predictor_loss: f64,
}

impl TrainingReport {
    pub fn relative_decrease(&self) -> f64 {
        let first = self.epoch_losses[0];
        let last = *self.epoch_losses.last().unwrap();
        (first - last) / first
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyDenoiser {
    cfg: TinyConfig,
    params: Vec<f64>,
}

/// Per-voxel activations kept for the backward pass.
struct Forward {
    features: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn time_features(t: usize, schedule: &NoiseSchedule) -> [f64; TIME_FEATURES] {
    let ab = schedule.alpha_bar(t);
    let phase = std::f64::consts::PI * t as f64 / schedule.steps() as f64;
    [ab.sqrt(), (1.0 - ab).sqrt(), phase.sin(), phase.cos()]
}

impl TinyDenoiser {
    pub const ID: &'static str = "tiny";

    /// Random initialization; the output layer starts at zero.
    pub fn new(cfg: TinyConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let n_in = cfg.input_len();
        let bound = (3.0 / n_in as f64).sqrt();
        let mut params = vec![0.0; cfg.param_count()];
        for w in &mut params[..cfg.hidden * n_in] {
            *w = rng.uniform_range(-bound, bound);
        }
        let w2 = cfg.hidden * n_in + cfg.hidden;
        let out_bound = 0.1 / (cfg.hidden as f64).sqrt();
        for w in &mut params[w2..w2 + cfg.hidden] {
            *w = rng.uniform_range(-out_bound, out_bound);
        }
        Ok(TinyDenoiser { cfg, params })
    }

    pub fn from_params(cfg: TinyConfig, params: Vec<f64>) -> Result<Self> {
        if params.len() != cfg.param_count() {
            return Err(Error::param(
                "params",
                format!(
                    "expected {} values, got {}",
                    cfg.param_count(),
                    params.len()
                ),
            ));
        }
        Ok(TinyDenoiser { cfg, params })
    }

    pub fn config(&self) -> &TinyConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let n_in = self.cfg.input_len();
        let h = self.cfg.hidden;
        let (w1, rest) = self.params.split_at(h * n_in);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        (w1, b1, w2, rest[0])
    }

    fn forward(
        &self,
        y_t: &ImageVolume,
        x: &ImageVolume,
        t: usize,
        schedule: &NoiseSchedule,
        keep: bool,
    ) -> Result<Forward> {
        let (rows, cols) = y_t.dims_2d()?;
        y_t.same_shape(x)?;
        schedule.check_t(t)?;
        let r = self.cfg.radius as i64;
        let n_in = self.cfg.input_len();
        let patch = self.cfg.patch_len();
        let hdim = self.cfg.hidden;
        let (w1, b1, w2, b2) = self.split();

        // Timestep features contribute the same pre-activation offset to
        // every voxel.
        let tf = time_features(t, schedule);
        let mut offset = b1.to_vec();
        for (j, o) in offset.iter_mut().enumerate() {
            let row = &w1[j * n_in + 2 * patch..(j + 1) * n_in];
            *o += row.iter().zip(&tf).map(|(w, f)| w * f).sum::<f64>();
        }

        let n = rows * cols;
        let mut features = if keep {
            Vec::with_capacity(n * 2 * patch)
        } else {
            Vec::new()
        };
        let mut hidden = if keep {
            Vec::with_capacity(n * hdim)
        } else {
            Vec::new()
        };
        let mut out = Vec::with_capacity(n);
        let mut f = vec![0.0; 2 * patch];
        let mut hbuf = vec![0.0; hdim];
        let (yd, xd) = (y_t.data(), x.data());
        for i in 0..rows {
            for j in 0..cols {
                let mut k = 0;
                for di in -r..=r {
                    let ii = reflect(i as i64 + di, rows) * cols;
                    for dj in -r..=r {
                        let jj = reflect(j as i64 + dj, cols);
                        f[k] = yd[ii + jj];
                        f[patch + k] = xd[ii + jj];
                        k += 1;
                    }
                }
                let mut o = b2;
                for (u, hv) in hbuf.iter_mut().enumerate() {
                    let row = &w1[u * n_in..u * n_in + 2 * patch];
                    let pre = offset[u] + row.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>();
                    *hv = pre.tanh();
                    o += w2[u] * *hv;
                }
                out.push(o);
                if keep {
                    features.extend_from_slice(&f);
                    hidden.extend_from_slice(&hbuf);
                }
            }
        }
        Ok(Forward {
            features,
            hidden,
            out,
        })
    }

    /// Noise prediction and the clean-image estimate it implies.
    fn outputs(
        &self,
        y_t: &ImageVolume,
        x: &ImageVolume,
        t: usize,
        schedule: &NoiseSchedule,
        raw: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let ab = schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (yd, xd) = (y_t.data(), x.data());
        match self.cfg.parametrization {
            Parametrization::Epsilon => {
                let y0: Vec<f64> = raw.iter().zip(yd).map(|(o, y)| (y - s * o) / a).collect();
                (raw.to_vec(), y0)
            }
            Parametrization::Sample => {
                let y0: Vec<f64> = raw.iter().zip(xd).map(|(o, x)| x + o).collect();
                let eps = y0.iter().zip(yd).map(|(m, y)| (y - a * m) / s).collect();
                (eps, y0)
            }
            Parametrization::Preconditioned => {
                let v = self.cfg.prior_var;
                let den = ab * v + (1.0 - ab);
                let c = self.sample_jacobian(t, schedule);
                let y0: Vec<f64> = raw
                    .iter()
                    .zip(yd)
                    .zip(xd)
                    .map(|((o, y), x)| (a * v * y + (1.0 - ab) * x) / den + c * o)
                    .collect();
                let eps = y0.iter().zip(yd).map(|(m, y)| (y - a * m) / s).collect();
                (eps, y0)
            }
        }
    }

    /// `∂ŷ0 / ∂out` for the configured parametrization.
    fn sample_jacobian(&self, t: usize, schedule: &NoiseSchedule) -> f64 {
        match self.cfg.parametrization {
            Parametrization::Sample => 1.0,
            Parametrization::Preconditioned => {
                let ab = schedule.alpha_bar(t);
                let v = self.cfg.prior_var;
                (v * (1.0 - ab) / (ab * v + (1.0 - ab))).sqrt()
            }
            Parametrization::Epsilon => {
                let ab = schedule.alpha_bar(t);
                -(1.0 - ab).sqrt() / ab.sqrt()
            }
        }
    }

    /// Clean-image estimate implied by the noise prediction.
    pub fn implied_sample(
        &self,
        y_t: &ImageVolume,
        x: &ImageVolume,
        t: usize,
        schedule: &NoiseSchedule,
    ) -> Result<ImageVolume> {
        let fw = self.forward(y_t, x, t, schedule, false)?;
        let (_, y0) = self.outputs(y_t, x, t, schedule, &fw.out);
        Ok(ImageVolume::from_parts(y_t.shape().to_vec(), y0))
    }

    /// Mean loss over `batch`.
    pub fn loss(
        &self,
        batch: &[TrainingSample],
        schedule: &NoiseSchedule,
        weights: LossWeights,
    ) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let yt = s.noisy(schedule)?;
            let est = self.implied_sample(&yt, &s.x, s.t, schedule)?;
            total += sample_loss(&est, &s.y0, weights)?.0;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss over `batch` and its gradient with respect to the flat
    /// parameter vector.
    pub fn loss_and_grad(
        &self,
        batch: &[TrainingSample],
        schedule: &NoiseSchedule,
        weights: LossWeights,
    ) -> Result<(f64, Vec<f64>)> {
        let n_in = self.cfg.input_len();
        let patch = self.cfg.patch_len();
        let hdim = self.cfg.hidden;
        let (w1_len, b1_at, w2_at, b2_at) = (
            hdim * n_in,
            hdim * n_in,
            hdim * n_in + hdim,
            hdim * n_in + 2 * hdim,
        );
        let (_, _, w2, _) = self.split();
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let yt = s.noisy(schedule)?;
            let fw = self.forward(&yt, &s.x, s.t, schedule, true)?;
            let (_, y0) = self.outputs(&yt, &s.x, s.t, schedule, &fw.out);
            let est = ImageVolume::from_parts(yt.shape().to_vec(), y0);
            let (l, d_est) = sample_loss(&est, &s.y0, weights)?;
            total += l;
            let jac = self.sample_jacobian(s.t, schedule) * scale;
            let tf = time_features(s.t, schedule);
            for (v, &g_est) in d_est.iter().enumerate() {
                let g = g_est * jac;
                if g == 0.0 {
                    continue;
                }
                grad[b2_at] += g;
                let h = &fw.hidden[v * hdim..(v + 1) * hdim];
                let f = &fw.features[v * 2 * patch..(v + 1) * 2 * patch];
                for u in 0..hdim {
                    grad[w2_at + u] += g * h[u];
                    let dpre = g * w2[u] * (1.0 - h[u] * h[u]);
                    grad[b1_at + u] += dpre;
                    let row = &mut grad[u * n_in..(u + 1) * n_in];
                    for (gw, fv) in row[..2 * patch].iter_mut().zip(f) {
                        *gw += dpre * fv;
                    }
                    for (gw, fv) in row[2 * patch..].iter_mut().zip(&tf) {
                        *gw += dpre * fv;
                    }
                }
            }
            debug_assert!(w1_len == b1_at);
        }
        Ok((total * scale, grad))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w1, b1, w2, b2) = self.split();
        let c = &self.cfg;
        let meta = vec![
            c.radius as f64,
            c.hidden as f64,
            c.parametrization.code(),
            c.prior_var,
        ];
        let blocks = vec![
            ("config".to_string(), ImageVolume::new(vec![4], meta)?),
            (
                "w1".to_string(),
                ImageVolume::new(vec![c.hidden, c.input_len()], w1.to_vec())?,
            ),
            (
                "b1".to_string(),
                ImageVolume::new(vec![c.hidden], b1.to_vec())?,
            ),
            (
                "w2".to_string(),
                ImageVolume::new(vec![c.hidden], w2.to_vec())?,
            ),
            ("b2".to_string(), ImageVolume::new(vec![1], vec![b2])?),
        ];
        let mut w = BufWriter::new(File::create(path)?);
        write_params(&mut w, &blocks)?;
        w.flush()?;
        Ok(())
    }

    /// Loads parameters written by [`TinyDenoiser::save`]. Weights and
    /// `prior_var` round-trip through f32.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let blocks = read_params(&mut BufReader::new(File::open(path)?))?;
        let get = |name: &str| {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.data().to_vec())
                .ok_or_else(|| Error::Format(format!("missing parameter block `{name}`")))
        };
        let meta = get("config")?;
        if meta.len() != 4 {
            return Err(Error::Format("bad config block".into()));
        }
        let cfg = TinyConfig {
            radius: meta[0] as usize,
            hidden: meta[1] as usize,
            parametrization: Parametrization::from_code(meta[2])?,
            prior_var: meta[3],
        };
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut params = get("w1")?;
        params.extend(get("b1")?);
        params.extend(get("w2")?);
        params.extend(get("b2")?);
        TinyDenoiser::from_params(cfg, params)
    }
}

impl Denoiser for TinyDenoiser {
    fn id(&self) -> &str {
        Self::ID
    }

    fn predict(
        &self,
        y_t: &ImageVolume,
        x: &ImageVolume,
        t: usize,
        schedule: &NoiseSchedule,
    ) -> Result<ImageVolume> {
        let fw = self.forward(y_t, x, t, schedule, false)?;
        let (eps, _) = self.outputs(y_t, x, t, schedule, &fw.out);
        Ok(ImageVolume::from_parts(y_t.shape().to_vec(), eps))
    }
}

/// `λ1·mean|est − target| + λ2·(1 − SSIM(est, target))` and its gradient
/// with respect to `est`.
pub fn sample_loss(
    est: &ImageVolume,
    target: &ImageVolume,
    weights: LossWeights,
) -> Result<(f64, Vec<f64>)> {
    est.same_shape(target)?;
    let n = est.len() as f64;
    let mut grad = vec![0.0; est.len()];
    let mut loss = 0.0;
    if weights.lambda1 != 0.0 {
        let mut l1 = 0.0;
        for ((g, &e), &y) in grad.iter_mut().zip(est.data()).zip(target.data()) {
            let d = e - y;
            l1 += d.abs();
            *g += weights.lambda1 * d.signum() * (d != 0.0) as u8 as f64 / n;
        }
        loss += weights.lambda1 * l1 / n;
    }
    if weights.lambda2 != 0.0 {
        let (s, ds) = ssim_with_grad(est, target, 1.0)?;
        loss += weights.lambda2 * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(ds.data()) {
            *g -= weights.lambda2 * d;
        }
    }
    Ok((loss, grad))
}

/// Loss of the predictor that always returns ε̂ = 0, i.e. `ŷ0 = y_t / √ᾱ_t`.
pub fn zero_predictor_loss(
    batch: &[TrainingSample],
    schedule: &NoiseSchedule,
    weights: LossWeights,
) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        let yt = s.noisy(schedule)?;
        let a = schedule.alpha_bar(s.t).sqrt();
        total += sample_loss(&yt.map(|v| v / a), &s.y0, weights)?.0;
    }
    Ok(total / batch.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits a [`TinyDenoiser`] to `pairs`. Deterministic given `opts.seed`.
pub fn train_tiny_denoiser(
    pairs: &[TrainingPair],
    schedule: &NoiseSchedule,
    cfg: &TinyConfig,
    opts: &TrainingOptions,
) -> Result<(TinyDenoiser, TrainingReport)> {
    if pairs.is_empty() {
        return Err(Error::param("pairs", "training set is empty"));
    }
    for p in pairs {
        p.x.same_shape(&p.y0)?;
        p.x.same_shape(&pairs[0].x)?;
    }
    if !(opts.lr > 0.0) {
        return Err(Error::param("lr", "learning rate must be > 0"));
    }
    if opts.weights.lambda1 < 0.0
        || opts.weights.lambda2 < 0.0
        || opts.weights.lambda1 + opts.weights.lambda2 <= 0.0
    {
        return Err(Error::param(
            "weights",
            "need nonnegative weights with at least one positive",
        ));
    }
    if opts.batch_size == 0 || opts.eval_samples == 0 {
        return Err(Error::param(
            "batch_size",
            "batch and evaluation sizes must be positive",
        ));
    }

    let root = SeededRng::new(opts.seed, streams::TRAIN);
    let mut init_rng = root.fork(1);
    let mut eval_rng = root.fork(2);
    let mut draw_rng = root.fork(3);

    let eval: Vec<TrainingSample> = (0..opts.eval_samples)
        .map(|i| TrainingSample::draw(&pairs[i % pairs.len()], schedule, &mut eval_rng))
        .collect::<Result<_>>()?;

    let mut model = TinyDenoiser::new(cfg.clone(), &mut init_rng)?;
    let mut adam = Adam::new(model.params.len(), opts.lr);
    let mut epoch_losses = vec![model.loss(&eval, schedule, opts.weights)?];
    let zero = zero_predictor_loss(&eval, schedule, opts.weights)?;

    for epoch in 1..=opts.epochs {
        for _ in 0..opts.iterations_per_epoch {
            let batch: Vec<TrainingSample> = (0..opts.batch_size)
                .map(|_| {
                    let pair = &pairs[draw_rng.below(pairs.len())];
                    TrainingSample::draw(pair, schedule, &mut draw_rng)
                })
                .collect::<Result<_>>()?;
            let (loss, grad) = model.loss_and_grad(&batch, schedule, opts.weights)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            let mut params = std::mem::take(&mut model.params);
            adam.update(&mut params, &grad);
            model.params = params;
        }
        let l = model.loss(&eval, schedule, opts.weights)?;
        if !l.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(l);
    }
    Ok((
        model,
        TrainingReport {
            epoch_losses,
            zero_predictor_loss: zero,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::linear_schedule;

    fn pair(seed: u64, n: usize) -> TrainingPair {
        let mut rng = SeededRng::new(seed, 0);
        let y0 = ImageVolume::from_fn_2d(
            n,
            n,
            |r, c| if (r / 4 + c / 5) % 2 == 0 { 0.8 } else { 0.2 },
        )
        .unwrap();
        let noise = gaussian_volume(&[n, n], &mut rng, 0.0, 0.05).unwrap();
        let x = y0.zip_map(&noise, |a, b| a + b).unwrap();
        TrainingPair { x, y0 }
    }

    #[test]
    fn output_shape_and_purity() {
        let s = linear_schedule(100, 1e-4, 0.02).unwrap();
        let d = TinyDenoiser::new(TinyConfig::default(), &mut SeededRng::new(1, 0)).unwrap();
        let p = pair(2, 16);
        let a = d.predict(&p.x, &p.x, 50, &s).unwrap();
        assert_eq!(a.shape(), &[16, 16]);
        assert_eq!(a, d.predict(&p.x, &p.x, 50, &s).unwrap());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = linear_schedule(100, 1e-4, 0.02).unwrap();
        for parametrization in [
            Parametrization::Sample,
            Parametrization::Epsilon,
            Parametrization::Preconditioned,
        ] {
            let cfg = TinyConfig {
                parametrization,
                ..TinyConfig::default()
            };
            let mut rng = SeededRng::new(3, 0);
            let mut d = TinyDenoiser::new(cfg, &mut rng).unwrap();
            // move the output layer off zero so every parameter has gradient
            let mut p = d.params().to_vec();
            for v in &mut p {
                *v += 0.1 * rng.standard_normal();
            }
            d.set_params(&p);
            let batch: Vec<_> = (0..2)
                .map(|i| TrainingSample::draw(&pair(10 + i, 16), &s, &mut rng).unwrap())
                .collect();
            let w = LossWeights::default();
            let (_, g) = d.loss_and_grad(&batch, &s, w).unwrap();
            for k in 0..10 {
                let idx = rng.below(p.len());
                let h = 1e-5;
                let mut plus = p.clone();
                plus[idx] += h;
                let mut minus = p.clone();
                minus[idx] -= h;
                d.set_params(&plus);
                let lp = d.loss(&batch, &s, w).unwrap();
                d.set_params(&minus);
                let lm = d.loss(&batch, &s, w).unwrap();
                d.set_params(&p);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-8);
                assert!(
                    rel <= 1e-4,
                    "{parametrization:?} param {idx} (#{k}): {} vs {fd}",
                    g[idx]
                );
            }
        }
    }

    #[test]
    fn training_reduces_loss_below_zero_predictor() {
        let s = linear_schedule(200, 1e-4, 0.04).unwrap();
        let pairs: Vec<_> = (0..3)
            .map(|i| {
                let p = pair(i, 16);
                TrainingPair {
                    x: p.y0.clone(),
                    y0: p.y0,
                }
            })
            .collect();
        let opts = TrainingOptions {
            epochs: 4,
            iterations_per_epoch: 60,
            ..Default::default()
        };
        let (_, report) = train_tiny_denoiser(&pairs, &s, &TinyConfig::default(), &opts).unwrap();
        assert!(
            report.relative_decrease() >= 0.2,
            "{:?}",
            report.epoch_losses
        );
        assert!(*report.epoch_losses.last().unwrap() < report.zero_predictor_loss);
    }

    #[test]
    fn l1_fit_of_a_constant_image() {
        let s = linear_schedule(200, 1e-4, 0.04).unwrap();
        let c = 0.6;
        let img = ImageVolume::filled(vec![12, 12], c).unwrap();
        let pairs = vec![TrainingPair {
            x: img.clone(),
            y0: img,
        }];
        let opts = TrainingOptions {
            epochs: 3,
            iterations_per_epoch: 80,
            weights: LossWeights {
                lambda1: 1.0,
                lambda2: 0.0,
            },
            ..Default::default()
        };
        let (model, report) =
            train_tiny_denoiser(&pairs, &s, &TinyConfig::default(), &opts).unwrap();
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < 0.02, "{:?}", report.epoch_losses);
        let mut rng = SeededRng::new(5, 0);
        let sample = TrainingSample::draw(&pairs[0], &s, &mut rng).unwrap();
        let est = model
            .implied_sample(&sample.noisy(&s).unwrap(), &sample.x, sample.t, &s)
            .unwrap();
        assert!((est.mean() - c).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_training_inputs() {
        let s = linear_schedule(10, 1e-4, 0.02).unwrap();
        let cfg = TinyConfig::default();
        assert!(train_tiny_denoiser(&[], &s, &cfg, &TrainingOptions::default()).is_err());
        let p = vec![pair(0, 12)];
        let bad = TrainingOptions {
            lr: 0.0,
            ..Default::default()
        };
        assert!(train_tiny_denoiser(&p, &s, &cfg, &bad).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let s = linear_schedule(50, 1e-4, 0.02).unwrap();
        let p = vec![pair(0, 12)];
        let opts = TrainingOptions {
            epochs: 2,
            iterations_per_epoch: 5,
            lr: 1e300,
            ..Default::default()
        };
        match train_tiny_denoiser(&p, &s, &TinyConfig::default(), &opts) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn save_and_load() {
        let d = TinyDenoiser::new(TinyConfig::default(), &mut SeededRng::new(1, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.params");
        d.save(&path).unwrap();
        let back = TinyDenoiser::load(&path).unwrap();
        let (a, b) = (back.config(), d.config());
        assert_eq!(
            (a.radius, a.hidden, a.parametrization),
            (b.radius, b.hidden, b.parametrization)
        );
        assert_eq!(a.prior_var, b.prior_var as f32 as f64);
        for (a, b) in back.params().iter().zip(d.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}

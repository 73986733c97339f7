//! Noise predictors `ε̂(y_t, x, t)` and the registry that builds them by name.
//!
//! Every predictor implements [`Denoiser`]. A [`DenoiserFactory`] knows how
//! to construct one from [`DenoiserSettings`] plus whatever per-case data it
//! needs; the [`DenoiserRegistry`] maps identifier strings to factories so
//! experiments select a predictor from config.

mod gaussian;
mod linear;
mod oracle;
pub mod tiny;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gaussian::GaussianAnalyticDenoiser;
pub use linear::LinearDenoiser;
pub use oracle::OracleDenoiser;
pub use tiny::{
    LossWeights, TinyConfig, TinyDenoiser, TrainingOptions, TrainingPair, TrainingReport,
};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::volume::ImageVolume;

/// A noise predictor. `predict` must be a pure function of its arguments.
pub trait Denoiser: Send + Sync {
    /// Stable identifier used in configs and reports.
    fn id(&self) -> &str;

    fn predict(
        &self,
        y_t: &ImageVolume,
        x: &ImageVolume,
        t: usize,
        schedule: &NoiseSchedule,
    ) -> Result<ImageVolume>;
}

/// Config block selecting and parameterizing a denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSettings {
    /// One of the registered identifiers: "oracle", "gaussian", "linear", "tiny".
    pub id: String,
    /// Prior variance for "gaussian"; the prior mean is the case's LF image.
    pub gaussian_var: f64,
    /// Uniform gain `a` for "linear".
    pub linear_gain: f64,
    /// Uniform offset `b` for "linear".
    pub linear_bias: f64,
    /// Pretrained parameters for "tiny"; trained on the fly when absent.
    pub weights: Option<PathBuf>,
    pub tiny: TinyConfig,
    pub training: TrainingOptions,
}

impl Default for DenoiserSettings {
    fn default() -> Self {
        DenoiserSettings {
            id: "tiny".into(),
            gaussian_var: 0.01,
            linear_gain: 0.0,
            linear_bias: 0.0,
            weights: None,
            tiny: TinyConfig::default(),
            training: TrainingOptions::default(),
        }
    }
}

/// Data available to a factory when building a denoiser.
pub struct BuildContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub shape: &'a [usize],
    /// Ground truth of the current case, when the harness exposes it.
    pub reference: Option<&'a ImageVolume>,
    /// Conditioning (LF) image of the current case.
    pub observation: Option<&'a ImageVolume>,
    /// Paired training data for learned denoisers.
    pub training: &'a [TrainingPair],
}

pub trait DenoiserFactory: Send + Sync {
    fn id(&self) -> &'static str;

    /// Whether the built denoiser depends on the individual case. Shared
    /// denoisers are built once per experiment.
    fn per_case(&self) -> bool {
        true
    }

    fn build(
        &self,
        settings: &DenoiserSettings,
        ctx: &BuildContext<'_>,
    ) -> Result<Arc<dyn Denoiser>>;
}

struct OracleFactory;

impl DenoiserFactory for OracleFactory {
    fn id(&self) -> &'static str {
        OracleDenoiser::ID
    }

    fn build(&self, _: &DenoiserSettings, ctx: &BuildContext<'_>) -> Result<Arc<dyn Denoiser>> {
        let y0 = ctx.reference.ok_or_else(|| {
            Error::Config("the oracle denoiser needs the ground-truth image".into())
        })?;
        Ok(Arc::new(OracleDenoiser::new(y0.clone())?))
    }
}

struct GaussianFactory;

impl DenoiserFactory for GaussianFactory {
    fn id(&self) -> &'static str {
        GaussianAnalyticDenoiser::ID
    }

    fn build(
        &self,
        settings: &DenoiserSettings,
        ctx: &BuildContext<'_>,
    ) -> Result<Arc<dyn Denoiser>> {
        let mu = match ctx.observation {
            Some(x) => x.clone(),
            None => ImageVolume::zeros(ctx.shape.to_vec())?,
        };
        let var = ImageVolume::filled(ctx.shape.to_vec(), settings.gaussian_var)?;
        Ok(Arc::new(GaussianAnalyticDenoiser::new(mu, var)?))
    }
}

struct LinearFactory;

impl DenoiserFactory for LinearFactory {
    fn id(&self) -> &'static str {
        LinearDenoiser::ID
    }

    fn build(
        &self,
        settings: &DenoiserSettings,
        ctx: &BuildContext<'_>,
    ) -> Result<Arc<dyn Denoiser>> {
        let a = ImageVolume::filled(ctx.shape.to_vec(), settings.linear_gain)?;
        let b = ImageVolume::filled(ctx.shape.to_vec(), settings.linear_bias)?;
        Ok(Arc::new(LinearDenoiser::new(a, b)?))
    }
}

struct TinyFactory;

impl DenoiserFactory for TinyFactory {
    fn id(&self) -> &'static str {
        TinyDenoiser::ID
    }

    fn per_case(&self) -> bool {
        false
    }

    fn build(
        &self,
        settings: &DenoiserSettings,
        ctx: &BuildContext<'_>,
    ) -> Result<Arc<dyn Denoiser>> {
        if let Some(path) = &settings.weights {
            return Ok(Arc::new(TinyDenoiser::load(path)?));
        }
        let (model, _) = tiny::train_tiny_denoiser(
            ctx.training,
            ctx.schedule,
            &settings.tiny,
            &settings.training,
        )?;
        Ok(Arc::new(model))
    }
}

/// Name → factory map.
pub struct DenoiserRegistry {
    factories: BTreeMap<&'static str, Box<dyn DenoiserFactory>>,
}

impl DenoiserRegistry {
    pub fn empty() -> Self {
        DenoiserRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding "oracle", "gaussian", "linear" and "tiny".
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(OracleFactory));
        r.register(Box::new(GaussianFactory));
        r.register(Box::new(LinearFactory));
        r.register(Box::new(TinyFactory));
        r
    }

    /// Adds a factory, replacing any previous one with the same id.
    pub fn register(&mut self, factory: Box<dyn DenoiserFactory>) {
        self.factories.insert(factory.id(), factory);
    }

    pub fn get(&self, id: &str) -> Result<&dyn DenoiserFactory> {
        self.factories
            .get(id)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::UnknownDenoiser(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(
        &self,
        settings: &DenoiserSettings,
        ctx: &BuildContext<'_>,
    ) -> Result<Arc<dyn Denoiser>> {
        self.get(&settings.id)?.build(settings, ctx)
    }
}

impl Default for DenoiserRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

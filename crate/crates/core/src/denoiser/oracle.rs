use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::volume::ImageVolume;

use super::Denoiser;

/// Knows the clean image and inverts the forward marginal exactly:
/// `ε̂ = (y_t − √ᾱ_t·y0) / √(1−ᾱ_t)`.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    y0: ImageVolume,
}

impl OracleDenoiser {
    pub const ID: &'static str = "oracle";

    pub fn new(y0: ImageVolume) -> Result<Self> {
        if y0.first_non_finite().is_some() {
            return Err(Error::param("y0", "must be finite"));
        }
        Ok(OracleDenoiser { y0 })
    }
}

impl Denoiser for OracleDenoiser {
    fn id(&self) -> &str {
        Self::ID
    }

    fn predict(
        &self,
        y_t: &ImageVolume,
        _x: &ImageVolume,
        t: usize,
        schedule: &NoiseSchedule,
    ) -> Result<ImageVolume> {
        schedule.check_t(t)?;
        let ab = schedule.alpha_bar(t);
        if ab >= 1.0 {
            return Err(Error::param(
                "alpha_bar",
                "oracle inversion needs alpha_bar < 1",
            ));
        }
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        y_t.zip_map(&self.y0, |y, y0| (y - a * y0) / s)
    }
}

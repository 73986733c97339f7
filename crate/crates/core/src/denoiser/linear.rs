use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::volume::ImageVolume;

use super::Denoiser;

/// `ε̂ = a ⊙ y_t + b`, ignoring the conditioning image and timestep.
#[derive(Clone, Debug)]
pub struct LinearDenoiser {
    a: ImageVolume,
    b: ImageVolume,
}

impl LinearDenoiser {
    pub const ID: &'static str = "linear";

    pub fn new(a: ImageVolume, b: ImageVolume) -> Result<Self> {
        a.same_shape(&b)?;
        Ok(LinearDenoiser { a, b })
    }

    pub fn gain(&self) -> &ImageVolume {
        &self.a
    }
}

impl Denoiser for LinearDenoiser {
    fn id(&self) -> &str {
        Self::ID
    }

    fn predict(
        &self,
        y_t: &ImageVolume,
        _x: &ImageVolume,
        _t: usize,
        _schedule: &NoiseSchedule,
    ) -> Result<ImageVolume> {
        y_t.same_shape(&self.a)?;
        let data = y_t
            .data()
            .iter()
            .zip(self.a.data())
            .zip(self.b.data())
            .map(|((&y, &a), &b)| a * y + b)
            .collect();
        Ok(ImageVolume::from_parts(y_t.shape().to_vec(), data))
    }
}

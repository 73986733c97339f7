use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::volume::ImageVolume;

use super::Denoiser;

/// Bayes-optimal noise predictor for data distributed as `N(mu, diag(var))`.
#[derive(Clone, Debug)]
pub struct GaussianAnalyticDenoiser {
    mu: ImageVolume,
    var: ImageVolume,
}

impl GaussianAnalyticDenoiser {
    pub const ID: &'static str = "gaussian";

    pub fn new(mu: ImageVolume, var: ImageVolume) -> Result<Self> {
        mu.same_shape(&var)?;
        if var.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::param("var", "prior variance must be > 0 everywhere"));
        }
        Ok(GaussianAnalyticDenoiser { mu, var })
    }

    /// `E[y0 | y_t] = (√ā·var·y_t + (1−ā)·mu) / (ā·var + 1 − ā)` per voxel.
    pub fn posterior_mean(&self, y_t: &ImageVolume, alpha_bar: f64) -> Result<ImageVolume> {
        y_t.same_shape(&self.mu)?;
        let a = alpha_bar.sqrt();
        let data = y_t
            .data()
            .iter()
            .zip(self.mu.data())
            .zip(self.var.data())
            .map(|((&y, &m), &v)| {
                (a * v * y + (1.0 - alpha_bar) * m) / (alpha_bar * v + (1.0 - alpha_bar))
            })
            .collect();
        Ok(ImageVolume::from_parts(y_t.shape().to_vec(), data))
    }
}

impl Denoiser for GaussianAnalyticDenoiser {
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
        let post = self.posterior_mean(y_t, ab)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        y_t.zip_map(&post, |y, m| (y - a * m) / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::OracleDenoiser;
    use crate::rng::SeededRng;
    use crate::schedule::linear_schedule;
    use crate::volume::gaussian_volume;

    fn setup() -> (ImageVolume, ImageVolume) {
        let mut rng = SeededRng::new(1, 0);
        let mu = gaussian_volume(&[8, 8], &mut rng, 0.5, 0.2).unwrap();
        let yt = gaussian_volume(&[8, 8], &mut rng, 0.0, 1.0).unwrap();
        (mu, yt)
    }

    #[test]
    fn degenerate_prior_matches_oracle() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let (mu, yt) = setup();
        let g = GaussianAnalyticDenoiser::new(
            mu.clone(),
            ImageVolume::filled(vec![8, 8], 1e-12).unwrap(),
        )
        .unwrap();
        let o = OracleDenoiser::new(mu).unwrap();
        for t in [10, 400, 1000] {
            let a = g.predict(&yt, &yt, t, &s).unwrap();
            let b = o.predict(&yt, &yt, t, &s).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn posterior_concentrates_on_observation() {
        let (mu, yt) = setup();
        let g = GaussianAnalyticDenoiser::new(mu, ImageVolume::filled(vec![8, 8], 0.04).unwrap())
            .unwrap();
        let post = g.posterior_mean(&yt, 1.0 - 1e-12).unwrap();
        for (p, y) in post.data().iter().zip(yt.data()) {
            assert!((p - y).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_mean_is_between_prior_and_rescaled_observation() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let (mu, yt) = setup();
        let var = gaussian_volume(&[8, 8], &mut SeededRng::new(2, 0), 0.05, 0.01)
            .unwrap()
            .map(f64::abs);
        let g = GaussianAnalyticDenoiser::new(mu.clone(), var).unwrap();
        for t in (1..=1000).step_by(111) {
            let ab = s.alpha_bar(t);
            let post = g.posterior_mean(&yt, ab).unwrap();
            for ((p, m), y) in post.data().iter().zip(mu.data()).zip(yt.data()) {
                let r = y / ab.sqrt();
                let (lo, hi) = if m < &r { (*m, r) } else { (r, *m) };
                assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_variance() {
        let (mu, _) = setup();
        assert!(
            GaussianAnalyticDenoiser::new(mu.clone(), ImageVolume::zeros(vec![8, 8]).unwrap())
                .is_err()
        );
        assert!(GaussianAnalyticDenoiser::new(mu, ImageVolume::ones(vec![4, 4]).unwrap()).is_err());
    }
}

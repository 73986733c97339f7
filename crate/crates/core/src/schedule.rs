//! Linear β schedules and the closed-form forward marginal.
//!
//! Timesteps are 1-indexed: `t ∈ 1..=T`, with `y_0` the clean image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::volume::{gaussian_volume, ImageVolume};

/// How the reverse-step noise scale σ_t is derived from the β table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaRule {
    /// σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)
    #[default]
    Posterior,
    /// σ_t² = β_t, except σ_1 = 0
    Beta,
}

impl std::str::FromStr for SigmaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(SigmaRule::Posterior),
            "beta" => Ok(SigmaRule::Beta),
            other => Err(Error::param(
                "sigma_rule",
                format!("unknown rule `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    rule: SigmaRule,
}

/// β_t interpolated linearly from `beta_start` (t = 1) to `beta_end` (t = T).
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end, SigmaRule::Posterior)
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64, rule: SigmaRule) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("steps", "need at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(
                "beta",
                format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"),
            ));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(beta, rule))
    }

    fn from_betas(beta: Vec<f64>, rule: SigmaRule) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| {
                if i == 0 {
                    return 0.0;
                }
                match rule {
                    SigmaRule::Posterior => {
                        (beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i])).sqrt()
                    }
                    SigmaRule::Beta => beta[i].sqrt(),
                }
            })
            .collect();
        NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
            sigma,
            rule,
        }
    }

    /// Number of timesteps T.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn sigma_rule(&self) -> SigmaRule {
        self.rule
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    // Accessors below take 1-indexed t and panic outside 1..=T; use
    // `check_t` first on untrusted input.

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// ᾱ_{t−1}, with ᾱ_0 = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `y_t = √ā·y0 + √(1−ā)·ε` for an explicit ā, returning `(y_t, ε)`.
pub fn q_sample_with_alpha_bar(
    y0: &ImageVolume,
    alpha_bar: f64,
    rng: &mut SeededRng,
) -> Result<(ImageVolume, ImageVolume)> {
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::param(
            "alpha_bar",
            format!("{alpha_bar} outside [0, 1]"),
        ));
    }
    let eps = gaussian_volume(y0.shape(), rng, 0.0, 1.0)?;
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let yt = y0.zip_map(&eps, |y, e| a * y + s * e)?;
    Ok((yt, eps))
}

/// Draws `y_t ~ q(y_t | y_0)` and returns the noise used alongside it.
pub fn q_sample(
    y0: &ImageVolume,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<(ImageVolume, ImageVolume)> {
    schedule.check_t(t)?;
    q_sample_with_alpha_bar(y0, schedule.alpha_bar(t), rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ᾱ_1000 of the (1e-4, 0.02) schedule, from a 40-digit product.
    const ALPHA_BAR_1000: f64 = 4.035_829_765_375_683e-5;

    #[test]
    fn single_step() {
        let s = linear_schedule(1, 0.1, 0.1).unwrap();
        assert_eq!(s.beta(1), 0.1);
        assert_eq!(s.alpha(1), 0.9);
        assert_eq!(s.alpha_bar(1), 0.9);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn canonical_schedule_terminal_alpha_bar() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        let rel = (s.alpha_bar(1000) - ALPHA_BAR_1000).abs() / ALPHA_BAR_1000;
        assert!(rel < 1e-12, "rel err {rel}");
    }

    #[test]
    fn tables_satisfy_invariants() {
        for rule in [SigmaRule::Posterior, SigmaRule::Beta] {
            let s = NoiseSchedule::linear(200, 1e-4, 0.05, rule).unwrap();
            for t in 1..=s.steps() {
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                assert_eq!(s.alpha(t), 1.0 - s.beta(t));
                assert_eq!(s.alpha_bar(t), s.alpha_bar_prev(t) * s.alpha(t));
                assert!(s.alpha_bar(t) <= s.alpha_bar(1));
                if t > 1 {
                    assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                    let want = match rule {
                        SigmaRule::Posterior => {
                            s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t))
                        }
                        SigmaRule::Beta => s.beta(t),
                    };
                    assert!((s.sigma(t).powi(2) - want).abs() <= 1e-15 * want.max(1.0));
                }
            }
            assert_eq!(s.sigma(1), 0.0);
            assert!(s.alpha_bar(1) < 1.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(linear_schedule(0, 1e-4, 0.02).is_err());
        assert!(linear_schedule(10, 0.0, 0.02).is_err());
        assert!(linear_schedule(10, 0.03, 0.02).is_err());
        assert!(linear_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn schedules_are_pure() {
        assert_eq!(
            linear_schedule(500, 1e-4, 0.02).unwrap(),
            linear_schedule(500, 1e-4, 0.02).unwrap()
        );
    }

    #[test]
    fn q_sample_limits() {
        let y0 = ImageVolume::from_fn_2d(4, 4, |r, c| (r * 4 + c) as f64 / 16.0).unwrap();
        let (yt, _) = q_sample_with_alpha_bar(&y0, 1.0, &mut SeededRng::new(1, 0)).unwrap();
        assert_eq!(yt, y0);

        let (yt, eps) = q_sample_with_alpha_bar(&y0, 0.25, &mut SeededRng::new(1, 0)).unwrap();
        let s = 0.75f64.sqrt();
        for ((&y, &e), &orig) in yt.data().iter().zip(eps.data()).zip(y0.data()) {
            assert!(((y - s * e) / 0.5 - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn q_sample_round_trip_every_t() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let y0 = ImageVolume::from_fn_2d(8, 8, |r, c| 0.1 + 0.01 * (r + c) as f64).unwrap();
        let mut rng = SeededRng::new(3, 0);
        for t in (1..=1000).step_by(37).chain([1000]) {
            let (yt, eps) = q_sample(&y0, t, &s, &mut rng).unwrap();
            let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
            for ((&y, &e), &orig) in yt.data().iter().zip(eps.data()).zip(y0.data()) {
                let rec = (y - b * e) / a;
                assert!((rec - orig).abs() <= 1e-5 * orig.abs(), "t={t}");
            }
        }
        assert!(q_sample(&y0, 0, &s, &mut rng).is_err());
        assert!(q_sample(&y0, 1001, &s, &mut rng).is_err());
    }

    #[test]
    fn q_sample_mean_and_variance() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let t = 300;
        let ab = s.alpha_bar(t);
        let c = 0.7;
        let y0 = ImageVolume::filled(vec![100, 100], c).unwrap();
        let (yt, _) = q_sample(&y0, t, &s, &mut SeededRng::new(5, 0)).unwrap();
        let bound = 3.0 * ((1.0 - ab) / 1e4).sqrt();
        assert!((yt.mean() - ab.sqrt() * c).abs() <= bound);
        let resid = yt.map(|v| v - ab.sqrt() * c);
        let var = resid.data().iter().map(|r| r * r).sum::<f64>() / 1e4;
        // sample variance of 1e4 normals: relative sd ≈ sqrt(2/1e4)
        assert!((var / (1.0 - ab) - 1.0).abs() < 3.0 * (2.0f64 / 1e4).sqrt());
    }

    #[test]
    fn sigma_rule_parses() {
        assert_eq!("beta".parse::<SigmaRule>().unwrap(), SigmaRule::Beta);
        assert!("cosine".parse::<SigmaRule>().is_err());
    }
}

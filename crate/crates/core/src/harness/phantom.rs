//! Piecewise-constant ellipse phantoms standing in for high-field ground truth.
//!
//! Geometry lives in normalized coordinates `[-1, 1]²` (row axis first);
//! voxel centers sit at `(2i + 1)/n − 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};
use crate::volume::ImageVolume;

pub const MIN_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes along the rotated row and column directions.
    pub axes: [f64; 2],
    /// Radians.
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, r: f64, c: f64) -> bool {
        let (dr, dc) = (r - self.center[0], c - self.center[1]);
        let (s, co) = self.rotation.sin_cos();
        let u = co * dr + s * dc;
        let v = -s * dr + co * dc;
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Rendered in order; later ellipses overwrite earlier ones.
    pub ellipses: Vec<Ellipse>,
}

impl PhantomSpec {
    /// A head-like layout: one large outer ellipse followed by
    /// `n_ellipses − 1` smaller structures inside it.
    pub fn random(n_ellipses: usize, rng: &mut SeededRng) -> Self {
        let mut ellipses = Vec::with_capacity(n_ellipses);
        if n_ellipses > 0 {
            ellipses.push(Ellipse {
                center: [
                    rng.uniform_range(-0.05, 0.05),
                    rng.uniform_range(-0.05, 0.05),
                ],
                axes: [rng.uniform_range(0.75, 0.9), rng.uniform_range(0.6, 0.8)],
                rotation: rng.uniform_range(-0.2, 0.2),
                intensity: rng.uniform_range(0.3, 0.5),
            });
        }
        for _ in 1..n_ellipses {
            ellipses.push(Ellipse {
                center: [rng.uniform_range(-0.5, 0.5), rng.uniform_range(-0.4, 0.4)],
                axes: [rng.uniform_range(0.08, 0.35), rng.uniform_range(0.08, 0.35)],
                rotation: rng.uniform_range(0.0, std::f64::consts::PI),
                intensity: rng.uniform_range(0.0, 1.0),
            });
        }
        PhantomSpec { ellipses }
    }
}

fn coord(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// Renders `spec` on a `size × size` grid with values in `[0, 1]`.
pub fn generate_phantom(spec: &PhantomSpec, size: usize) -> Result<ImageVolume> {
    if size < MIN_SIZE {
        return Err(Error::param(
            "size",
            format!("phantoms need at least {MIN_SIZE} voxels per side"),
        ));
    }
    for e in &spec.ellipses {
        if !(e.axes[0] > 0.0 && e.axes[1] > 0.0) {
            return Err(Error::param("axes", "ellipse semi-axes must be > 0"));
        }
        if !(e.center.iter().all(|v| v.is_finite())
            && e.rotation.is_finite()
            && e.intensity.is_finite())
        {
            return Err(Error::param(
                "ellipse",
                "geometry and intensity must be finite",
            ));
        }
    }
    let img = ImageVolume::from_fn_2d(size, size, |i, j| {
        let (r, c) = (coord(i, size), coord(j, size));
        spec.ellipses
            .iter()
            .rev()
            .find(|e| e.contains(r, c))
            .map_or(0.0, |e| e.intensity.clamp(0.0, 1.0))
    })?;
    Ok(img.with_range_hint(0.0, 1.0))
}

/// Generator for phantom `index` of the corpus seeded by `seed`.
pub fn case_rng(seed: u64, index: usize) -> SeededRng {
    SeededRng::new(seed, streams::PHANTOM).fork(index as u64)
}

/// `n_cases` phantoms; case `i` depends only on `(seed, i)`.
pub fn generate_corpus(
    n_cases: usize,
    size: usize,
    n_ellipses: usize,
    seed: u64,
) -> Result<Vec<ImageVolume>> {
    (0..n_cases)
        .map(|i| {
            generate_phantom(
                &PhantomSpec::random(n_ellipses, &mut case_rng(seed, i)),
                size,
            )
        })
        .collect()
}

//! Scalar grids and the elementwise arithmetic the samplers are built from.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// A 1D, 2D or 3D grid of finite samples stored row-major.
///
/// Volumes are immutable once built; every operation returns a new volume.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageVolume {
    shape: Vec<usize>,
    data: Vec<f64>,
    range_hint: Option<(f64, f64)>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl ImageVolume {
    /// Builds a volume, rejecting bad shapes, length mismatches and
    /// non-finite samples.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if data.len() != n {
            return Err(Error::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: 0, index });
        }
        Ok(ImageVolume {
            shape,
            data,
            range_hint: None,
        })
    }

    /// Internal constructor for outputs of arithmetic on validated volumes.
    /// Finiteness is the caller's responsibility.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        ImageVolume {
            shape,
            data,
            range_hint: None,
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        ImageVolume::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        ImageVolume::filled(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        ImageVolume::filled(shape, 1.0)
    }

    /// 2D volume from a function of `(row, col)`.
    pub fn from_fn_2d(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        ImageVolume::new(vec![rows, cols], data)
    }

    pub fn with_range_hint(mut self, lo: f64, hi: f64) -> Self {
        self.range_hint = Some((lo, hi));
        self
    }

    pub fn range_hint(&self) -> Option<(f64, f64)> {
        self.range_hint
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` for a 2D volume.
    pub fn dims_2d(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::Unsupported("operation requires a 2D volume")),
        }
    }

    pub fn same_shape(&self, other: &ImageVolume) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageVolume {
        ImageVolume::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &ImageVolume, f: impl Fn(f64, f64) -> f64) -> Result<ImageVolume> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ImageVolume::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.data.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / self.data.len() as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// I.i.d. `N(mean, std²)` samples. `std == 0` yields the constant volume
/// without consuming the generator.
pub fn gaussian_volume(
    shape: &[usize],
    rng: &mut SeededRng,
    mean: f64,
    std: f64,
) -> Result<ImageVolume> {
    let n = check_shape(shape)?;
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::param(
            "std",
            format!("need finite std >= 0, got {std}"),
        ));
    }
    let data = if std == 0.0 {
        vec![mean; n]
    } else {
        (0..n).map(|_| mean + std * rng.standard_normal()).collect()
    };
    Ok(ImageVolume::from_parts(shape.to_vec(), data))
}

/// Elementwise product.
pub fn hadamard(a: &ImageVolume, b: &ImageVolume) -> Result<ImageVolume> {
    a.zip_map(b, |x, y| x * y)
}

/// `Σ coeffs[i] · volumes[i]`, accumulated left to right per voxel.
pub fn axpy_combine(coeffs: &[f64], volumes: &[&ImageVolume]) -> Result<ImageVolume> {
    if volumes.is_empty() || coeffs.len() != volumes.len() {
        return Err(Error::param(
            "volumes",
            format!(
                "{} coefficients for {} volumes",
                coeffs.len(),
                volumes.len()
            ),
        ));
    }
    let first = volumes[0];
    for v in &volumes[1..] {
        first.same_shape(v)?;
    }
    let mut out: Vec<f64> = first.data.iter().map(|&v| coeffs[0] * v).collect();
    for (c, v) in coeffs[1..].iter().zip(&volumes[1..]) {
        for (o, &x) in out.iter_mut().zip(&v.data) {
            *o += c * x;
        }
    }
    Ok(ImageVolume::from_parts(first.shape.clone(), out))
}

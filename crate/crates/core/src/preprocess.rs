//! Intensity normalization and age binning.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::{Image, NormalizedSlice, Slice};

/// z-scores are clipped to this many standard deviations before being
/// mapped onto [-1, 1].
pub const CLIP_SIGMA: f64 = 3.0;

/// Mean and population standard deviation of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub mean: f64,
    pub std: f64,
}

impl IntensityStats {
    pub fn of(image: &Image) -> Result<Self> {
        let n = image.len() as f64;
        let mean = image.mean();
        let var = image
            .as_slice()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let std = libm::sqrt(var);
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::Degenerate(format!(
                "slice has zero intensity variance (std = {std})"
            )));
        }
        Ok(Self { mean, std })
    }

    /// z-score with these statistics, clip to +-3, scale by 1/3.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let mapped = image
            .as_slice()
            .iter()
            .map(|v| ((v - self.mean) / self.std).clamp(-CLIP_SIGMA, CLIP_SIGMA) / CLIP_SIGMA)
            .collect();
        Image::from_vec(image.rows(), image.cols(), mapped)
    }
}

/// Per-slice z-scores (population standard deviation).
pub fn z_scores(image: &Image) -> Result<Vec<f64>> {
    let s = IntensityStats::of(image)?;
    Ok(image.as_slice().iter().map(|v| (v - s.mean) / s.std).collect())
}

/// z-score, clip to +-3, then scale by 1/3 onto [-1, 1].
pub fn normalize_image(image: &Image) -> Result<Image> {
    IntensityStats::of(image)?.apply(image)
}

pub fn normalize_intensity(slice: &Slice) -> Result<NormalizedSlice> {
    Ok(NormalizedSlice::new_unchecked(
        normalize_image(&slice.image)?,
        slice.meta,
    ))
}

/// Normalizes every visit of one subject with the statistics of the first
/// visit. The first slice comes out exactly as [`normalize_intensity`] would
/// produce it, and a voxel that darkens between visits stays darker.
pub fn normalize_trajectory(visits: &[Slice]) -> Result<Vec<NormalizedSlice>> {
    let Some(first) = visits.first() else {
        return Ok(Vec::new());
    };
    let stats = IntensityStats::of(&first.image)?;
    visits
        .iter()
        .map(|v| {
            if v.meta.subject_id != first.meta.subject_id {
                return Err(invalid(format!(
                    "visit of subject {} in the trajectory of subject {}",
                    v.meta.subject_id, first.meta.subject_id
                )));
            }
            first.image.ensure_same_shape(&v.image)?;
            Ok(NormalizedSlice::new_unchecked(stats.apply(&v.image)?, v.meta))
        })
        .collect()
}

/// Uniform age bins over `[age_min, age_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeBinning {
    bins: usize,
    age_min: f64,
    age_max: f64,
}

impl Default for AgeBinning {
    fn default() -> Self {
        Self {
            bins: 10,
            age_min: 63.0,
            age_max: 87.0,
        }
    }
}

impl AgeBinning {
    pub fn new(bins: usize, age_min: f64, age_max: f64) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("age binning needs at least two bins"));
        }
        if !(age_max > age_min) {
            return Err(invalid("age_max must exceed age_min"));
        }
        Ok(Self {
            bins,
            age_min,
            age_max,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn age_min(&self) -> f64 {
        self.age_min
    }

    pub fn age_max(&self) -> f64 {
        self.age_max
    }

    pub fn width(&self) -> f64 {
        (self.age_max - self.age_min) / self.bins as f64
    }

    /// Center of bin `i` (0-based).
    pub fn center(&self, i: usize) -> f64 {
        self.age_min + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    /// Lower neighbouring bin `a` (0-based) and blend weight `alpha` such that
    /// `alpha * c_a + (1 - alpha) * c_{a+1}` reproduces `age`; ages before the
    /// first center clamp to `(0, 1)` and ages past the last to
    /// `(bins - 2, 0)`.
    pub fn age_to_bin(&self, age: f64) -> Result<(usize, f64)> {
        if !(self.age_min..=self.age_max).contains(&age) {
            return Err(invalid(format!(
                "age {age} outside [{}, {}]",
                self.age_min, self.age_max
            )));
        }
        let last = self.bins - 1;
        if age <= self.center(0) {
            return Ok((0, 1.0));
        }
        if age >= self.center(last) {
            return Ok((last - 1, 0.0));
        }
        let mut a = 0;
        while a + 1 < last && self.center(a + 1) <= age {
            a += 1;
        }
        let (lo, hi) = (self.center(a), self.center(a + 1));
        Ok((a, (hi - age) / (hi - lo)))
    }
}

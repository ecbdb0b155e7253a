//! Grayscale slices and their clinical metadata.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Ordinal clinical stage: 0 cognitively normal, 1 subjective memory
/// concern, 2 mild cognitive impairment, 3 Alzheimer's disease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Diagnosis(u8);

impl Diagnosis {
    pub const MAX: u8 = 3;

    pub fn new(code: u8) -> Result<Self> {
        if code > Self::MAX {
            return Err(invalid(format!("diagnosis code {code} outside 0..=3")));
        }
        Ok(Self(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }

    /// Diagnosis scaled to [0, 1].
    pub fn unit(self) -> f64 {
        f64::from(self.0) / f64::from(Self::MAX)
    }

    pub fn all() -> [Diagnosis; 4] {
        [Self(0), Self(1), Self(2), Self(3)]
    }
}

/// Row-major 2D real image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                got: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows, self.cols],
                got: vec![other.rows, other.cols],
            });
        }
        Ok(())
    }
}

/// Identity of a slice within a cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceMeta {
    pub subject_id: u32,
    pub age: f64,
    pub diagnosis: Diagnosis,
}

/// One acquired (or rendered) slice in raw intensity units.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub image: Image,
    pub meta: SliceMeta,
}

/// A slice after intensity normalization; every pixel lies in [-1, 1].
///
/// Only [`crate::preprocess::normalize_intensity`] and the crate's own
/// generators construct values of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSlice {
    image: Image,
    pub meta: SliceMeta,
}

impl NormalizedSlice {
    pub(crate) fn new_unchecked(image: Image, meta: SliceMeta) -> Self {
        Self { image, meta }
    }

    /// Wraps an image already known to be in [-1, 1], e.g. one read back
    /// from disk or produced by the generator network.
    pub fn from_unit_range(image: Image, meta: SliceMeta) -> Result<Self> {
        if let Some(v) = image.as_slice().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(invalid(format!("normalized pixel {v} outside [-1, 1]")));
        }
        Ok(Self { image, meta })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn into_image(self) -> Image {
        self.image
    }
}

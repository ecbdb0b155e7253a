//! Procedural longitudinal brain phantoms with known atrophy dynamics.
//!
//! Anatomy is two nested, co-rotated ellipses: a brain ellipse of uniform
//! "cortex" intensity and a ventricle ellipse of fixed low intensity. With
//! age the cortex darkens linearly and the ventricle grows, both at rates
//! that increase with the diagnosis code. Clean renders are therefore
//! voxelwise non-increasing in age; Gaussian noise is added afterwards.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::image::{Diagnosis, Image, Slice, SliceMeta};
use crate::regions::Mask;
use crate::rng::stream;

/// Intensity of cerebrospinal fluid inside the ventricles.
pub const VENTRICLE_INTENSITY: f64 = 0.1;
/// Regularizer in regional intensity ratios.
pub const RATIO_EPS: f64 = 0.1;
/// Ventricle growth rates are expressed for this grid size and scaled
/// proportionally for others.
const REFERENCE_GRID: f64 = 64.0;
const MAX_OFFSET: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub grid_size: usize,
    pub age_min: f64,
    pub age_max: f64,
    pub base_cortex_intensity: f64,
    /// Cortex intensity loss per year at diagnosis 0.
    pub atrophy_rate_base: f64,
    /// Additional loss per year per diagnosis unit.
    pub atrophy_rate_per_dx: f64,
    /// Ventricle semi-axis growth in voxels per year (64-voxel grid).
    pub ventricle_growth_base: f64,
    pub ventricle_growth_per_dx: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            grid_size: 64,
            age_min: 63.0,
            age_max: 87.0,
            base_cortex_intensity: 0.85,
            atrophy_rate_base: 0.004,
            atrophy_rate_per_dx: 0.004,
            ventricle_growth_base: 0.05,
            ventricle_growth_per_dx: 0.05,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 16 {
            return Err(invalid(format!("grid size {} below 16", self.grid_size)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise sigma must be non-negative"));
        }
        if !(self.age_max > self.age_min) {
            return Err(invalid("age_max must exceed age_min"));
        }
        if self.atrophy_rate_base < 0.0
            || self.atrophy_rate_per_dx < 0.0
            || self.ventricle_growth_base < 0.0
            || self.ventricle_growth_per_dx < 0.0
        {
            return Err(invalid("atrophy and growth rates must be non-negative"));
        }
        let worst = self.base_cortex_intensity
            - (self.atrophy_rate_base + 3.0 * self.atrophy_rate_per_dx)
                * (self.age_max - self.age_min);
        if worst <= 0.05 {
            return Err(invalid(format!(
                "cortex intensity would fall to {worst:.4} by age_max"
            )));
        }
        Ok(())
    }

    /// Cortex intensity loss per year.
    pub fn atrophy_rate(&self, d: Diagnosis) -> f64 {
        self.atrophy_rate_base + self.atrophy_rate_per_dx * f64::from(d.code())
    }

    /// Ventricle semi-axis growth in voxels per year at this grid size.
    pub fn ventricle_growth(&self, d: Diagnosis) -> f64 {
        (self.ventricle_growth_base + self.ventricle_growth_per_dx * f64::from(d.code()))
            * self.grid_size as f64
            / REFERENCE_GRID
    }

    fn check_age(&self, age: f64) -> Result<()> {
        if !(self.age_min..=self.age_max).contains(&age) {
            return Err(invalid(format!(
                "age {age} outside [{}, {}]",
                self.age_min, self.age_max
            )));
        }
        Ok(())
    }
}

/// Per-subject anatomy; independent of diagnosis and age.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectMorphology {
    /// Ellipse center in voxel coordinates (row, col).
    pub center: (f64, f64),
    /// Brain semi-axes (along, across) in voxels.
    pub brain_axes: (f64, f64),
    pub rotation: f64,
    /// Ventricle semi-axes at `age_min`.
    pub ventricle_axes: (f64, f64),
    pub intensity_offset: f64,
}

impl SubjectMorphology {
    /// Draws a morphology that fits the grid with a two-voxel margin.
    pub fn sample(config: &PhantomConfig, subject_seed: u64) -> Self {
        let mut rng = stream(config.seed, subject_seed, 0);
        let half = config.grid_size as f64 / 2.0;
        let room = half - 3.5;
        let along = room * rng.random_range(0.78..0.92);
        let across = room * rng.random_range(0.68..0.82);
        let center = (
            half - 0.5 + rng.random_range(-1.0..1.0),
            half - 0.5 + rng.random_range(-1.0..1.0),
        );
        let rotation = rng.random_range(-0.25..0.25);
        let ventricle_axes = (
            along * rng.random_range(0.18..0.26),
            across * rng.random_range(0.12..0.20),
        );
        let intensity_offset = rng.random_range(-MAX_OFFSET..MAX_OFFSET);
        Self {
            center,
            brain_axes: (along, across),
            rotation,
            ventricle_axes,
            intensity_offset,
        }
    }

    /// Ventricle semi-axes at `age`.
    pub fn ventricle_at(&self, config: &PhantomConfig, age: f64, d: Diagnosis) -> (f64, f64) {
        let grow = config.ventricle_growth(d) * (age - config.age_min);
        (self.ventricle_axes.0 + grow, self.ventricle_axes.1 + grow)
    }

    fn ellipse_coords(&self, r: usize, c: usize) -> (f64, f64) {
        let dy = r as f64 - self.center.0;
        let dx = c as f64 - self.center.1;
        let (s, co) = (libm::sin(self.rotation), libm::cos(self.rotation));
        (dy * co + dx * s, -dy * s + dx * co)
    }

    pub fn in_brain(&self, r: usize, c: usize) -> bool {
        let (u, v) = self.ellipse_coords(r, c);
        inside(u, v, self.brain_axes)
    }

    pub fn in_ventricle(&self, r: usize, c: usize, axes: (f64, f64)) -> bool {
        let (u, v) = self.ellipse_coords(r, c);
        inside(u, v, axes)
    }
}

fn inside(u: f64, v: f64, axes: (f64, f64)) -> bool {
    (u / axes.0) * (u / axes.0) + (v / axes.1) * (v / axes.1) <= 1.0
}

/// Cortex intensity of a subject at `age` (before clamping).
pub fn cortex_intensity(
    config: &PhantomConfig,
    morphology: &SubjectMorphology,
    age: f64,
    d: Diagnosis,
) -> f64 {
    config.base_cortex_intensity + morphology.intensity_offset
        - config.atrophy_rate(d) * (age - config.age_min)
}

/// Noise-free image of a subject at `age`, values in [0, 1].
pub fn render_clean(
    morphology: &SubjectMorphology,
    age: f64,
    diagnosis: Diagnosis,
    config: &PhantomConfig,
) -> Result<Image> {
    config.check_age(age)?;
    let cortex = cortex_intensity(config, morphology, age, diagnosis).clamp(0.0, 1.0);
    let ventricle = VENTRICLE_INTENSITY.min(cortex);
    let axes = morphology.ventricle_at(config, age, diagnosis);
    let n = config.grid_size;
    Ok(Image::from_fn(n, n, |r, c| {
        if !morphology.in_brain(r, c) {
            0.0
        } else if morphology.in_ventricle(r, c, axes) {
            ventricle
        } else {
            cortex
        }
    }))
}

/// Ordered visits of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTrajectory {
    pub subject_id: u32,
    pub diagnosis: Diagnosis,
    pub morphology: SubjectMorphology,
    pub slices: Vec<Slice>,
}

impl SubjectTrajectory {
    pub fn ages(&self) -> impl Iterator<Item = f64> + '_ {
        self.slices.iter().map(|s| s.meta.age)
    }
}

/// Renders `n_visits` visits spaced `interval` years apart starting at
/// `baseline_age`, adding clipped Gaussian noise to each clean image.
pub fn sample_subject(
    config: &PhantomConfig,
    subject_seed: u64,
    diagnosis: Diagnosis,
    baseline_age: f64,
    n_visits: usize,
    interval: f64,
) -> Result<SubjectTrajectory> {
    config.validate()?;
    if n_visits == 0 {
        return Err(invalid("a trajectory needs at least one visit"));
    }
    if n_visits > 1 && !(interval > 0.0) {
        return Err(invalid("visit interval must be positive"));
    }
    let last = baseline_age + (n_visits - 1) as f64 * interval;
    if baseline_age < config.age_min || last > config.age_max {
        return Err(invalid(format!(
            "visits span [{baseline_age}, {last}] outside [{}, {}]",
            config.age_min, config.age_max
        )));
    }
    let morphology = SubjectMorphology::sample(config, subject_seed);
    let subject_id = subject_seed as u32;
    let mut noise_rng = stream(config.seed, subject_seed, 1);
    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("finite sigma"));
    let clip = 5.0 * config.noise_sigma;
    let mut slices = Vec::with_capacity(n_visits);
    for visit in 0..n_visits {
        let age = baseline_age + visit as f64 * interval;
        let mut image = render_clean(&morphology, age, diagnosis, config)?;
        if let Some(noise) = &noise {
            for v in image.as_mut_slice() {
                *v += noise.sample(&mut noise_rng).clamp(-clip, clip);
            }
        }
        slices.push(Slice {
            image,
            meta: SliceMeta {
                subject_id,
                age,
                diagnosis,
            },
        });
    }
    Ok(SubjectTrajectory {
        subject_id,
        diagnosis,
        morphology,
        slices,
    })
}

/// Shape of a synthetic cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub subjects: usize,
    pub visits: usize,
    pub interval: f64,
    /// Subject seed (and id) of the first subject; later subjects count up.
    pub first_subject: u64,
}

/// Draws diagnosis uniformly in 0..=3 and a baseline age that leaves room
/// for every visit, then renders each subject.
pub fn sample_cohort(config: &PhantomConfig, spec: &CohortSpec) -> Result<Vec<SubjectTrajectory>> {
    let span = spec.visits.saturating_sub(1) as f64 * spec.interval;
    let latest_baseline = config.age_max - span;
    if latest_baseline < config.age_min {
        return Err(invalid(format!(
            "{} visits every {} years do not fit the age range",
            spec.visits, spec.interval
        )));
    }
    (0..spec.subjects as u64)
        .map(|i| {
            let subject_seed = spec.first_subject + i;
            let mut rng = stream(config.seed, subject_seed, 2);
            let diagnosis = Diagnosis::new(rng.random_range(0..=Diagnosis::MAX))?;
            let baseline = if latest_baseline > config.age_min {
                rng.random_range(config.age_min..latest_baseline)
            } else {
                config.age_min
            };
            sample_subject(config, subject_seed, diagnosis, baseline, spec.visits, spec.interval)
        })
        .collect()
}

/// Ratio of masked clean-image sums between two ages,
/// `(sum late*mask + eps) / (sum early*mask + eps)` with `eps = 0.1`.
pub fn ground_truth_ratio(
    morphology: &SubjectMorphology,
    mask: &Mask,
    age_early: f64,
    age_late: f64,
    diagnosis: Diagnosis,
    config: &PhantomConfig,
) -> Result<f64> {
    if age_early > age_late {
        return Err(invalid("early age must not exceed late age"));
    }
    let early = render_clean(morphology, age_early, diagnosis, config)?;
    let late = render_clean(morphology, age_late, diagnosis, config)?;
    let num = mask.masked_sum(&late)? + RATIO_EPS;
    let den = mask.masked_sum(&early)? + RATIO_EPS;
    Ok(num / den)
}

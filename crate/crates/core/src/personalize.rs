//! Test-time fine-tuning on a single baseline slice.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::image::NormalizedSlice;
use crate::rng::stream;
use crate::train::{round_to_f32, train_step, Constraints, ModelCheckpoint, Optimizers, TrainSample};

/// Iterations used at test time unless configured otherwise.
pub const DEFAULT_ITERATIONS: usize = 200;
const PERSONALIZE_STREAM: u64 = 0x7065_7273;

/// Runs `iterations` training steps on the singleton batch of `baseline`
/// with fresh ADAM state. The loss configuration is the checkpoint's own.
pub fn personalize(
    checkpoint: &ModelCheckpoint,
    baseline: &NormalizedSlice,
    iterations: usize,
    constraints: Option<&Constraints<'_>>,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let arch = checkpoint.config.arch;
    if checkpoint.nets.arch != arch {
        return Err(Error::InvalidInput("checkpoint networks disagree with its configuration".into()));
    }
    let shape = baseline.image().shape();
    if shape != (arch.grid, arch.grid) {
        return Err(Error::ShapeMismatch {
            expected: vec![arch.grid, arch.grid],
            got: vec![shape.0, shape.1],
        });
    }
    if iterations == 0 {
        return Ok(checkpoint.clone());
    }
    let sample = TrainSample::new(baseline, &checkpoint.config.binning()?)?;
    let mut nets = checkpoint.nets.clone();
    let mut opt = Optimizers::new(&nets);
    let mut rng = stream(seed, u64::from(baseline.meta.subject_id), PERSONALIZE_STREAM);
    let batch = [&sample];
    for i in 0..iterations {
        train_step(&mut nets, &mut opt, &batch, &checkpoint.config, constraints, &mut rng)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at personalization iteration {i}")),
                other => other,
            })?;
    }
    round_to_f32(&mut nets);
    Ok(ModelCheckpoint {
        nets,
        config: checkpoint.config,
        epochs_done: checkpoint.epochs_done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Diagnosis, Image, SliceMeta};
    use crate::nets::ArchConfig;
    use crate::train::TrainConfig;

    fn setup() -> (ModelCheckpoint, NormalizedSlice) {
        let config = TrainConfig {
            arch: ArchConfig {
                grid: 16,
                latent: 6,
                bins: 4,
                base_channels: 2,
            },
            enable_p: false,
            ..Default::default()
        };
        let slice = NormalizedSlice::from_unit_range(
            Image::from_fn(16, 16, |r, c| if (r as i32 - 8).pow(2) + (c as i32 - 8).pow(2) < 30 { 0.6 } else { -0.9 }),
            SliceMeta {
                subject_id: 3,
                age: 71.0,
                diagnosis: Diagnosis::new(2).unwrap(),
            },
        )
        .unwrap();
        (ModelCheckpoint::initial(&config).unwrap(), slice)
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (ckpt, slice) = setup();
        assert_eq!(personalize(&ckpt, &slice, 0, None, 1).unwrap(), ckpt);
    }

    #[test]
    fn deterministic_and_source_untouched() {
        let (ckpt, slice) = setup();
        let before = ckpt.clone();
        let a = personalize(&ckpt, &slice, 3, None, 1).unwrap();
        let b = personalize(&ckpt, &slice, 3, None, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.nets, ckpt.nets);
        assert_eq!(ckpt, before);
    }

    #[test]
    fn wrong_grid_is_rejected() {
        let (ckpt, _) = setup();
        let slice = NormalizedSlice::from_unit_range(
            Image::filled(32, 32, 0.1),
            SliceMeta {
                subject_id: 0,
                age: 70.0,
                diagnosis: Diagnosis::new(0).unwrap(),
            },
        )
        .unwrap();
        assert!(matches!(personalize(&ckpt, &slice, 1, None, 0), Err(Error::ShapeMismatch { .. })));
    }
}

//! Similarity and monotonicity metrics, and per-subject evaluation of a
//! trained model against ground-truth follow-ups.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::{Diagnosis, Image, NormalizedSlice};
use crate::nets::Nets;
use crate::personalize::personalize;
use crate::preprocess::AgeBinning;
use crate::train::{Constraints, ModelCheckpoint};

/// Follow-ups closer than this to the baseline are not evaluated.
pub const MIN_FOLLOWUP_YEARS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the inputs.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 2.0,
        }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..window)
        .map(|i| libm::exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a row-major image.
fn filter_valid(data: &[f64], rows: usize, cols: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let (or, oc) = (rows - k + 1, cols - k + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        for c in 0..oc {
            tmp[r * oc + c] = w.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..k).map(|i| w[i] * tmp[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM with the default constants.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    ssim_with(x, y, &SsimParams::default())
}

/// Mean SSIM over all window positions that fit inside the image.
pub fn ssim_with(x: &Image, y: &Image, p: &SsimParams) -> Result<f64> {
    x.ensure_same_shape(y)?;
    let (rows, cols) = x.shape();
    if rows < p.window || cols < p.window || p.window == 0 {
        return Err(invalid(format!(
            "{rows}x{cols} image is smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let w = gaussian(p.window, p.sigma);
    let (xs, ys) = (x.as_slice(), y.as_slice());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { xs.iter().zip(ys).map(|(&a, &b)| f(a, b)).collect() };
    let mx = filter_valid(xs, rows, cols, &w);
    let my = filter_valid(ys, rows, cols, &w);
    let mxx = filter_valid(&prod(&|a, _| a * a), rows, cols, &w);
    let myy = filter_valid(&prod(&|_, b| b * b), rows, cols, &w);
    let mxy = filter_valid(&prod(&|a, b| a * b), rows, cols, &w);
    let c1 = (p.k1 * p.range) * (p.k1 * p.range);
    let c2 = (p.k2 * p.range) * (p.k2 * p.range);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

/// Fraction of (consecutive frame pair, voxel) events where intensity rises
/// by more than `delta`.
pub fn monotonicity_violation_rate(seq: &[f64], frames: usize, delta: f64) -> Result<f64> {
    if frames < 2 {
        return Err(invalid(format!("sequence needs at least 2 frames, got {frames}")));
    }
    if seq.is_empty() || !seq.len().is_multiple_of(frames) {
        return Err(invalid("sequence length is not a multiple of the frame count"));
    }
    let px = seq.len() / frames;
    let mut violations = 0usize;
    for f in 0..frames - 1 {
        for k in 0..px {
            if seq[(f + 1) * px + k] > seq[f * px + k] + delta {
                violations += 1;
            }
        }
    }
    Ok(violations as f64 / (px * (frames - 1)) as f64)
}

/// Frame at an arbitrary age: the blend of the two neighbouring bin frames.
pub fn synthesize_at_age(
    nets: &Nets,
    latent: &[f64],
    d: Diagnosis,
    use_c: bool,
    age: f64,
    binning: &AgeBinning,
) -> Result<Image> {
    let (a, alpha) = binning.age_to_bin(age)?;
    let frames = nets.generate(
        &[latent, latent].concat(),
        &[a, a + 1],
        &[d, d],
        use_c,
    )?;
    let px = nets.arch.pixels();
    let blended = frames[..px]
        .iter()
        .zip(&frames[px..])
        .map(|(&ga, &gn)| alpha * ga + (1.0 - alpha) * gn)
        .collect();
    Image::from_vec(nets.arch.grid, nets.arch.grid, blended)
}

/// SSIM of each evaluated follow-up visit of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEval {
    pub subject_id: u32,
    pub ages: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl SubjectEval {
    pub fn mean(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len() as f64
    }
}

/// Settings of the optional test-time personalization.
#[derive(Debug, Clone, Copy)]
pub struct Personalization<'a> {
    pub iterations: usize,
    pub constraints: Option<&'a Constraints<'a>>,
    pub seed: u64,
}

/// Encodes the baseline (first visit), optionally after personalizing on it,
/// and scores the synthesized frame at every follow-up at least two years
/// later. `Ok(None)` when no follow-up qualifies.
pub fn evaluate_subject(
    checkpoint: &ModelCheckpoint,
    visits: &[NormalizedSlice],
    personalization: Option<&Personalization<'_>>,
) -> Result<Option<SubjectEval>> {
    let Some(baseline) = visits.first() else {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    };
    let followups: Vec<&NormalizedSlice> = visits[1..]
        .iter()
        .filter(|v| v.meta.age - baseline.meta.age >= MIN_FOLLOWUP_YEARS)
        .collect();
    if followups.is_empty() {
        return Ok(None);
    }
    let tuned;
    let ckpt = match personalization {
        Some(p) => {
            tuned = personalize(checkpoint, baseline, p.iterations, p.constraints, p.seed)?;
            &tuned
        }
        None => checkpoint,
    };
    let nets = &ckpt.nets;
    let binning = ckpt.config.binning()?;
    let latent = nets.encode(baseline.image().as_slice(), 1)?;
    let mut out = SubjectEval {
        subject_id: baseline.meta.subject_id,
        ages: Vec::new(),
        ssim: Vec::new(),
    };
    for f in followups {
        let synth = synthesize_at_age(
            nets,
            &latent,
            baseline.meta.diagnosis,
            ckpt.config.enable_c,
            f.meta.age,
            &binning,
        )?;
        out.ages.push(f.meta.age);
        out.ssim.push(ssim(&synth, f.image())?);
    }
    Ok(Some(out))
}

/// Reconstruction of the baseline at its own age, scored against itself.
pub fn baseline_reconstruction_ssim(checkpoint: &ModelCheckpoint, baseline: &NormalizedSlice) -> Result<f64> {
    let nets = &checkpoint.nets;
    let latent = nets.encode(baseline.image().as_slice(), 1)?;
    let synth = synthesize_at_age(
        nets,
        &latent,
        baseline.meta.diagnosis,
        checkpoint.config.enable_c,
        baseline.meta.age,
        &checkpoint.config.binning()?,
    )?;
    ssim(&synth, baseline.image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::SliceMeta;
    use crate::nets::ArchConfig;
    use crate::train::TrainConfig;
    use proptest::prelude::*;

    /// Direct per-window evaluation of the SSIM definition.
    fn ssim_direct(x: &Image, y: &Image) -> f64 {
        let (rows, cols) = x.shape();
        let k = 11usize;
        let sigma: f64 = 1.5;
        let mut w = [[0.0f64; 11]; 11];
        let mut total_w = 0.0;
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                total_w += *v;
            }
        }
        let (c1, c2) = ((0.01f64 * 2.0).powi(2), (0.03f64 * 2.0).powi(2));
        let mut acc = 0.0;
        let mut count = 0;
        for r0 in 0..=rows - k {
            for c0 in 0..=cols - k {
                let (mut ux, mut uy) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let ww = w[i][j] / total_w;
                        ux += ww * x.get(r0 + i, c0 + j);
                        uy += ww * y.get(r0 + i, c0 + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let ww = w[i][j] / total_w;
                        let (a, b) = (x.get(r0 + i, c0 + j) - ux, y.get(r0 + i, c0 + j) - uy);
                        vx += ww * a * a;
                        vy += ww * b * b;
                        cxy += ww * a * b;
                    }
                }
                acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    fn texture(seed: f64, n: usize) -> Image {
        Image::from_fn(n, n, |r, c| {
            (libm::sin(seed + r as f64 * 0.9) * libm::cos(seed * 1.7 + c as f64 * 0.6) * 0.9).clamp(-1.0, 1.0)
        })
    }

    #[test]
    fn identical_images_score_one() {
        let x = texture(0.3, 20);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn constant_pair_matches_direct_formula() {
        let x = Image::filled(16, 16, 0.0);
        let y = Image::filled(16, 16, 0.5);
        let v = ssim(&x, &y).unwrap();
        assert!((v - ssim_direct(&x, &y)).abs() < 1e-6);
        // luminance term only: C1 / (0.25 + C1)
        let c1 = 0.0004;
        assert!((v - c1 / (0.25 + c1)).abs() < 1e-9);
    }

    #[test]
    fn textured_pairs_match_direct_formula() {
        for s in 0..4 {
            let x = texture(s as f64, 18);
            let y = texture(s as f64 + 0.4, 18).map(|v| v * 0.7 + 0.1);
            assert!((ssim(&x, &y).unwrap() - ssim_direct(&x, &y)).abs() < 1e-6);
        }
    }

    #[test]
    fn small_images_are_rejected() {
        let x = Image::zeros(10, 20);
        assert!(ssim(&x, &x).is_err());
        assert!(ssim(&Image::zeros(12, 12), &Image::zeros(12, 13)).is_err());
    }

    #[test]
    fn violation_rate_examples() {
        assert_eq!(monotonicity_violation_rate(&[0.5, 0.4, 0.3, 0.2], 4, 0.0).unwrap(), 0.0);
        assert_eq!(monotonicity_violation_rate(&[0.1, 0.2, 0.3], 3, 0.0).unwrap(), 1.0);
        assert_eq!(monotonicity_violation_rate(&[0.5, 0.6, 0.4], 3, 0.0).unwrap(), 0.5);
        assert_eq!(monotonicity_violation_rate(&[0.5, 0.6, 0.4], 3, 0.2).unwrap(), 0.0);
        assert!(monotonicity_violation_rate(&[0.5], 1, 0.0).is_err());
    }

    fn checkpoint() -> ModelCheckpoint {
        ModelCheckpoint::initial(&TrainConfig {
            arch: ArchConfig {
                grid: 16,
                latent: 6,
                bins: 4,
                base_channels: 2,
            },
            enable_p: false,
            ..Default::default()
        })
        .unwrap()
    }

    fn visit(age: f64, v: f64) -> NormalizedSlice {
        NormalizedSlice::from_unit_range(
            texture(v, 16),
            SliceMeta {
                subject_id: 7,
                age,
                diagnosis: Diagnosis::new(1).unwrap(),
            },
        )
        .unwrap()
    }

    #[test]
    fn only_followups_two_years_out_are_scored() {
        let ck = checkpoint();
        let visits = [visit(70.0, 0.0), visit(71.0, 0.1), visit(72.5, 0.2), visit(74.0, 0.3)];
        let e = evaluate_subject(&ck, &visits, None).unwrap().unwrap();
        assert_eq!(e.ages, vec![72.5, 74.0]);
        assert!(e.ssim.iter().all(|s| (-1.0..=1.0).contains(s)));
        assert_eq!(evaluate_subject(&ck, &visits[..2], None).unwrap(), None);
    }

    #[test]
    fn blended_frame_lies_between_bin_frames() {
        let ck = checkpoint();
        let b = ck.config.binning().unwrap();
        let z = vec![0.1; 6];
        let d = Diagnosis::new(0).unwrap();
        let at_center = synthesize_at_age(&ck.nets, &z, d, true, b.center(1), &b).unwrap();
        let direct = ck.nets.generate(&z, &[1], &[d], true).unwrap();
        assert_eq!(at_center.as_slice(), &direct[..]);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0.0f64..6.0, s2 in 0.0f64..6.0, k in -1.0f64..1.0) {
            let x = texture(s1, 14);
            let y = texture(s2, 14).map(|v| v * k);
            let a = ssim(&x, &y).unwrap();
            let b = ssim(&y, &x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}

//! Training objectives and their gradients.
//!
//! Frame sequences are `A` contiguous `M*N` frames. Bin indices are 0-based.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::Diagnosis;
use crate::regions::RegionMaskSet;
use crate::svr::{RateTable, RATIO_EPS};

/// Weight of each adversarial and constraint term in the total.
pub const TERM_WEIGHT: f64 = 0.0003;
/// Weight of the deformation term in the total.
pub const DEF_WEIGHT: f64 = 0.2;
/// Default smoothness of the sign surrogate.
pub const DEFAULT_TAU: f64 = 0.01;
/// Discriminator probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// How `sgn` is evaluated in the voxel term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignMode {
    Exact,
    Smooth { tau: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub e_z: f64,
    pub g_b: f64,
    pub l_vox: f64,
    pub l_reg: f64,
    pub l_def: f64,
    pub l_tot: f64,
    pub d_z_loss: f64,
    pub d_b_loss: f64,
}

impl LossBreakdown {
    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.e_z += b.e_z;
            out.g_b += b.g_b;
            out.l_vox += b.l_vox;
            out.l_reg += b.l_reg;
            out.l_def += b.l_def;
            out.l_tot += b.l_tot;
            out.d_z_loss += b.d_z_loss;
            out.d_b_loss += b.d_b_loss;
        }
        out.e_z /= n;
        out.g_b /= n;
        out.l_vox /= n;
        out.l_reg /= n;
        out.l_def /= n;
        out.l_tot /= n;
        out.d_z_loss /= n;
        out.d_b_loss /= n;
        out
    }
}

/// Weighted total of the generator-side terms; discriminator fields are 0.
pub fn total_loss(e_z: f64, g_b: f64, l_vox: f64, l_reg: f64, l_def: f64) -> LossBreakdown {
    LossBreakdown {
        e_z,
        g_b,
        l_vox,
        l_reg,
        l_def,
        l_tot: TERM_WEIGHT * (e_z + g_b + l_vox + l_reg) + DEF_WEIGHT * l_def,
        d_z_loss: 0.0,
        d_b_loss: 0.0,
    }
}

fn check_sequence(seq: &[f64], frames: usize, a: usize) -> Result<usize> {
    if frames < 2 {
        return Err(invalid(format!("sequence needs at least 2 frames, got {frames}")));
    }
    if seq.is_empty() || !seq.len().is_multiple_of(frames) {
        return Err(invalid(format!(
            "sequence of {} values does not split into {frames} frames",
            seq.len()
        )));
    }
    if a >= frames {
        return Err(invalid(format!("bin {a} outside 0..{frames}")));
    }
    Ok(seq.len() / frames)
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Voxel monotonicity term around bin `a`.
pub fn loss_vox(seq: &[f64], frames: usize, a: usize, mode: SignMode) -> Result<f64> {
    vox(seq, frames, a, mode, None)
}

/// Smooth voxel term and its gradient with respect to every sequence value.
pub fn loss_vox_grad(seq: &[f64], frames: usize, a: usize, tau: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; seq.len()];
    let v = vox(seq, frames, a, SignMode::Smooth { tau }, Some(&mut grad))?;
    Ok((v, grad))
}

fn vox(seq: &[f64], frames: usize, a: usize, mode: SignMode, mut grad: Option<&mut [f64]>) -> Result<f64> {
    let px = check_sequence(seq, frames, a)?;
    let norm = 1.0 / (px * (frames - 1)) as f64;
    let ga = &seq[a * px..(a + 1) * px];
    let mut total = 0.0;
    for p in (0..frames).filter(|&p| p != a) {
        let gp = &seq[p * px..(p + 1) * px];
        // the later frame minus the earlier one
        let dir = if p < a { 1.0 } else { -1.0 };
        for k in 0..px {
            let diff = dir * (ga[k] - gp[k]);
            match mode {
                SignMode::Exact => total += sgn(diff),
                SignMode::Smooth { tau } => {
                    let t = libm::tanh(diff / tau);
                    total += t;
                    if let Some(g) = grad.as_deref_mut() {
                        let dt = dir * (1.0 - t * t) / tau * norm;
                        g[a * px + k] += dt;
                        g[p * px + k] -= dt;
                    }
                }
            }
        }
    }
    Ok(total * norm)
}

/// Regional SVR consistency term around bin `a` for diagnosis `d`.
pub fn loss_reg(
    seq: &[f64],
    frames: usize,
    a: usize,
    d: Diagnosis,
    masks: &RegionMaskSet,
    rates: &RateTable,
) -> Result<f64> {
    reg(seq, frames, a, d, masks, rates, None)
}

pub fn loss_reg_grad(
    seq: &[f64],
    frames: usize,
    a: usize,
    d: Diagnosis,
    masks: &RegionMaskSet,
    rates: &RateTable,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; seq.len()];
    let v = reg(seq, frames, a, d, masks, rates, Some(&mut grad))?;
    Ok((v, grad))
}

fn reg(
    seq: &[f64],
    frames: usize,
    a: usize,
    d: Diagnosis,
    masks: &RegionMaskSet,
    rates: &RateTable,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let px = check_sequence(seq, frames, a)?;
    if masks.len() != rates.regions() {
        return Err(invalid(format!(
            "{} region masks but {} rate models",
            masks.len(),
            rates.regions()
        )));
    }
    if rates.bins() != frames {
        return Err(invalid(format!("rate table has {} bins, sequence {frames}", rates.bins())));
    }
    let (r, c) = masks.shape();
    if r * c != px {
        return Err(Error::ShapeMismatch {
            expected: vec![r, c],
            got: vec![px],
        });
    }
    let norm = 1.0 / (masks.len() * (frames - 1)) as f64;
    // regional sums in [0, 1] units, per frame and region
    let sums: Vec<Vec<f64>> = masks
        .masks()
        .iter()
        .map(|m| {
            (0..frames)
                .map(|f| {
                    let frame = &seq[f * px..(f + 1) * px];
                    m.bits()
                        .iter()
                        .zip(frame)
                        .filter_map(|(&b, &v)| b.then_some((v + 1.0) * 0.5))
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for (i, mask) in masks.masks().iter().enumerate() {
        for p in (0..frames).filter(|&p| p != a) {
            let (early, late) = if p < a { (p, a) } else { (a, p) };
            let num = sums[i][late] + RATIO_EPS;
            let den = sums[i][early] + RATIO_EPS;
            let ratio = num / den;
            let diff = rates.rate(i, early, late, d) - ratio;
            total += diff.abs();
            if let Some(g) = grad.as_deref_mut() {
                // d|pred - ratio| / d ratio
                let s = -sgn(diff) * norm;
                if s != 0.0 {
                    let d_late = s * 0.5 / den;
                    let d_early = -s * 0.5 * num / (den * den);
                    for (k, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
                        g[late * px + k] += d_late;
                        g[early * px + k] += d_early;
                    }
                }
            }
        }
    }
    Ok(total * norm)
}

fn blend_check(x: &[f64], g_a: &[f64], g_next: &[f64], alpha: f64) -> Result<()> {
    if x.len() != g_a.len() || x.len() != g_next.len() || x.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            got: vec![g_a.len(), g_next.len()],
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("blend weight {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Mean squared error between `x` and `alpha*g_a + (1-alpha)*g_next`.
pub fn loss_def(x: &[f64], g_a: &[f64], g_next: &[f64], alpha: f64) -> Result<f64> {
    blend_check(x, g_a, g_next, alpha)?;
    let s: f64 = x
        .iter()
        .zip(g_a.iter().zip(g_next))
        .map(|(&xv, (&a, &b))| {
            let e = alpha * a + (1.0 - alpha) * b - xv;
            e * e
        })
        .sum();
    Ok(s / x.len() as f64)
}

/// [`loss_def`] with gradients with respect to `g_a` and `g_next`.
pub fn loss_def_grad(x: &[f64], g_a: &[f64], g_next: &[f64], alpha: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    blend_check(x, g_a, g_next, alpha)?;
    let n = x.len() as f64;
    let mut ga = Vec::with_capacity(x.len());
    let mut gn = Vec::with_capacity(x.len());
    let mut s = 0.0;
    for ((&xv, &a), &b) in x.iter().zip(g_a).zip(g_next) {
        let e = alpha * a + (1.0 - alpha) * b - xv;
        s += e * e;
        ga.push(2.0 * e * alpha / n);
        gn.push(2.0 * e * (1.0 - alpha) / n);
    }
    Ok((s / n, ga, gn))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-log clamp(p)`.
pub fn neg_log(p: f64) -> f64 {
    -libm::log(clamp_prob(p))
}

/// `-log clamp(sigmoid(l))` (target "real") or `-log(1 - clamp(sigmoid(l)))`
/// (target "fake"), and its derivative in the logit. The derivative is zero
/// where the clamp is active.
pub fn logit_loss(logit: f64, real: bool) -> (f64, f64) {
    let p = crate::nets::disc_prob(logit);
    let active = p > PROB_CLAMP && p < 1.0 - PROB_CLAMP;
    if real {
        (neg_log(p), if active { p - 1.0 } else { 0.0 })
    } else {
        (neg_log(1.0 - p), if active { p } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses {
    pub d_z_loss: f64,
    pub e_z: f64,
    pub d_b_loss: f64,
    pub g_b: f64,
}

/// Discriminator outputs as probabilities: `dz_prior = D_z(z*)`,
/// `dz_encoded = D_z(E(x))`, `db_real = D_b(x)`, `db_fake = D_b(g)`.
pub fn adversarial_losses(
    dz_prior: &[f64],
    dz_encoded: &[f64],
    db_real: &[f64],
    db_fake: &[f64],
) -> Result<AdversarialLosses> {
    let lens = [dz_prior.len(), dz_encoded.len(), db_real.len(), db_fake.len()];
    if lens.contains(&0) {
        return Err(invalid("adversarial losses need a non-empty batch"));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(p)).sum::<f64>() / v.len() as f64;
    Ok(AdversarialLosses {
        d_z_loss: mean(dz_prior, &neg_log) + mean(dz_encoded, &|p| neg_log(1.0 - p)),
        e_z: mean(dz_encoded, &neg_log),
        d_b_loss: mean(db_real, &neg_log) + mean(db_fake, &|p| neg_log(1.0 - p)),
        g_b: mean(db_fake, &neg_log),
    })
}

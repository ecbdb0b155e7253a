//! Per-region epsilon-insensitive support vector regression of intensity
//! progression rates.
//!
//! Each region gets one RBF-kernel regressor over
//! `(age at baseline, age at follow-up, diagnosis)`, trained on regional
//! intensity ratios between a subject's baseline and later visits. The dual
//! is solved by sequential minimal optimization with second-order working
//! set selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::{Diagnosis, Image, NormalizedSlice};
use crate::regions::{Mask, RegionMaskSet};

/// Regularizer added to both regional sums.
pub const RATIO_EPS: f64 = 0.1;
/// Predictions are clamped into this interval.
pub const RATE_FLOOR: f64 = 0.05;
pub const RATE_CEIL: f64 = 1.0;
const TAU: f64 = 1e-12;

/// One training example: features and the observed regional ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePair {
    pub age_baseline: f64,
    pub age_followup: f64,
    pub diagnosis: f64,
    pub target: f64,
}

impl RatePair {
    fn features(&self) -> [f64; 3] {
        [self.age_baseline, self.age_followup, self.diagnosis]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Maximal KKT violation accepted at termination.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.01,
            gamma: 1.0 / 3.0,
            tolerance: 1e-6,
            max_iterations: 10_000_000,
        }
    }
}

/// Feature standardization fitted on the training pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Scaler {
    fn fit(rows: &[[f64; 3]]) -> Self {
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for k in 0..3 {
            mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean[k]) * (r[k] - mean[k])).sum::<f64>() / n;
            let s = libm::sqrt(var);
            std[k] = if s > 0.0 { s } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        [
            (x[0] - self.mean[0]) / self.std[0],
            (x[1] - self.mean[1]) / self.std[1],
            (x[2] - self.mean[2]) / self.std[2],
        ]
    }
}

fn rbf(gamma: f64, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d2 = (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]);
    libm::exp(-gamma * d2)
}

/// A support vector in raw feature units with its dual coefficient
/// `alpha - alpha*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportVector {
    pub features: [f64; 3],
    pub coef: f64,
}

/// Fitted regressor of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSvrModel {
    pub region_id: usize,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    pub bias: f64,
    pub support: Vec<SupportVector>,
    /// `None` until the model has been fitted.
    pub scaler: Option<Scaler>,
    /// Dual objective `0.5 a'Qa + p'a` at termination.
    pub dual_objective: f64,
    /// Largest KKT violation `max_up(-yG) - min_low(-yG)` at termination.
    pub kkt_gap: f64,
    pub iterations: usize,
}

impl RegionSvrModel {
    pub fn unfitted(region_id: usize, params: &SvrParams) -> Self {
        Self {
            region_id,
            gamma: params.gamma,
            c: params.c,
            epsilon: params.epsilon,
            bias: 0.0,
            support: Vec::new(),
            scaler: None,
            dual_objective: 0.0,
            kkt_gap: 0.0,
            iterations: 0,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.scaler.is_some()
    }

    /// Unclamped kernel expansion plus bias.
    pub fn predict_raw(&self, age_baseline: f64, age_followup: f64, d: f64) -> Result<f64> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::State(format!("region {} model is not fitted", self.region_id)))?;
        let q = scaler.apply([age_baseline, age_followup, d]);
        let mut f = self.bias;
        for sv in &self.support {
            f += sv.coef * rbf(self.gamma, &scaler.apply(sv.features), &q);
        }
        Ok(f)
    }

    /// Predicted progression ratio, clamped to [0.05, 1].
    pub fn predict_rate(&self, age_baseline: f64, age_followup: f64, d: Diagnosis) -> Result<f64> {
        Ok(self
            .predict_raw(age_baseline, age_followup, f64::from(d.code()))?
            .clamp(RATE_FLOOR, RATE_CEIL))
    }
}

/// Regional intensity ratio of two normalized images: pixels are mapped
/// from [-1, 1] to [0, 1] before summing under the mask.
pub fn regional_ratio(early: &Image, late: &Image, mask: &Mask, eps: f64) -> Result<f64> {
    early.ensure_same_shape(late)?;
    let num = masked_unit_sum(late, mask)?;
    let den = masked_unit_sum(early, mask)?;
    Ok((num + eps) / (den + eps))
}

pub(crate) fn masked_unit_sum(image: &Image, mask: &Mask) -> Result<f64> {
    if image.shape() != mask.shape() {
        let (r, c) = mask.shape();
        return Err(Error::ShapeMismatch {
            expected: vec![r, c],
            got: vec![image.rows(), image.cols()],
        });
    }
    Ok(mask
        .bits()
        .iter()
        .zip(image.as_slice())
        .filter_map(|(&b, &v)| b.then_some((v + 1.0) * 0.5))
        .sum())
}

/// Training pairs per region plus the number of pairs removed by the
/// monotone filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrDataset {
    pub per_region: Vec<Vec<RatePair>>,
    pub dropped: usize,
    pub total: usize,
}

impl SvrDataset {
    pub fn dropped_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dropped as f64 / self.total as f64
        }
    }
}

/// One pair per (subject, region, later visit) against the subject's first
/// visit; pairs whose ratio exceeds 1 are dropped. Each inner vector holds
/// one subject's visits in age order.
pub fn build_svr_dataset(subjects: &[Vec<NormalizedSlice>], masks: &RegionMaskSet) -> Result<SvrDataset> {
    let mut per_region = vec![Vec::new(); masks.len()];
    let (mut dropped, mut total) = (0, 0);
    for visits in subjects {
        let Some(base) = visits.first() else { continue };
        for later in &visits[1..] {
            if !(later.meta.age > base.meta.age) {
                return Err(invalid(format!(
                    "subject {} visits are not in increasing age order",
                    base.meta.subject_id
                )));
            }
            for (region, mask) in masks.masks().iter().enumerate() {
                let target = regional_ratio(base.image(), later.image(), mask, RATIO_EPS)?;
                total += 1;
                if target > 1.0 {
                    dropped += 1;
                    continue;
                }
                per_region[region].push(RatePair {
                    age_baseline: base.meta.age,
                    age_followup: later.meta.age,
                    diagnosis: f64::from(base.meta.diagnosis.code()),
                    target,
                });
            }
        }
    }
    Ok(SvrDataset {
        per_region,
        dropped,
        total,
    })
}

/// SMO state over the doubled variable set: index `t < l` is `alpha_t`
/// (sign +1) and `t >= l` is `alpha*_{t-l}` (sign -1).
struct Smo<'a> {
    l: usize,
    kernel: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    p: Vec<f64>,
}

impl Smo<'_> {
    fn sign(&self, t: usize) -> f64 {
        if t < self.l {
            1.0
        } else {
            -1.0
        }
    }

    /// Signed kernel entry `Q_st = y_s y_t K`.
    fn q(&self, s: usize, t: usize) -> f64 {
        self.sign(s) * self.sign(t) * self.kernel[(s % self.l) * self.l + t % self.l]
    }

    fn qd(&self, t: usize) -> f64 {
        let i = t % self.l;
        self.kernel[i * self.l + i]
    }

    fn upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// Second-order working set selection; `None` when the KKT gap is below
    /// `tol`. Also returns the current gap.
    fn select(&self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let n = 2 * self.l;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            let v = -self.sign(t) * self.grad[t];
            let in_up = if self.sign(t) > 0.0 { !self.upper(t) } else { !self.lower(t) };
            if in_up && v >= gmax {
                gmax = v;
                gmax_idx = Some(t);
            }
        }
        let Some(i) = gmax_idx else {
            return (None, 0.0);
        };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut obj_min = f64::INFINITY;
        for j in 0..n {
            let yj = self.sign(j);
            let in_low = if yj > 0.0 { !self.lower(j) } else { !self.upper(j) };
            if !in_low {
                continue;
            }
            let yg = yj * self.grad[j];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            let grad_diff = gmax + yg;
            if grad_diff > 0.0 {
                let mut quad = self.qd(i) + self.qd(j) - 2.0 * self.kernel[(i % self.l) * self.l + j % self.l];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    best = Some(j);
                }
            }
        }
        let gap = gmax + gmax2;
        if gap < tol {
            return (None, gap);
        }
        (best.map(|j| (i, j)), gap)
    }

    fn update(&mut self, i: usize, j: usize) {
        let (ci, cj) = (self.c, self.c);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let qij = self.q(i, j);
        if self.sign(i) != self.sign(j) {
            let mut quad = self.qd(i) + self.qd(j) + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            let (mut ai, mut aj) = (old_i + delta, old_j + delta);
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        } else {
            let mut quad = self.qd(i) + self.qd(j) - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            let (mut ai, mut aj) = (old_i - delta, old_j + delta);
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        }
        let (di, dj) = (self.alpha[i] - old_i, self.alpha[j] - old_j);
        for t in 0..2 * self.l {
            let g = self.q(t, i) * di + self.q(t, j) * dj;
            self.grad[t] += g;
        }
    }

    /// Offset `rho` of the decision function `sum coef K - rho`.
    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..2 * self.l {
            let y = self.sign(t);
            let yg = y * self.grad[t];
            if self.upper(t) {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.lower(t) {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        if free > 0 {
            sum_free / free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    fn objective(&self) -> f64 {
        (0..2 * self.l)
            .map(|t| self.alpha[t] * (self.grad[t] + self.p[t]))
            .sum::<f64>()
            / 2.0
    }
}

/// Standardized features and the RBF Gram matrix of a training set.
pub fn gram_matrix(pairs: &[RatePair], gamma: f64) -> (Scaler, Vec<f64>) {
    let raw: Vec<[f64; 3]> = pairs.iter().map(RatePair::features).collect();
    let scaler = Scaler::fit(&raw);
    let x: Vec<[f64; 3]> = raw.iter().map(|r| scaler.apply(*r)).collect();
    let l = x.len();
    let mut k = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..=i {
            let v = rbf(gamma, &x[i], &x[j]);
            k[i * l + j] = v;
            k[j * l + i] = v;
        }
    }
    (scaler, k)
}

/// Solves the epsilon-SVR dual for one region.
pub fn fit_svr(region_id: usize, pairs: &[RatePair], params: &SvrParams) -> Result<RegionSvrModel> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: pairs.len(),
        });
    }
    if !(params.c > 0.0 && params.gamma > 0.0 && params.epsilon >= 0.0) {
        return Err(invalid("SVR needs C > 0, gamma > 0 and epsilon >= 0"));
    }
    let l = pairs.len();
    let (scaler, kernel) = gram_matrix(pairs, params.gamma);
    let mut p = Vec::with_capacity(2 * l);
    p.extend(pairs.iter().map(|r| params.epsilon - r.target));
    p.extend(pairs.iter().map(|r| params.epsilon + r.target));
    let mut smo = Smo {
        l,
        kernel: &kernel,
        c: params.c,
        alpha: vec![0.0; 2 * l],
        grad: p.clone(),
        p,
    };
    let mut iterations = 0;
    let gap = loop {
        let (pick, gap) = smo.select(params.tolerance);
        match pick {
            Some((i, j)) if iterations < params.max_iterations => {
                smo.update(i, j);
                iterations += 1;
            }
            _ => break gap,
        }
    };
    let bias = -smo.rho();
    let support = pairs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let coef = smo.alpha[i] - smo.alpha[i + l];
            (coef != 0.0).then_some(SupportVector {
                features: r.features(),
                coef,
            })
        })
        .collect();
    Ok(RegionSvrModel {
        region_id,
        gamma: params.gamma,
        c: params.c,
        epsilon: params.epsilon,
        bias,
        support,
        scaler: Some(scaler),
        dual_objective: smo.objective(),
        kkt_gap: gap.max(0.0),
        iterations,
    })
}

/// One fitted model per region, in region order.
pub fn fit_all(dataset: &SvrDataset, params: &SvrParams) -> Result<Vec<RegionSvrModel>> {
    dataset
        .per_region
        .iter()
        .enumerate()
        .map(|(region, pairs)| fit_svr(region, pairs, params))
        .collect()
}

/// Predicted rates for every (early bin, late bin, diagnosis) at bin-center
/// ages, so training never evaluates kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    regions: usize,
    bins: usize,
    values: Vec<f64>,
}

impl RateTable {
    pub fn build(models: &[RegionSvrModel], centers: &[f64]) -> Result<Self> {
        let bins = centers.len();
        let mut values = vec![1.0; models.len() * bins * bins * 4];
        for (r, m) in models.iter().enumerate() {
            for early in 0..bins {
                for late in early + 1..bins {
                    for d in Diagnosis::all() {
                        values[Self::index(bins, r, early, late, d)] =
                            m.predict_rate(centers[early], centers[late], d)?;
                    }
                }
            }
        }
        Ok(Self {
            regions: models.len(),
            bins,
            values,
        })
    }

    /// Table with every rate set to `value`.
    pub fn constant(regions: usize, bins: usize, value: f64) -> Self {
        Self {
            regions,
            bins,
            values: vec![value; regions * bins * bins * 4],
        }
    }

    fn index(bins: usize, r: usize, early: usize, late: usize, d: Diagnosis) -> usize {
        ((r * bins + early) * bins + late) * 4 + d.code() as usize
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn rate(&self, region: usize, early: usize, late: usize, d: Diagnosis) -> f64 {
        self.values[Self::index(self.bins, region, early, late, d)]
    }

    pub fn set(&mut self, region: usize, early: usize, late: usize, d: Diagnosis, value: f64) {
        let i = Self::index(self.bins, region, early, late, d);
        self.values[i] = value;
    }
}

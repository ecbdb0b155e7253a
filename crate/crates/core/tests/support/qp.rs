//! Dense projected-gradient solver for the epsilon-SVR dual, used as an
//! oracle for the SMO implementation.

use neurodegen_core::svr::{RatePair, SvrParams};

/// Standardized RBF Gram matrix, computed independently of the library.
fn gram(pairs: &[RatePair], gamma: f64) -> Vec<Vec<f64>> {
    let rows: Vec<[f64; 3]> = pairs
        .iter()
        .map(|p| [p.age_baseline, p.age_followup, p.diagnosis])
        .collect();
    let n = rows.len() as f64;
    let mut z = rows.clone();
    for k in 0..3 {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for r in z.iter_mut() {
            r[k] = (r[k] - mean) / sd;
        }
    }
    z.iter()
        .map(|a| {
            z.iter()
                .map(|b| {
                    let d2: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
                    (-gamma * d2).exp()
                })
                .collect()
        })
        .collect()
}

/// Euclidean projection onto {0 <= a <= c, y'a = 0} by bisection on the
/// multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> (Vec<f64>, f64) {
        let a: Vec<f64> = v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect();
        let s = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
        (a, s)
    };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // y'a(lam) is non-increasing in lam
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Dual objective `0.5 a'Qa + p'a` minimized by FISTA with adaptive restart.
pub fn dense_qp(pairs: &[RatePair], params: &SvrParams) -> f64 {
    let l = pairs.len();
    let k = gram(pairs, params.gamma);
    let y: Vec<f64> = (0..2 * l).map(|t| if t < l { 1.0 } else { -1.0 }).collect();
    let p: Vec<f64> = (0..2 * l)
        .map(|t| {
            if t < l {
                params.epsilon - pairs[t].target
            } else {
                params.epsilon + pairs[t - l].target
            }
        })
        .collect();
    let q = |s: usize, t: usize| y[s] * y[t] * k[s % l][t % l];
    let qa = |a: &[f64]| -> Vec<f64> { (0..2 * l).map(|s| (0..2 * l).map(|t| q(s, t) * a[t]).sum()).collect() };
    let obj = |a: &[f64]| -> f64 {
        let qa = qa(a);
        (0..2 * l).map(|t| 0.5 * a[t] * qa[t] + p[t] * a[t]).sum()
    };
    // Lipschitz constant by power iteration
    let mut v = vec![1.0; 2 * l];
    let mut lip = 0.0;
    for _ in 0..200 {
        let w = qa(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lip = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (lip * 1.01);
    let mut a = vec![0.0; 2 * l];
    let mut z = a.clone();
    let mut t = 1.0f64;
    let mut f_prev = obj(&a);
    for _ in 0..60_000 {
        let g = qa(&z);
        let cand: Vec<f64> = (0..2 * l).map(|s| z[s] - step * (g[s] + p[s])).collect();
        let next = project(&cand, &y, params.c);
        let f = obj(&next);
        if f > f_prev {
            // restart momentum
            z = a.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = (0..2 * l).map(|s| next[s] + (t - 1.0) / t_next * (next[s] - a[s])).collect();
        a = next;
        t = t_next;
        f_prev = f;
    }
    f_prev
}

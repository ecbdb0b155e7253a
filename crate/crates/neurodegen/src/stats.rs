//! Paired two-sided t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Tests `mean(a - b) = 0`. Zero spread gives `t = 0, p = 1` for identical
/// samples and an infinite statistic with `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(neurodegen_core::Error::InsufficientData { needed: 2, got: a.len() }.into());
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&diffs);
    let df = (diffs.len() - 1) as f64;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            PairedT { t: 0.0, p: 1.0, df }
        } else {
            PairedT {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                df,
            }
        });
    }
    let t = mean / (sd / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedT { t, p, df })
}

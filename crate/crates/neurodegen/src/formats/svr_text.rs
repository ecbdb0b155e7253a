//! Plain-text SVR model file. Per region: a header line
//! `region <id> <gamma> <c> <epsilon> <bias> <n_sv>`, `n_sv` lines
//! `<age_b> <age_f> <d> <coef>`, then `scaler <mean x3> <std x3>` or
//! `scaler none`. Reals use 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use neurodegen_core::svr::{RegionSvrModel, Scaler, SupportVector};

use crate::atomic::{read_text, write_atomic};
use crate::error::{Error, Result};

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn encode(models: &[RegionSvrModel]) -> String {
    let mut out = String::new();
    for m in models {
        let _ = writeln!(
            out,
            "region {} {} {} {} {} {}",
            m.region_id,
            real(m.gamma),
            real(m.c),
            real(m.epsilon),
            real(m.bias),
            m.support.len()
        );
        for sv in &m.support {
            let [b, f, d] = sv.features;
            let _ = writeln!(out, "{} {} {} {}", real(b), real(f), real(d), real(sv.coef));
        }
        match &m.scaler {
            Some(s) => {
                let vals: Vec<String> = s.mean.iter().chain(&s.std).map(|&v| real(v)).collect();
                let _ = writeln!(out, "scaler {}", vals.join(" "));
            }
            None => out.push_str("scaler none\n"),
        }
    }
    out
}

pub fn decode(text: &str, path: &Path) -> Result<Vec<RegionSvrModel>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |n: usize, msg: &str| Error::format(path, format!("line {}: {msg}", n + 1));
    let mut models = Vec::new();
    while let Some((n, line)) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 || f[0] != "region" {
            return Err(bad(n, "expected `region id gamma c epsilon bias n_sv`"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, &format!("bad number `{s}`")));
        let region_id: usize = f[1].parse().map_err(|_| bad(n, "bad region id"))?;
        let n_sv: usize = f[6].parse().map_err(|_| bad(n, "bad support-vector count"))?;
        let (gamma, c, epsilon, bias) = (num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?);
        let mut support = Vec::with_capacity(n_sv.min(1 << 16));
        for _ in 0..n_sv {
            let (n, line) = lines.next().ok_or_else(|| bad(n, "missing support vectors"))?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(n, &format!("bad number `{s}`"))))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad(n, "support vector needs 4 values"));
            }
            support.push(SupportVector {
                features: [v[0], v[1], v[2]],
                coef: v[3],
            });
        }
        let (n, line) = lines.next().ok_or_else(|| bad(n, "missing scaler line"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let scaler = match f.as_slice() {
            ["scaler", "none"] => None,
            ["scaler", rest @ ..] if rest.len() == 6 => {
                let v: Vec<f64> = rest
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| bad(n, &format!("bad number `{s}`"))))
                    .collect::<Result<_>>()?;
                Some(Scaler {
                    mean: [v[0], v[1], v[2]],
                    std: [v[3], v[4], v[5]],
                })
            }
            _ => return Err(bad(n, "expected `scaler` with 6 values or `none`")),
        };
        models.push(RegionSvrModel {
            region_id,
            gamma,
            c,
            epsilon,
            bias,
            support,
            scaler,
            dual_objective: 0.0,
            kkt_gap: 0.0,
            iterations: 0,
        });
    }
    for (i, m) in models.iter().enumerate() {
        if m.region_id != i {
            return Err(Error::format(path, format!("region {} stored at position {i}", m.region_id)));
        }
    }
    Ok(models)
}

pub fn read(path: &Path) -> Result<Vec<RegionSvrModel>> {
    decode(&read_text(path)?, path)
}

pub fn write(path: &Path, models: &[RegionSvrModel]) -> Result<()> {
    write_atomic(path, encode(models).as_bytes())
}

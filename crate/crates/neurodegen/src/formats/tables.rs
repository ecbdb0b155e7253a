//! CSV tables written by training and evaluation.

use std::path::Path;

use neurodegen_core::losses::LossBreakdown;

use crate::atomic::write_atomic;
use crate::error::Result;

pub const LOSS_HEADER: &str = "epoch,e_z,g_b,l_vox,l_reg,l_def,l_tot,d_z_loss,d_b_loss";

/// One row of the loss CSV, without the newline.
pub fn loss_row(epoch: usize, b: &LossBreakdown) -> String {
    format!(
        "{epoch},{},{},{},{},{},{},{},{}",
        b.e_z, b.g_b, b.l_vox, b.l_reg, b.l_def, b.l_tot, b.d_z_loss, b.d_b_loss
    )
}

pub fn write_loss_csv(path: &Path, rows: &[(usize, LossBreakdown)]) -> Result<()> {
    let mut out = String::from(LOSS_HEADER);
    out.push('\n');
    for (e, b) in rows {
        out.push_str(&loss_row(*e, b));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Parses a loss CSV back into rows.
pub fn parse_loss_csv(text: &str) -> Option<Vec<(usize, LossBreakdown)>> {
    let mut lines = text.lines();
    if lines.next()? != LOSS_HEADER {
        return None;
    }
    lines
        .map(|l| {
            let mut it = l.split(',');
            let epoch = it.next()?.parse().ok()?;
            let v: Vec<f64> = it.map(|s| s.parse().ok()).collect::<Option<_>>()?;
            (v.len() == 8).then(|| {
                (
                    epoch,
                    LossBreakdown {
                        e_z: v[0],
                        g_b: v[1],
                        l_vox: v[2],
                        l_reg: v[3],
                        l_def: v[4],
                        l_tot: v[5],
                        d_z_loss: v[6],
                        d_b_loss: v[7],
                    },
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_csv_round_trip() {
        let b = LossBreakdown {
            e_z: 0.7,
            g_b: 1.0 / 3.0,
            l_vox: -0.25,
            l_reg: 0.0,
            l_def: 0.125,
            l_tot: 0.03,
            d_z_loss: 1.4,
            d_b_loss: 1.2,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &[(0, b), (1, b)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(LOSS_HEADER));
        assert_eq!(parse_loss_csv(&text).unwrap(), vec![(0, b), (1, b)]);
    }
}

//! Layer kernels. Image activations are stored channel-major as
//! `[channels, batch, height, width]` so that a convolution is a single
//! matrix product against the im2col buffer with no transposes.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{gemm, MatRef};

/// Geometry of a strided "same"-padded square convolution mapping an
/// `h_in x w_in` image onto an `h_out x w_out` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn same(h_in: usize, w_in: usize, k: usize, stride: usize) -> Self {
        let h_out = h_in.div_ceil(stride);
        let w_out = w_in.div_ceil(stride);
        let pad_total = ((h_out - 1) * stride + k).saturating_sub(h_in);
        Self {
            k,
            stride,
            pad: pad_total / 2,
            h_in,
            w_in,
            h_out,
            w_out,
        }
    }

    fn in_pixels(&self) -> usize {
        self.h_in * self.w_in
    }

    fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Input coordinate hit by kernel offset `kk` at output position `o`.
    #[inline]
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + kk).checked_sub(self.pad)?;
        (pos < limit).then_some(pos)
    }
}

/// Unfolds `[c, batch, h_in, w_in]` into `[c*k*k, batch*h_out*w_out]`.
pub(crate) fn im2col(x: &[f64], channels: usize, batch: usize, g: &ConvGeom) -> Vec<f64> {
    let ncol = batch * g.out_pixels();
    let mut cols = vec![0.0; channels * g.k * g.k * ncol];
    for ci in 0..channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for b in 0..batch {
                    let img = &x[(ci * batch + b) * g.in_pixels()..][..g.in_pixels()];
                    for oy in 0..g.h_out {
                        let Some(iy) = g.src(oy, ky, g.h_in) else {
                            continue;
                        };
                        let base = (b * g.h_out + oy) * g.w_out;
                        for ox in 0..g.w_out {
                            if let Some(ix) = g.src(ox, kx, g.w_in) {
                                dst[base + ox] = img[iy * g.w_in + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto `[c, batch, h_in, w_in]`.
pub(crate) fn col2im(cols: &[f64], channels: usize, batch: usize, g: &ConvGeom) -> Vec<f64> {
    let ncol = batch * g.out_pixels();
    let mut x = vec![0.0; channels * batch * g.in_pixels()];
    for ci in 0..channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for b in 0..batch {
                    let img = &mut x[(ci * batch + b) * g.in_pixels()..][..g.in_pixels()];
                    for oy in 0..g.h_out {
                        let Some(iy) = g.src(oy, ky, g.h_in) else {
                            continue;
                        };
                        let base = (b * g.h_out + oy) * g.w_out;
                        for ox in 0..g.w_out {
                            if let Some(ix) = g.src(ox, kx, g.w_in) {
                                img[iy * g.w_in + ix] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_channel_bias(y: &mut [f64], bias: &[f64]) {
    let per = y.len() / bias.len();
    for (chunk, b) in y.chunks_mut(per).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_channel_sums(grad: &[f64], out: &mut [f64]) {
    let per = grad.len() / out.len();
    for (chunk, o) in grad.chunks(per).zip(out.iter_mut()) {
        *o += chunk.iter().sum::<f64>();
    }
}

/// Strided convolution, weight `[cout, cin, k, k]`.
/// Returns the output and the im2col buffer needed by the backward pass.
pub(crate) fn conv_forward(
    x: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(x, cin, batch, g);
    let kdim = cin * g.k * g.k;
    let ncol = batch * g.out_pixels();
    let mut y = vec![0.0; cout * ncol];
    gemm(
        MatRef::new(weight, cout, kdim),
        MatRef::new(&cols, kdim, ncol),
        0.0,
        &mut y,
    );
    add_channel_bias(&mut y, bias);
    (y, cols)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    grad_y: &[f64],
    cols: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    weight: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let kdim = cin * g.k * g.k;
    let ncol = batch * g.out_pixels();
    gemm(
        MatRef::new(grad_y, cout, ncol),
        MatRef::new(cols, kdim, ncol).t(),
        1.0,
        grad_w,
    );
    accumulate_channel_sums(grad_y, grad_b);
    if !need_input {
        return None;
    }
    let mut grad_cols = vec![0.0; kdim * ncol];
    gemm(
        MatRef::new(weight, cout, kdim).t(),
        MatRef::new(grad_y, cout, ncol),
        0.0,
        &mut grad_cols,
    );
    Some(col2im(&grad_cols, cin, batch, g))
}

/// Transposed convolution, weight `[cin, cout, k, k]`. `g` is the geometry of
/// the forward convolution this layer is the adjoint of: its `h_in` is this
/// layer's output size and its `h_out` this layer's input size.
pub(crate) fn conv_t_forward(
    x: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let kdim = cout * g.k * g.k;
    let ncol = batch * g.out_pixels();
    let mut cols = vec![0.0; kdim * ncol];
    gemm(
        MatRef::new(weight, cin, kdim).t(),
        MatRef::new(x, cin, ncol),
        0.0,
        &mut cols,
    );
    let mut y = col2im(&cols, cout, batch, g);
    add_channel_bias(&mut y, bias);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t_backward(
    grad_y: &[f64],
    x: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    weight: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let kdim = cout * g.k * g.k;
    let ncol = batch * g.out_pixels();
    let gcols = im2col(grad_y, cout, batch, g);
    gemm(
        MatRef::new(x, cin, ncol),
        MatRef::new(&gcols, kdim, ncol).t(),
        1.0,
        grad_w,
    );
    accumulate_channel_sums(grad_y, grad_b);
    if !need_input {
        return None;
    }
    let mut grad_x = vec![0.0; cin * ncol];
    gemm(
        MatRef::new(weight, cin, kdim),
        MatRef::new(&gcols, kdim, ncol),
        0.0,
        &mut grad_x,
    );
    Some(grad_x)
}

/// Fully connected layer on `[batch, fin]`, weight `[fout, fin]`.
pub(crate) fn dense_forward(
    x: &[f64],
    batch: usize,
    fin: usize,
    fout: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; batch * fout];
    for row in y.chunks_mut(fout) {
        row.copy_from_slice(bias);
    }
    gemm(
        MatRef::new(x, batch, fin),
        MatRef::new(weight, fout, fin).t(),
        1.0,
        &mut y,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    grad_y: &[f64],
    x: &[f64],
    batch: usize,
    fin: usize,
    fout: usize,
    weight: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    gemm(
        MatRef::new(grad_y, batch, fout).t(),
        MatRef::new(x, batch, fin),
        1.0,
        grad_w,
    );
    for row in grad_y.chunks(fout) {
        for (gb, g) in grad_b.iter_mut().zip(row) {
            *gb += g;
        }
    }
    if !need_input {
        return None;
    }
    let mut grad_x = vec![0.0; batch * fin];
    gemm(
        MatRef::new(grad_y, batch, fout),
        MatRef::new(weight, fout, fin),
        0.0,
        &mut grad_x,
    );
    Some(grad_x)
}

/// `[c, batch, h, w]` to `[batch, c*h*w]`.
pub(crate) fn flatten(x: &[f64], c: usize, batch: usize, hw: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for ci in 0..c {
        for b in 0..batch {
            let src = &x[(ci * batch + b) * hw..][..hw];
            y[(b * c + ci) * hw..][..hw].copy_from_slice(src);
        }
    }
    y
}

/// `[batch, c*h*w]` to `[c, batch, h, w]`.
pub(crate) fn unflatten(x: &[f64], c: usize, batch: usize, hw: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for ci in 0..c {
            let src = &x[(b * c + ci) * hw..][..hw];
            y[(ci * batch + b) * hw..][..hw].copy_from_slice(src);
        }
    }
    y
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_geometry_halves_even_sizes() {
        let g = ConvGeom::same(64, 64, 5, 2);
        assert_eq!((g.h_out, g.w_out, g.pad), (32, 32, 1));
        let g = ConvGeom::same(4, 4, 5, 2);
        assert_eq!((g.h_out, g.pad), (2, 1));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let g = ConvGeom::same(6, 6, 5, 2);
        let (ch, b) = (2, 3);
        let x: Vec<f64> = (0..ch * b * 36).map(|i| libm::sin(i as f64 * 0.37)).collect();
        let cols = im2col(&x, ch, b, &g);
        let c: Vec<f64> = (0..cols.len()).map(|i| libm::cos(i as f64 * 0.11)).collect();
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let back = col2im(&c, ch, b, &g);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom::same(4, 4, 5, 2);
        let (cin, cout, batch) = (2, 3, 2);
        let x: Vec<f64> = (0..cin * batch * 16).map(|i| (i as f64 * 0.13).sin()).collect();
        let w: Vec<f64> = (0..cout * cin * 25).map(|i| (i as f64 * 0.07).cos()).collect();
        let bias = [0.1, -0.2, 0.3];
        let (y, _) = conv_forward(&x, batch, cin, cout, &g, &w, &bias);
        for co in 0..cout {
            for b in 0..batch {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut s = bias[co];
                        for ci in 0..cin {
                            for ky in 0..5 {
                                for kx in 0..5 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if (0..4).contains(&iy) && (0..4).contains(&ix) {
                                        s += w[((co * cin + ci) * 5 + ky) * 5 + kx]
                                            * x[((ci * batch + b) * 4 + iy as usize) * 4
                                                + ix as usize];
                                    }
                                }
                            }
                        }
                        let got = y[((co * batch + b) * 2 + oy) * 2 + ox];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let x: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let y = flatten(&x, 2, 3, 4);
        // sample 1 channel 1 starts at (1*2+1)*4
        assert_eq!(y[12], x[(3 + 1) * 4]);
        assert_eq!(unflatten(&y, 2, 3, 4), x);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert!(sigmoid(800.0) <= 1.0);
    }
}

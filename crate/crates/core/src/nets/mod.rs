//! Encoder, generator and the two discriminators, with hand-written
//! reverse-mode gradients.
//!
//! Every network is a straight chain of [`Op`]s over a flat parameter list so
//! that optimizers and checkpoint writers can treat all four networks alike.
//! Discriminators return logits; [`disc_prob`] applies the sigmoid.

pub(crate) mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::image::Diagnosis;
use crate::tensor::Tensor;
use layers::ConvGeom;

const KERNEL: usize = 5;
const STRIDE: usize = 2;
/// Replication factor of the diagnosis channel in the generator input.
pub const DIAGNOSIS_COPIES: usize = 10;
pub const INIT_STD: f64 = 0.02;

/// Sizes that fix every tensor shape of the four networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Image side length; a multiple of 16.
    pub grid: usize,
    /// Latent size `s`.
    pub latent: usize,
    /// Number of age bins `A`.
    pub bins: usize,
    /// Channel count of the first convolution; later layers double it.
    pub base_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            latent: 64,
            bins: 10,
            base_channels: 32,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 16 || !self.grid.is_multiple_of(16) {
            return Err(invalid(format!(
                "grid size {} must be a positive multiple of 16",
                self.grid
            )));
        }
        if self.latent == 0 || self.base_channels == 0 {
            return Err(invalid("latent size and base channels must be positive"));
        }
        if self.bins < 2 {
            return Err(invalid("at least two age bins are required"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.grid * self.grid
    }

    /// Width of the generator input: latent, age one-hot, diagnosis copies.
    pub fn generator_input(&self) -> usize {
        self.latent + self.bins + DIAGNOSIS_COPIES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Conv {
        param: usize,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    },
    ConvT {
        param: usize,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    },
    Dense {
        param: usize,
        fin: usize,
        fout: usize,
    },
    Flatten {
        channels: usize,
        pixels: usize,
    },
    Unflatten {
        channels: usize,
        pixels: usize,
    },
    Relu,
    Tanh,
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Gradient accumulators aligned one-to-one with a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.tensors.iter().map(Tensor::sum_sq).sum())
    }
}

/// Saved activations of one traced forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    saved: Vec<Vec<f64>>,
}

/// A feed-forward chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    ops: Vec<Op>,
    params: Vec<Param>,
    input_len: usize,
    output_len: usize,
}

struct Builder {
    name: String,
    ops: Vec<Op>,
    params: Vec<Param>,
    layer: usize,
}

impl Builder {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            ops: Vec::new(),
            params: Vec::new(),
            layer: 0,
        }
    }

    fn push_params(&mut self, kind: &str, wshape: &[usize], bias: usize) -> usize {
        let idx = self.params.len();
        self.params.push(Param {
            name: format!("{}.{}{}.weight", self.name, kind, self.layer),
            value: Tensor::zeros(wshape),
        });
        self.params.push(Param {
            name: format!("{}.{}{}.bias", self.name, kind, self.layer),
            value: Tensor::zeros(&[bias]),
        });
        self.layer += 1;
        idx
    }

    fn conv(&mut self, cin: usize, cout: usize, side_in: usize) -> usize {
        let param = self.push_params("conv", &[cout, cin, KERNEL, KERNEL], cout);
        let geom = ConvGeom::same(side_in, side_in, KERNEL, STRIDE);
        self.ops.push(Op::Conv {
            param,
            cin,
            cout,
            geom,
        });
        geom.h_out
    }

    fn conv_t(&mut self, cin: usize, cout: usize, side_in: usize) -> usize {
        let side_out = side_in * STRIDE;
        let param = self.push_params("deconv", &[cin, cout, KERNEL, KERNEL], cout);
        let geom = ConvGeom::same(side_out, side_out, KERNEL, STRIDE);
        debug_assert_eq!(geom.h_out, side_in);
        self.ops.push(Op::ConvT {
            param,
            cin,
            cout,
            geom,
        });
        side_out
    }

    fn dense(&mut self, fin: usize, fout: usize) {
        let param = self.push_params("dense", &[fout, fin], fout);
        self.ops.push(Op::Dense { param, fin, fout });
    }

    fn op(&mut self, op: Op) {
        self.ops.push(op);
    }

    fn finish(self, input_len: usize, output_len: usize) -> Network {
        Network {
            name: self.name,
            ops: self.ops,
            params: self.params,
            input_len,
            output_len,
        }
    }
}

impl Network {
    /// Encoder: four stride-2 convolutions with ReLU, dense to the latent
    /// size, tanh.
    pub fn encoder(arch: &ArchConfig) -> Self {
        let c = arch.base_channels;
        let mut b = Builder::new("E");
        let mut side = arch.grid;
        let mut cin = 1;
        for cout in [c, 2 * c, 4 * c, 8 * c] {
            side = b.conv(cin, cout, side);
            b.op(Op::Relu);
            cin = cout;
        }
        let pixels = side * side;
        b.op(Op::Flatten {
            channels: cin,
            pixels,
        });
        b.dense(cin * pixels, arch.latent);
        b.op(Op::Tanh);
        b.finish(arch.pixels(), arch.latent)
    }

    /// Generator: dense from `[z, age one-hot, diagnosis copies]` to a
    /// `grid/16` feature map, four stride-2 transposed convolutions, tanh.
    pub fn generator(arch: &ArchConfig) -> Self {
        let c = arch.base_channels;
        let mut b = Builder::new("G");
        let mut side = arch.grid / 16;
        let pixels = side * side;
        b.dense(arch.generator_input(), 8 * c * pixels);
        b.op(Op::Relu);
        b.op(Op::Unflatten {
            channels: 8 * c,
            pixels,
        });
        let chans = [8 * c, 4 * c, 2 * c, c, 1];
        for (i, pair) in chans.windows(2).enumerate() {
            side = b.conv_t(pair[0], pair[1], side);
            b.op(if i + 2 < chans.len() { Op::Relu } else { Op::Tanh });
        }
        b.finish(arch.generator_input(), arch.pixels())
    }

    /// Latent discriminator: dense 64/32/16 with ReLU, then a single logit.
    pub fn disc_z(arch: &ArchConfig) -> Self {
        let mut b = Builder::new("Dz");
        let mut fin = arch.latent;
        for fout in [64, 32, 16] {
            b.dense(fin, fout);
            b.op(Op::Relu);
            fin = fout;
        }
        b.dense(fin, 1);
        b.finish(arch.latent, 1)
    }

    /// Image discriminator: three stride-2 convolutions with ReLU, then a
    /// single logit.
    pub fn disc_b(arch: &ArchConfig) -> Self {
        let c = arch.base_channels;
        let mut b = Builder::new("Db");
        let mut side = arch.grid;
        let mut cin = 1;
        for cout in [c, 2 * c, 4 * c] {
            side = b.conv(cin, cout, side);
            b.op(Op::Relu);
            cin = cout;
        }
        let pixels = side * side;
        b.op(Op::Flatten {
            channels: cin,
            pixels,
        });
        b.dense(cin * pixels, 1);
        b.finish(arch.pixels(), 1)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Weights from N(0, std) rounded to f32 precision, biases zero.
    fn initialize(&mut self, rng: &mut ChaCha8Rng, std: f64) {
        let normal = Normal::new(0.0, std).expect("positive std");
        for p in &mut self.params {
            if p.name.ends_with(".bias") {
                continue;
            }
            for v in p.value.data_mut() {
                *v = f64::from(normal.sample(rng) as f32);
            }
        }
    }

    fn check_input(&self, input: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || input.len() != batch * self.input_len {
            return Err(Error::ShapeMismatch {
                expected: vec![batch, self.input_len],
                got: vec![input.len()],
            });
        }
        Ok(())
    }

    /// Forward pass over `batch` samples laid out contiguously.
    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.run(input, batch, false).map(|(y, _)| y)
    }

    /// Forward pass that keeps what [`Network::backward`] needs.
    pub fn forward_traced(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, Trace)> {
        self.run(input, batch, true)
    }

    fn run(&self, input: &[f64], batch: usize, keep: bool) -> Result<(Vec<f64>, Trace)> {
        self.check_input(input, batch)?;
        let mut x = input.to_vec();
        let mut saved = Vec::with_capacity(if keep { self.ops.len() } else { 0 });
        for op in &self.ops {
            let mut keep_val = Vec::new();
            x = match *op {
                Op::Conv {
                    param,
                    cin,
                    cout,
                    ref geom,
                } => {
                    let (y, cols) = layers::conv_forward(
                        &x,
                        batch,
                        cin,
                        cout,
                        geom,
                        self.params[param].value.data(),
                        self.params[param + 1].value.data(),
                    );
                    keep_val = cols;
                    y
                }
                Op::ConvT {
                    param,
                    cin,
                    cout,
                    ref geom,
                } => {
                    let y = layers::conv_t_forward(
                        &x,
                        batch,
                        cin,
                        cout,
                        geom,
                        self.params[param].value.data(),
                        self.params[param + 1].value.data(),
                    );
                    keep_val = x;
                    y
                }
                Op::Dense { param, fin, fout } => {
                    let y = layers::dense_forward(
                        &x,
                        batch,
                        fin,
                        fout,
                        self.params[param].value.data(),
                        self.params[param + 1].value.data(),
                    );
                    keep_val = x;
                    y
                }
                Op::Flatten { channels, pixels } => layers::flatten(&x, channels, batch, pixels),
                Op::Unflatten { channels, pixels } => {
                    layers::unflatten(&x, channels, batch, pixels)
                }
                Op::Relu => {
                    for v in &mut x {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    if keep {
                        keep_val = x.clone();
                    }
                    x
                }
                Op::Tanh => {
                    for v in &mut x {
                        *v = libm::tanh(*v);
                    }
                    if keep {
                        keep_val = x.clone();
                    }
                    x
                }
            };
            if keep {
                saved.push(keep_val);
            }
        }
        Ok((x, Trace { batch, saved }))
    }

    /// Reverse pass: accumulates parameter gradients into `grads` and returns
    /// the gradient with respect to the input when `need_input` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: &[f64],
        grads: &mut Grads,
        need_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let batch = trace.batch;
        if grad_out.len() != batch * self.output_len || trace.saved.len() != self.ops.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![batch, self.output_len],
                got: vec![grad_out.len()],
            });
        }
        let mut g = grad_out.to_vec();
        // the first parameterized layer needs no input gradient unless asked
        let first_param_op = self
            .ops
            .iter()
            .position(|op| matches!(op, Op::Conv { .. } | Op::ConvT { .. } | Op::Dense { .. }));
        for (i, op) in self.ops.iter().enumerate().rev() {
            let saved = &trace.saved[i];
            let want_input = need_input || Some(i) != first_param_op;
            let next = match *op {
                Op::Conv {
                    param,
                    cin,
                    cout,
                    ref geom,
                } => {
                    let (gw, gb) = split_pair(&mut grads.tensors, param);
                    layers::conv_backward(
                        &g,
                        saved,
                        batch,
                        cin,
                        cout,
                        geom,
                        self.params[param].value.data(),
                        gw,
                        gb,
                        want_input,
                    )
                }
                Op::ConvT {
                    param,
                    cin,
                    cout,
                    ref geom,
                } => {
                    let (gw, gb) = split_pair(&mut grads.tensors, param);
                    layers::conv_t_backward(
                        &g,
                        saved,
                        batch,
                        cin,
                        cout,
                        geom,
                        self.params[param].value.data(),
                        gw,
                        gb,
                        want_input,
                    )
                }
                Op::Dense { param, fin, fout } => {
                    let (gw, gb) = split_pair(&mut grads.tensors, param);
                    layers::dense_backward(
                        &g,
                        saved,
                        batch,
                        fin,
                        fout,
                        self.params[param].value.data(),
                        gw,
                        gb,
                        want_input,
                    )
                }
                Op::Flatten { channels, pixels } => {
                    Some(layers::unflatten(&g, channels, batch, pixels))
                }
                Op::Unflatten { channels, pixels } => {
                    Some(layers::flatten(&g, channels, batch, pixels))
                }
                Op::Relu => {
                    for (gv, &y) in g.iter_mut().zip(saved) {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    Some(g)
                }
                Op::Tanh => {
                    for (gv, &y) in g.iter_mut().zip(saved) {
                        *gv *= 1.0 - y * y;
                    }
                    Some(g)
                }
            };
            match next {
                Some(n) => g = n,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }
}

fn split_pair(tensors: &mut [Tensor], idx: usize) -> (&mut [f64], &mut [f64]) {
    let (w, rest) = tensors[idx..].split_at_mut(1);
    (w[0].data_mut(), rest[0].data_mut())
}

/// Sigmoid of a discriminator logit.
pub fn disc_prob(logit: f64) -> f64 {
    layers::sigmoid(logit)
}

/// The four networks of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub arch: ArchConfig,
    pub encoder: Network,
    pub generator: Network,
    pub disc_z: Network,
    pub disc_b: Network,
}

/// Index of each network inside [`Nets::iter`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetId {
    Encoder,
    Generator,
    DiscZ,
    DiscB,
}

impl NetId {
    pub const ALL: [NetId; 4] = [NetId::Encoder, NetId::Generator, NetId::DiscZ, NetId::DiscB];
}

/// Deterministic parameter initialization for all four networks.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<Nets> {
    init_params_with_std(arch, seed, INIT_STD)
}

/// As [`init_params`] with a custom weight scale.
pub fn init_params_with_std(arch: &ArchConfig, seed: u64, std: f64) -> Result<Nets> {
    arch.validate()?;
    let mut nets = Nets {
        arch: *arch,
        encoder: Network::encoder(arch),
        generator: Network::generator(arch),
        disc_z: Network::disc_z(arch),
        disc_b: Network::disc_b(arch),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in NetId::ALL {
        nets.net_mut(id).initialize(&mut rng, std);
    }
    Ok(nets)
}

/// Generator input rows: latent, one-hot age bin, replicated `d/3`.
/// With `use_diagnosis` unset the diagnosis copies are zero.
pub fn generator_input(
    arch: &ArchConfig,
    latent: &[f64],
    bin: usize,
    diagnosis: Diagnosis,
    use_diagnosis: bool,
) -> Result<Vec<f64>> {
    if latent.len() != arch.latent {
        return Err(Error::ShapeMismatch {
            expected: vec![arch.latent],
            got: vec![latent.len()],
        });
    }
    if bin >= arch.bins {
        return Err(invalid(format!(
            "age bin {bin} outside 0..{}",
            arch.bins
        )));
    }
    let mut row = Vec::with_capacity(arch.generator_input());
    row.extend_from_slice(latent);
    row.extend((0..arch.bins).map(|i| if i == bin { 1.0 } else { 0.0 }));
    let d = if use_diagnosis { diagnosis.unit() } else { 0.0 };
    row.extend(core::iter::repeat_n(d, DIAGNOSIS_COPIES));
    Ok(row)
}

impl Nets {
    pub fn net(&self, id: NetId) -> &Network {
        match id {
            NetId::Encoder => &self.encoder,
            NetId::Generator => &self.generator,
            NetId::DiscZ => &self.disc_z,
            NetId::DiscB => &self.disc_b,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut Network {
        match id {
            NetId::Encoder => &mut self.encoder,
            NetId::Generator => &mut self.generator,
            NetId::DiscZ => &mut self.disc_z,
            NetId::DiscB => &mut self.disc_b,
        }
    }

    /// All parameters in checkpoint order (E, G, Dz, Db).
    pub fn all_params(&self) -> impl Iterator<Item = &Param> {
        NetId::ALL.into_iter().flat_map(|id| self.net(id).params().iter())
    }

    /// Encodes a batch of `grid x grid` images.
    pub fn encode(&self, images: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.encoder.forward(images, batch)
    }

    /// One synthetic frame per latent row.
    pub fn generate(
        &self,
        latents: &[f64],
        bins: &[usize],
        diagnoses: &[Diagnosis],
        use_diagnosis: bool,
    ) -> Result<Vec<f64>> {
        let input = self.generator_rows(latents, bins, diagnoses, use_diagnosis)?;
        self.generator.forward(&input, bins.len())
    }

    pub(crate) fn generator_rows(
        &self,
        latents: &[f64],
        bins: &[usize],
        diagnoses: &[Diagnosis],
        use_diagnosis: bool,
    ) -> Result<Vec<f64>> {
        let s = self.arch.latent;
        if latents.len() != bins.len() * s || diagnoses.len() != bins.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![bins.len(), s],
                got: vec![latents.len() / s.max(1), diagnoses.len()],
            });
        }
        let mut input = Vec::with_capacity(bins.len() * self.arch.generator_input());
        for ((z, &bin), &d) in latents.chunks(s).zip(bins).zip(diagnoses) {
            input.extend(generator_input(&self.arch, z, bin, d, use_diagnosis)?);
        }
        Ok(input)
    }

    /// All `A` frames `g_1..g_A` for one latent, concatenated.
    pub fn generate_sequence(
        &self,
        latent: &[f64],
        diagnosis: Diagnosis,
        use_diagnosis: bool,
    ) -> Result<Vec<f64>> {
        let a = self.arch.bins;
        let mut latents = Vec::with_capacity(a * latent.len());
        for _ in 0..a {
            latents.extend_from_slice(latent);
        }
        let bins: Vec<usize> = (0..a).collect();
        self.generate(&latents, &bins, &vec![diagnosis; a], use_diagnosis)
    }

    /// Probability that each latent row was drawn from the uniform prior.
    pub fn disc_z_prob(&self, latents: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self
            .disc_z
            .forward(latents, batch)?
            .into_iter()
            .map(disc_prob)
            .collect())
    }

    /// Probability that each image is a real slice.
    pub fn disc_b_prob(&self, images: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self
            .disc_b
            .forward(images, batch)?
            .into_iter()
            .map(disc_prob)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchConfig {
        ArchConfig {
            grid: 32,
            latent: 8,
            bins: 4,
            base_channels: 4,
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_params(&small(), 3).unwrap();
        let b = init_params(&small(), 3).unwrap();
        let c = init_params(&small(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for p in a.all_params() {
            if p.name.ends_with(".bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            } else {
                assert!(p.value.data().iter().all(|&v| f64::from(v as f32) == v));
            }
        }
    }

    #[test]
    fn parameter_shapes_follow_the_architecture() {
        let arch = ArchConfig::default();
        let nets = init_params(&arch, 0).unwrap();
        let shape = |net: &Network, i: usize| net.params()[i].value.shape().to_vec();
        assert_eq!(shape(&nets.encoder, 0), vec![32, 1, 5, 5]);
        assert_eq!(shape(&nets.encoder, 6), vec![256, 128, 5, 5]);
        assert_eq!(shape(&nets.encoder, 8), vec![64, 4 * 4 * 256]);
        assert_eq!(shape(&nets.generator, 0), vec![4 * 4 * 256, 64 + 10 + 10]);
        assert_eq!(shape(&nets.generator, 2), vec![256, 128, 5, 5]);
        assert_eq!(shape(&nets.generator, 8), vec![32, 1, 5, 5]);
        assert_eq!(nets.disc_z.params().len(), 8);
        assert_eq!(shape(&nets.disc_b, 6), vec![1, 8 * 8 * 128]);
    }

    #[test]
    fn encode_then_generate_round_trips_shape() {
        for grid in [32, 64, 128] {
            let arch = ArchConfig {
                grid,
                latent: 6,
                bins: 3,
                base_channels: 2,
            };
            let nets = init_params(&arch, 1).unwrap();
            let x = vec![0.1; grid * grid];
            let z = nets.encode(&x, 1).unwrap();
            assert_eq!(z.len(), 6);
            assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
            let g = nets
                .generate(&z, &[2], &[Diagnosis::new(1).unwrap()], true)
                .unwrap();
            assert_eq!(g.len(), grid * grid);
            assert!(g.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn zero_input_encodes_to_finite_latent() {
        let nets = init_params(&small(), 9).unwrap();
        let z = nets.encode(&vec![0.0; 32 * 32], 1).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn generator_output_bounded_over_random_latents() {
        use rand::Rng;
        let arch = small();
        let nets = init_params_with_std(&arch, 5, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100;
        let z: Vec<f64> = (0..n * arch.latent)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let bins: Vec<usize> = (0..n).map(|i| i % arch.bins).collect();
        let dx = vec![Diagnosis::new(2).unwrap(); n];
        let g = nets.generate(&z, &bins, &dx, true).unwrap();
        assert!(g.iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn diagnosis_ablation_makes_output_independent_of_d() {
        let arch = small();
        let nets = init_params_with_std(&arch, 2, 0.1).unwrap();
        let z = vec![0.3; arch.latent];
        let d0 = nets
            .generate(&z, &[1], &[Diagnosis::new(0).unwrap()], false)
            .unwrap();
        let d3 = nets
            .generate(&z, &[1], &[Diagnosis::new(3).unwrap()], false)
            .unwrap();
        assert_eq!(d0, d3);
        let c3 = nets
            .generate(&z, &[1], &[Diagnosis::new(3).unwrap()], true)
            .unwrap();
        assert_ne!(d0, c3);
    }

    #[test]
    fn generate_sequence_frames_equal_single_generation() {
        let arch = small();
        let nets = init_params_with_std(&arch, 2, 0.1).unwrap();
        let z = vec![-0.2; arch.latent];
        let d = Diagnosis::new(2).unwrap();
        let seq = nets.generate_sequence(&z, d, true).unwrap();
        assert_eq!(seq.len(), arch.bins * arch.pixels());
        for bin in 0..arch.bins {
            let one = nets.generate(&z, &[bin], &[d], true).unwrap();
            let frame = &seq[bin * arch.pixels()..(bin + 1) * arch.pixels()];
            for (a, b) in one.iter().zip(frame) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generator_rejects_bad_bin_and_shape() {
        let arch = small();
        let nets = init_params(&arch, 0).unwrap();
        let z = vec![0.0; arch.latent];
        let d = Diagnosis::new(0).unwrap();
        assert!(nets.generate(&z, &[arch.bins], &[d], true).is_err());
        assert!(nets.encode(&[0.0; 10], 1).is_err());
        assert!(nets.disc_b_prob(&[0.0; 10], 1).is_err());
    }

    #[test]
    fn discriminator_outputs_are_probabilities() {
        let arch = small();
        let nets = init_params_with_std(&arch, 8, 0.2).unwrap();
        let z: Vec<f64> = (0..3 * arch.latent).map(|i| (i as f64 * 0.9).sin()).collect();
        for p in nets.disc_z_prob(&z, 3).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
        let x: Vec<f64> = (0..2 * arch.pixels()).map(|i| (i as f64 * 0.3).cos()).collect();
        for p in nets.disc_b_prob(&x, 2).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
    }
}

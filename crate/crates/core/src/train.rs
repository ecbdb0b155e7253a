//! Adversarial training: ADAM, the per-batch alternation D_z, D_b, E+G,
//! and the epoch loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::image::{NormalizedSlice, SliceMeta};
use crate::losses::{self, LossBreakdown, DEF_WEIGHT, DEFAULT_TAU, TERM_WEIGHT};
use crate::nets::{generator_input, init_params, ArchConfig, Grads, NetId, Nets, Param};
use crate::preprocess::AgeBinning;
use crate::regions::RegionMaskSet;
use crate::rng::stream;
use crate::svr::RateTable;
use crate::tensor::Tensor;

const EPOCH_STREAM: u64 = 0x74_7261_696e;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update. Parameters are left untouched when any
/// gradient is non-finite.
pub fn adam_step(params: &mut [Param], grads: &[Tensor], state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(invalid(format!(
            "{} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                expected: p.value.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(hp.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(hp.beta2, f64::from(t));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let w = p.value.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = hp.beta1 * *mk + (1.0 - hp.beta1) * gk;
            let vk = &mut v.data_mut()[k];
            *vk = hp.beta2 * *vk + (1.0 - hp.beta2) * gk * gk;
            let m_hat = m.data()[k] / c1;
            let v_hat = v.data()[k] / c2;
            w[k] -= hp.lr * m_hat / (libm::sqrt(v_hat) + hp.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub enable_p: bool,
    pub enable_c: bool,
    pub tau: f64,
    pub seed: u64,
    pub age_min: f64,
    pub age_max: f64,
    /// Number of cortical regions the SVR constraints are defined on.
    pub regions: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            epochs: 100,
            batch_size: 16,
            adam: AdamParams::default(),
            enable_p: true,
            enable_c: true,
            tau: DEFAULT_TAU,
            seed: 0,
            age_min: 63.0,
            age_max: 87.0,
            regions: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(invalid("tau must be positive"));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(invalid("ADAM needs lr > 0 and betas in [0, 1)"));
        }
        self.binning().map(|_| ())
    }

    pub fn binning(&self) -> Result<AgeBinning> {
        AgeBinning::new(self.arch.bins, self.age_min, self.age_max)
    }
}

/// A normalized slice with its age bin and blend weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Vec<f64>,
    pub meta: SliceMeta,
    pub bin: usize,
    pub alpha: f64,
}

impl TrainSample {
    pub fn new(slice: &NormalizedSlice, binning: &AgeBinning) -> Result<Self> {
        let (bin, alpha) = binning.age_to_bin(slice.meta.age)?;
        Ok(Self {
            image: slice.image().as_slice().to_vec(),
            meta: slice.meta,
            bin,
            alpha,
        })
    }
}

/// Region masks and tabulated SVR predictions used by the P terms.
#[derive(Debug, Clone, Copy)]
pub struct Constraints<'a> {
    pub masks: &'a RegionMaskSet,
    pub rates: &'a RateTable,
}

/// Randomness consumed by one step: prior samples for D_z and one random
/// bin per sample for D_b and G_b.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub priors: Vec<f64>,
    pub bins: Vec<usize>,
}

impl Draws {
    pub fn sample<R: Rng>(rng: &mut R, batch: usize, arch: &ArchConfig) -> Self {
        let priors = (0..batch * arch.latent).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bins = (0..batch).map(|_| rng.random_range(0..arch.bins)).collect();
        Self { priors, bins }
    }
}

/// Coefficients of each term in a scalar objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Weights {
    pub e_z: f64,
    pub g_b: f64,
    pub l_vox: f64,
    pub l_reg: f64,
    pub l_def: f64,
    pub d_z: f64,
    pub d_b: f64,
}

impl Weights {
    /// The E+G objective `l_tot`; constraint terms only with P.
    pub fn generator(enable_p: bool) -> Self {
        let p = if enable_p { TERM_WEIGHT } else { 0.0 };
        Self {
            e_z: TERM_WEIGHT,
            g_b: TERM_WEIGHT,
            l_vox: p,
            l_reg: p,
            l_def: DEF_WEIGHT,
            d_z: 0.0,
            d_b: 0.0,
        }
    }

    pub fn dot(&self, b: &LossBreakdown) -> f64 {
        self.e_z * b.e_z
            + self.g_b * b.g_b
            + self.l_vox * b.l_vox
            + self.l_reg * b.l_reg
            + self.l_def * b.l_def
            + self.d_z * b.d_z_loss
            + self.d_b * b.d_b_loss
    }

    fn generator_terms(&self) -> bool {
        self.g_b != 0.0 || self.l_vox != 0.0 || self.l_reg != 0.0 || self.l_def != 0.0
    }
}

/// Parameter gradients of all four networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub encoder: Grads,
    pub generator: Grads,
    pub disc_z: Grads,
    pub disc_b: Grads,
}

impl NetGrads {
    pub fn get(&self, id: NetId) -> &Grads {
        match id {
            NetId::Encoder => &self.encoder,
            NetId::Generator => &self.generator,
            NetId::DiscZ => &self.disc_z,
            NetId::DiscB => &self.disc_b,
        }
    }
}

/// Evaluates the weighted objective on a batch and the exact gradient with
/// respect to the parameters of every network in `want`.
///
/// Terms with zero weight are neither evaluated nor differentiated and are
/// reported as 0. Gradients of networks outside `want` may be left
/// incomplete.
pub fn objective(
    nets: &Nets,
    batch: &[&TrainSample],
    draws: &Draws,
    w: &Weights,
    config: &TrainConfig,
    constraints: Option<&Constraints<'_>>,
    want: &[NetId],
) -> Result<(LossBreakdown, NetGrads)> {
    let arch = &nets.arch;
    let b = batch.len();
    let s = arch.latent;
    let px = arch.pixels();
    let bins_n = arch.bins;
    if b == 0 {
        return Err(invalid("empty batch"));
    }
    if draws.bins.len() != b || draws.priors.len() != b * s {
        return Err(invalid("draws do not match the batch size"));
    }
    for sample in batch {
        if sample.image.len() != px {
            return Err(Error::ShapeMismatch {
                expected: vec![arch.grid, arch.grid],
                got: vec![sample.image.len()],
            });
        }
        if sample.bin + 1 >= bins_n || !(0.0..=1.0).contains(&sample.alpha) {
            return Err(invalid(format!("sample bin {} outside the {bins_n} bins", sample.bin)));
        }
    }
    let sequence = w.l_vox != 0.0 || w.l_reg != 0.0;
    let constraints = match (w.l_reg != 0.0, constraints) {
        (true, None) => {
            return Err(Error::State("regional constraint requested without masks and SVR rates".into()))
        }
        (_, c) => c,
    };
    let need_e = want.contains(&NetId::Encoder);
    let need_g = need_e || want.contains(&NetId::Generator);
    let uses_frames = w.generator_terms() || w.d_b != 0.0;
    let mut out = LossBreakdown::default();
    let mut grads = NetGrads {
        encoder: Grads::zeros_like(&nets.encoder),
        generator: Grads::zeros_like(&nets.generator),
        disc_z: Grads::zeros_like(&nets.disc_z),
        disc_b: Grads::zeros_like(&nets.disc_b),
    };
    let bf = b as f64;

    let images: Vec<f64> = batch.iter().flat_map(|t| t.image.iter().copied()).collect();
    let (latents, e_trace) = nets.encoder.forward_traced(&images, b)?;
    let mut grad_z = vec![0.0; b * s];

    if w.d_z != 0.0 || w.e_z != 0.0 {
        let mut input = draws.priors.clone();
        input.extend_from_slice(&latents);
        let (logits, trace) = nets.disc_z.forward_traced(&input, 2 * b)?;
        let mut g = vec![0.0; 2 * b];
        let (mut d_loss, mut e_z) = (0.0, 0.0);
        for i in 0..b {
            let (lr, gr) = losses::logit_loss(logits[i], true);
            let (lf, gf) = losses::logit_loss(logits[b + i], false);
            let (le, ge) = losses::logit_loss(logits[b + i], true);
            d_loss += lr + lf;
            e_z += le;
            g[i] = w.d_z * gr / bf;
            g[b + i] = (w.d_z * gf + w.e_z * ge) / bf;
        }
        if w.d_z != 0.0 {
            out.d_z_loss = d_loss / bf;
        }
        if w.e_z != 0.0 {
            out.e_z = e_z / bf;
        }
        if let Some(gin) = nets.disc_z.backward(&trace, &g, &mut grads.disc_z, need_e)? {
            for (dst, src) in grad_z.iter_mut().zip(&gin[b * s..]) {
                *dst += *src;
            }
        }
    }

    if uses_frames {
        // generator rows and where each needed frame sits among them
        let mut rows: Vec<usize> = Vec::new();
        let mut row_owner: Vec<usize> = Vec::new();
        let mut def_rows = vec![(0, 0); b];
        let mut fake_row = vec![0; b];
        let mut seq_start = vec![0; b];
        for (i, sample) in batch.iter().enumerate() {
            let start = rows.len();
            seq_start[i] = start;
            if sequence {
                rows.extend(0..bins_n);
                row_owner.extend(core::iter::repeat_n(i, bins_n));
                def_rows[i] = (start + sample.bin, start + sample.bin + 1);
                fake_row[i] = start + draws.bins[i];
            } else {
                if w.l_def != 0.0 {
                    rows.extend([sample.bin, sample.bin + 1]);
                    row_owner.extend([i, i]);
                    def_rows[i] = (start, start + 1);
                }
                fake_row[i] = rows.len();
                rows.push(draws.bins[i]);
                row_owner.push(i);
            }
        }
        let n_rows = rows.len();
        let mut g_input = Vec::with_capacity(n_rows * arch.generator_input());
        for (&bin, &i) in rows.iter().zip(&row_owner) {
            g_input.extend(generator_input(
                arch,
                &latents[i * s..(i + 1) * s],
                bin,
                batch[i].meta.diagnosis,
                config.enable_c,
            )?);
        }
        let (frames, g_trace) = nets.generator.forward_traced(&g_input, n_rows)?;
        let frame = |r: usize| &frames[r * px..(r + 1) * px];
        let mut grad_frames = vec![0.0; n_rows * px];

        if w.d_b != 0.0 || w.g_b != 0.0 {
            let mut input = images.clone();
            for &r in &fake_row {
                input.extend_from_slice(frame(r));
            }
            let (logits, trace) = nets.disc_b.forward_traced(&input, 2 * b)?;
            let mut g = vec![0.0; 2 * b];
            let (mut d_loss, mut g_b) = (0.0, 0.0);
            for i in 0..b {
                let (lr, gr) = losses::logit_loss(logits[i], true);
                let (lf, gf) = losses::logit_loss(logits[b + i], false);
                let (lg, gg) = losses::logit_loss(logits[b + i], true);
                d_loss += lr + lf;
                g_b += lg;
                g[i] = w.d_b * gr / bf;
                g[b + i] = (w.d_b * gf + w.g_b * gg) / bf;
            }
            if w.d_b != 0.0 {
                out.d_b_loss = d_loss / bf;
            }
            if w.g_b != 0.0 {
                out.g_b = g_b / bf;
            }
            if let Some(gin) = nets.disc_b.backward(&trace, &g, &mut grads.disc_b, need_g)? {
                for (i, &r) in fake_row.iter().enumerate() {
                    for k in 0..px {
                        grad_frames[r * px + k] += gin[(b + i) * px + k];
                    }
                }
            }
        }

        if sequence {
            let (mut vox, mut reg) = (0.0, 0.0);
            for (i, sample) in batch.iter().enumerate() {
                let lo = seq_start[i] * px;
                let hi = lo + bins_n * px;
                if w.l_vox != 0.0 {
                    let (v, g) = losses::loss_vox_grad(&frames[lo..hi], bins_n, sample.bin, config.tau)?;
                    vox += v;
                    for (dst, gv) in grad_frames[lo..hi].iter_mut().zip(g) {
                        *dst += w.l_vox * gv / bf;
                    }
                }
                if let (true, Some(c)) = (w.l_reg != 0.0, constraints) {
                    let (v, g) = losses::loss_reg_grad(
                        &frames[lo..hi],
                        bins_n,
                        sample.bin,
                        sample.meta.diagnosis,
                        c.masks,
                        c.rates,
                    )?;
                    reg += v;
                    for (dst, gv) in grad_frames[lo..hi].iter_mut().zip(g) {
                        *dst += w.l_reg * gv / bf;
                    }
                }
            }
            out.l_vox = vox / bf;
            out.l_reg = reg / bf;
        }

        if w.l_def != 0.0 {
            let mut def = 0.0;
            for (i, sample) in batch.iter().enumerate() {
                let (ra, rn) = def_rows[i];
                let (v, ga, gn) = losses::loss_def_grad(&sample.image, frame(ra), frame(rn), sample.alpha)?;
                def += v;
                for k in 0..px {
                    grad_frames[ra * px + k] += w.l_def * ga[k] / bf;
                    grad_frames[rn * px + k] += w.l_def * gn[k] / bf;
                }
            }
            out.l_def = def / bf;
        }

        if need_g {
            if let Some(gin) = nets.generator.backward(&g_trace, &grad_frames, &mut grads.generator, need_e)? {
                let width = arch.generator_input();
                for (r, &i) in row_owner.iter().enumerate() {
                    for k in 0..s {
                        grad_z[i * s + k] += gin[r * width + k];
                    }
                }
            }
        }
    }

    if need_e {
        nets.encoder.backward(&e_trace, &grad_z, &mut grads.encoder, false)?;
    }
    out.l_tot = losses::total_loss(out.e_z, out.g_b, out.l_vox, out.l_reg, out.l_def).l_tot;
    Ok((out, grads))
}

/// ADAM state of all four networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub encoder: AdamState,
    pub generator: AdamState,
    pub disc_z: AdamState,
    pub disc_b: AdamState,
}

impl Optimizers {
    pub fn new(nets: &Nets) -> Self {
        Self {
            encoder: AdamState::new(nets.encoder.params()),
            generator: AdamState::new(nets.generator.params()),
            disc_z: AdamState::new(nets.disc_z.params()),
            disc_b: AdamState::new(nets.disc_b.params()),
        }
    }
}

fn check_constraints(config: &TrainConfig, constraints: Option<&Constraints<'_>>) -> Result<()> {
    if !config.enable_p {
        return Ok(());
    }
    let c = constraints.ok_or_else(|| Error::State("P is enabled but no masks and SVR rates were supplied".into()))?;
    if c.masks.shape() != (config.arch.grid, config.arch.grid) {
        return Err(invalid(format!(
            "masks are {:?} but the grid is {}",
            c.masks.shape(),
            config.arch.grid
        )));
    }
    if c.masks.len() != c.rates.regions() || c.rates.bins() != config.arch.bins {
        return Err(invalid("masks and SVR rate table disagree"));
    }
    Ok(())
}

/// The E+G update: one ADAM step on `l_tot`. Returns the pre-update losses.
pub fn generator_step(
    nets: &mut Nets,
    opt: &mut Optimizers,
    batch: &[&TrainSample],
    draws: &Draws,
    config: &TrainConfig,
    constraints: Option<&Constraints<'_>>,
) -> Result<LossBreakdown> {
    let w = Weights::generator(config.enable_p);
    let (loss, grads) = objective(nets, batch, draws, &w, config, constraints, &[NetId::Encoder, NetId::Generator])?;
    adam_step(nets.encoder.params_mut(), &grads.encoder.tensors, &mut opt.encoder, &config.adam)?;
    adam_step(nets.generator.params_mut(), &grads.generator.tensors, &mut opt.generator, &config.adam)?;
    Ok(loss)
}

/// One training iteration: D_z, then D_b, then E and G jointly.
pub fn train_step<R: Rng>(
    nets: &mut Nets,
    opt: &mut Optimizers,
    batch: &[&TrainSample],
    config: &TrainConfig,
    constraints: Option<&Constraints<'_>>,
    rng: &mut R,
) -> Result<LossBreakdown> {
    check_constraints(config, constraints)?;
    let draws = Draws::sample(rng, batch.len(), &nets.arch);

    let dz = Weights {
        d_z: 1.0,
        ..Weights::default()
    };
    let (l, g) = objective(nets, batch, &draws, &dz, config, constraints, &[NetId::DiscZ])?;
    adam_step(nets.disc_z.params_mut(), &g.disc_z.tensors, &mut opt.disc_z, &config.adam)?;
    let d_z_loss = l.d_z_loss;

    let db = Weights {
        d_b: 1.0,
        ..Weights::default()
    };
    let (l, g) = objective(nets, batch, &draws, &db, config, constraints, &[NetId::DiscB])?;
    adam_step(nets.disc_b.params_mut(), &g.disc_b.tensors, &mut opt.disc_b, &config.adam)?;
    let d_b_loss = l.d_b_loss;

    let mut out = generator_step(nets, opt, batch, &draws, config, constraints)?;
    out.d_z_loss = d_z_loss;
    out.d_b_loss = d_b_loss;
    Ok(out)
}

/// Trained networks with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub nets: Nets,
    pub config: TrainConfig,
    /// Epochs completed so far.
    pub epochs_done: usize,
}

impl ModelCheckpoint {
    /// Seeded initialization for `config`.
    pub fn initial(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            nets: init_params(&config.arch, config.seed)?,
            config: *config,
            epochs_done: 0,
        })
    }
}

/// Rounds every parameter to single precision, the checkpoint storage type.
pub fn round_to_f32(nets: &mut Nets) {
    for id in NetId::ALL {
        for p in nets.net_mut(id).params_mut() {
            for v in p.value.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }
}

/// Runs `epochs` further epochs from `checkpoint`; `on_epoch` receives the
/// mean loss breakdown of each finished epoch.
pub fn train(
    checkpoint: &ModelCheckpoint,
    data: &[TrainSample],
    constraints: Option<&Constraints<'_>>,
    epochs: usize,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<ModelCheckpoint> {
    let config = checkpoint.config;
    config.validate()?;
    if checkpoint.nets.arch != config.arch {
        return Err(invalid("checkpoint networks disagree with its configuration"));
    }
    if epochs == 0 {
        return Ok(checkpoint.clone());
    }
    check_constraints(&config, constraints)?;
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    for t in data {
        if t.image.len() != config.arch.pixels() || t.bin + 1 >= config.arch.bins {
            return Err(invalid(format!(
                "training slice of subject {} does not match the grid",
                t.meta.subject_id
            )));
        }
    }
    let mut nets = checkpoint.nets.clone();
    let mut opt = Optimizers::new(&nets);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for e in 0..epochs {
        let epoch = checkpoint.epochs_done + e;
        let mut rng = stream(config.seed, epoch as u64, EPOCH_STREAM);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut log = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
            log.push(train_step(&mut nets, &mut opt, &batch, &config, constraints, &mut rng)?);
        }
        on_epoch(epoch, &LossBreakdown::mean(&log));
    }
    round_to_f32(&mut nets);
    Ok(ModelCheckpoint {
        nets,
        config,
        epochs_done: checkpoint.epochs_done + epochs,
    })
}

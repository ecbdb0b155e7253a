//! Whole-pipeline operations over files: cohort generation, preprocessing,
//! region and SVR fitting, training, simulation and the ablation study.

use std::path::{Path, PathBuf};

use neurodegen_core::eval::{evaluate_subject, Personalization, SubjectEval};
use neurodegen_core::losses::LossBreakdown;
use neurodegen_core::phantom::{sample_cohort, CohortSpec, PhantomConfig};
use neurodegen_core::preprocess::{normalize_trajectory, AgeBinning};
use neurodegen_core::regions::{build_region_masks, RegionMaskSet};
use neurodegen_core::svr::{build_svr_dataset, fit_all, RateTable, RegionSvrModel, SvrDataset};
use neurodegen_core::train::{train, Constraints, ModelCheckpoint, TrainSample};
use neurodegen_core::{Diagnosis, Image, NormalizedSlice, Slice, SliceMeta};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::formats::checkpoint::CheckpointFile;
use crate::formats::manifest::{Manifest, ManifestRow};
use crate::formats::slice_file::{read_image, write_image};
use crate::formats::{pgm, tables};
use crate::stats::{mean_std, paired_t_test};

pub const MANIFEST_NAME: &str = "manifest.csv";

fn slice_path(subject: u32, visit: usize) -> String {
    format!("slices/s{subject:05}_v{visit:02}.dani")
}

/// Renders a phantom cohort into `out` (slice files plus `manifest.csv`).
pub fn write_cohort(out: &Path, config: &PhantomConfig, spec: &CohortSpec) -> Result<Vec<ManifestRow>> {
    let cohort = sample_cohort(config, spec)?;
    let mut rows = Vec::new();
    for subject in &cohort {
        for (visit, slice) in subject.slices.iter().enumerate() {
            let rel = slice_path(subject.subject_id, visit);
            write_image(&out.join(&rel), &slice.image)?;
            rows.push(ManifestRow {
                subject_id: subject.subject_id,
                visit_index: visit as u32,
                age_years: slice.meta.age,
                diagnosis: subject.diagnosis.code(),
                path: rel,
            });
        }
    }
    Manifest::write(&out.join(MANIFEST_NAME), &rows)?;
    Ok(rows)
}

fn meta(row: &ManifestRow) -> Result<SliceMeta> {
    Ok(SliceMeta {
        subject_id: row.subject_id,
        age: row.age_years,
        diagnosis: Diagnosis::new(row.diagnosis)?,
    })
}

/// Reads the raw slices of a manifest in row order.
pub fn load_raw(manifest: &Manifest) -> Result<Vec<Slice>> {
    manifest
        .rows
        .iter()
        .map(|row| {
            Ok(Slice {
                image: read_image(&manifest.resolve(row))?,
                meta: meta(row)?,
            })
        })
        .collect()
}

/// Normalizes each subject's visits with the statistics of its first visit
/// (lowest visit index) into `out`, keeping relative paths.
pub fn preprocess(manifest: &Manifest, out: &Path) -> Result<Vec<ManifestRow>> {
    let raw = load_raw(manifest)?;
    let mut done = vec![false; raw.len()];
    for i in 0..raw.len() {
        if done[i] {
            continue;
        }
        let id = manifest.rows[i].subject_id;
        let mut idx: Vec<usize> = (i..raw.len()).filter(|&j| manifest.rows[j].subject_id == id).collect();
        idx.sort_by_key(|&j| manifest.rows[j].visit_index);
        let visits: Vec<Slice> = idx.iter().map(|&j| raw[j].clone()).collect();
        for (&j, norm) in idx.iter().zip(normalize_trajectory(&visits)?) {
            write_image(&out.join(&manifest.rows[j].path), norm.image())?;
            done[j] = true;
        }
    }
    Manifest::write(&out.join(MANIFEST_NAME), &manifest.rows)?;
    Ok(manifest.rows.clone())
}

/// Normalized slices grouped by subject in order of first appearance, each
/// subject's visits ordered by visit index.
pub fn load_subjects(manifest: &Manifest) -> Result<Vec<Vec<NormalizedSlice>>> {
    let mut order: Vec<u32> = Vec::new();
    let mut groups: Vec<Vec<(u32, NormalizedSlice)>> = Vec::new();
    for row in &manifest.rows {
        let path = manifest.resolve(row);
        let image = read_image(&path)?;
        let slice = NormalizedSlice::from_unit_range(image, meta(row)?).map_err(|e| {
            Error::format(&path, format!("{e}; run `preprocess` on raw cohorts first"))
        })?;
        let g = match order.iter().position(|&s| s == row.subject_id) {
            Some(g) => g,
            None => {
                order.push(row.subject_id);
                groups.push(Vec::new());
                groups.len() - 1
            }
        };
        groups[g].push((row.visit_index, slice));
    }
    Ok(groups
        .into_iter()
        .map(|mut g| {
            g.sort_by_key(|(v, _)| *v);
            g.into_iter().map(|(_, s)| s).collect()
        })
        .collect())
}

pub fn fit_regions(subjects: &[Vec<NormalizedSlice>], regions: usize, dilation: usize) -> Result<RegionMaskSet> {
    let all: Vec<NormalizedSlice> = subjects.iter().flatten().cloned().collect();
    Ok(build_region_masks(&all, regions, dilation)?)
}

pub fn fit_svr_models(
    subjects: &[Vec<NormalizedSlice>],
    masks: &RegionMaskSet,
    params: &neurodegen_core::svr::SvrParams,
) -> Result<(SvrDataset, Vec<RegionSvrModel>)> {
    let data = build_svr_dataset(subjects, masks)?;
    let models = fit_all(&data, params)?;
    Ok((data, models))
}

/// Masks plus tabulated SVR predictions for one age binning.
pub struct ConstraintSet {
    pub masks: RegionMaskSet,
    pub rates: RateTable,
}

impl ConstraintSet {
    pub fn new(masks: RegionMaskSet, models: &[RegionSvrModel], binning: &AgeBinning) -> Result<Self> {
        if models.len() != masks.len() {
            return Err(Error::Usage(format!(
                "{} region masks but {} SVR models",
                masks.len(),
                models.len()
            )));
        }
        let rates = RateTable::build(models, &binning.centers())?;
        Ok(Self { masks, rates })
    }

    pub fn view(&self) -> Constraints<'_> {
        Constraints {
            masks: &self.masks,
            rates: &self.rates,
        }
    }
}

fn check_grid(masks: &RegionMaskSet, grid: usize) -> Result<()> {
    if masks.shape() != (grid, grid) {
        return Err(Error::Usage(format!(
            "region masks are {:?} but the model grid is {grid}x{grid}",
            masks.shape()
        )));
    }
    Ok(())
}

/// Runs `epochs` further epochs from `start`; returns the new checkpoint and
/// the per-epoch mean losses.
pub fn train_model(
    start: &CheckpointFile,
    subjects: &[Vec<NormalizedSlice>],
    constraints: Option<&ConstraintSet>,
    epochs: usize,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<(CheckpointFile, Vec<(usize, LossBreakdown)>)> {
    let config = start.model.config;
    let binning = config.binning()?;
    if let Some(c) = constraints {
        check_grid(&c.masks, config.arch.grid)?;
    }
    let mut data = Vec::new();
    for slice in subjects.iter().flatten() {
        if slice.image().shape() != (config.arch.grid, config.arch.grid) {
            return Err(Error::Usage(format!(
                "slice of subject {} is {:?}, the model grid is {}",
                slice.meta.subject_id,
                slice.image().shape(),
                config.arch.grid
            )));
        }
        data.push(TrainSample::new(slice, &binning)?);
    }
    let view = constraints.filter(|_| config.enable_p).map(ConstraintSet::view);
    let mut log = Vec::new();
    let model = train(&start.model, &data, view.as_ref(), epochs, |e, b| {
        progress(e, b);
        log.push((e, *b));
    })?;
    Ok((CheckpointFile::new(model, start.config), log))
}

/// Output of [`simulate`]: the `A` bin frames and the blend at the target age.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub frames: Vec<Image>,
    pub target_age: f64,
    pub target: Image,
}

pub fn simulate(model: &ModelCheckpoint, input: &NormalizedSlice, target_age: f64) -> Result<Simulation> {
    let arch = model.config.arch;
    if input.image().shape() != (arch.grid, arch.grid) {
        return Err(Error::Usage(format!(
            "input slice is {:?}, the model grid is {}",
            input.image().shape(),
            arch.grid
        )));
    }
    let nets = &model.nets;
    let latent = nets.encode(input.image().as_slice(), 1)?;
    let d = input.meta.diagnosis;
    let seq = nets.generate_sequence(&latent, d, model.config.enable_c)?;
    let frames = seq
        .chunks(arch.pixels())
        .map(|f| Image::from_vec(arch.grid, arch.grid, f.to_vec()))
        .collect::<std::result::Result<_, _>>()?;
    let target = neurodegen_core::eval::synthesize_at_age(
        nets,
        &latent,
        d,
        model.config.enable_c,
        target_age,
        &model.config.binning()?,
    )?;
    Ok(Simulation {
        frames,
        target_age,
        target,
    })
}

/// Writes `frame_XX.pgm`/`.dani` per bin and `target.pgm`/`.dani`.
pub fn write_simulation(out: &Path, sim: &Simulation) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut emit = |stem: String, image: &Image| -> Result<()> {
        let pgm_path = out.join(format!("{stem}.pgm"));
        write_atomic(&pgm_path, &pgm::encode(image))?;
        let raw_path = out.join(format!("{stem}.dani"));
        write_image(&raw_path, image)?;
        written.push(pgm_path);
        written.push(raw_path);
        Ok(())
    };
    for (i, f) in sim.frames.iter().enumerate() {
        emit(format!("frame_{i:02}"), f)?;
    }
    emit("target".into(), &sim.target)?;
    Ok(written)
}

/// Names of the ablation cells in report order.
pub const CELLS: [&str; 8] = ["baseline", "C", "T", "C-T", "P", "P-C", "P-T", "P-C-T"];

/// Trained checkpoints of the four training-time configurations.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainedSet<'a> {
    pub plain: Option<&'a ModelCheckpoint>,
    pub c: Option<&'a ModelCheckpoint>,
    pub p: Option<&'a ModelCheckpoint>,
    pub pc: Option<&'a ModelCheckpoint>,
}

impl<'a> TrainedSet<'a> {
    /// Checkpoint and test-time flag behind cell `i` of [`CELLS`].
    fn cell(&self, i: usize) -> (Option<&'a ModelCheckpoint>, bool) {
        let ckpt = match i {
            0 | 2 => self.plain,
            1 | 3 => self.c,
            4 | 6 => self.p,
            _ => self.pc,
        };
        (ckpt, matches!(i, 2 | 3 | 6 | 7))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub name: &'static str,
    /// `None` when the cell's checkpoint was not supplied.
    pub subjects: Option<Vec<SubjectEval>>,
    pub mean: f64,
    pub std: f64,
    pub p_vs_baseline: Option<f64>,
}

impl CellResult {
    pub fn n(&self) -> usize {
        self.subjects.as_ref().map_or(0, Vec::len)
    }

    pub fn subject_means(&self) -> Vec<f64> {
        self.subjects.iter().flatten().map(SubjectEval::mean).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<CellResult>,
    /// Subjects without a follow-up at least two years after baseline.
    pub skipped: Vec<u32>,
}

/// Settings shared by all personalized cells.
#[derive(Clone, Copy)]
pub struct AblationSettings<'a> {
    pub iterations: usize,
    pub seed: u64,
    pub masks: Option<&'a RegionMaskSet>,
    pub svr: Option<&'a [RegionSvrModel]>,
}

fn evaluate_all(
    ckpt: &ModelCheckpoint,
    subjects: &[&[NormalizedSlice]],
    personalization: Option<&Personalization<'_>>,
) -> Result<Vec<SubjectEval>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(subjects.len().max(1));
    let mut slots: Vec<Option<Result<Option<SubjectEval>>>> = (0..subjects.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = subjects.len().div_ceil(workers).max(1);
        for (out, part) in slots.chunks_mut(chunk).zip(subjects.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, visits) in out.iter_mut().zip(part) {
                    *slot = Some(evaluate_subject(ckpt, visits, personalization).map_err(Error::from));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled").map(|e| e.expect("eligible subjects only")))
        .collect()
}

/// Evaluates the eight configurations on the eligible subjects and tests
/// each against the baseline cell.
pub fn run_ablation(
    subjects: &[Vec<NormalizedSlice>],
    trained: &TrainedSet<'_>,
    settings: &AblationSettings<'_>,
) -> Result<AblationReport> {
    let mut eligible: Vec<&[NormalizedSlice]> = Vec::new();
    let mut skipped = Vec::new();
    for s in subjects {
        let Some(first) = s.first() else { continue };
        if s[1..]
            .iter()
            .any(|v| v.meta.age - first.meta.age >= neurodegen_core::eval::MIN_FOLLOWUP_YEARS)
        {
            eligible.push(s);
        } else {
            skipped.push(first.meta.subject_id);
        }
    }
    let mut cells = Vec::with_capacity(CELLS.len());
    for (i, name) in CELLS.iter().enumerate() {
        let (ckpt, use_t) = trained.cell(i);
        let Some(ckpt) = ckpt else {
            cells.push(CellResult {
                name,
                subjects: None,
                mean: f64::NAN,
                std: f64::NAN,
                p_vs_baseline: None,
            });
            continue;
        };
        let constraint_set = match (ckpt.config.enable_p && use_t, settings.masks, settings.svr) {
            (false, _, _) => None,
            (true, Some(m), Some(s)) => Some(ConstraintSet::new(m.clone(), s, &ckpt.config.binning()?)?),
            _ => {
                return Err(Error::Usage(format!(
                    "cell {name} personalizes a P model and needs region masks and SVR models"
                )))
            }
        };
        let view = constraint_set.as_ref().map(ConstraintSet::view);
        let personalization = use_t.then_some(Personalization {
            iterations: settings.iterations,
            constraints: view.as_ref(),
            seed: settings.seed,
        });
        let evals = evaluate_all(ckpt, &eligible, personalization.as_ref())?;
        let means: Vec<f64> = evals.iter().map(SubjectEval::mean).collect();
        let (mean, std) = mean_std(&means);
        cells.push(CellResult {
            name,
            subjects: Some(evals),
            mean,
            std,
            p_vs_baseline: None,
        });
    }
    let base = cells[0].subject_means();
    if cells[0].subjects.is_some() {
        for c in cells.iter_mut().filter(|c| c.subjects.is_some()) {
            c.p_vs_baseline = Some(paired_t_test(&c.subject_means(), &base)?.p);
        }
    }
    Ok(AblationReport { cells, skipped })
}

impl AblationReport {
    pub fn cell(&self, name: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.name == name)
    }

    /// `config,n,ssim_mean,ssim_std,p_vs_baseline`, preceded by a comment
    /// line describing the aggregation.
    pub fn report_csv(&self) -> String {
        let mut out = String::from(
            "# ssim per subject = mean over follow-ups >= 2 years after baseline; \
             cohort mean and sample std over subjects; p = two-sided paired t-test vs baseline\n",
        );
        out.push_str("config,n,ssim_mean,ssim_std,p_vs_baseline\n");
        for c in &self.cells {
            match &c.subjects {
                Some(_) => out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.name,
                    c.n(),
                    c.mean,
                    c.std,
                    c.p_vs_baseline.map(|p| p.to_string()).unwrap_or_default()
                )),
                None => out.push_str(&format!("{},0,,,\n", c.name)),
            }
        }
        out
    }

    /// `config,subject_id,n_followups,ssim_mean`.
    pub fn subjects_csv(&self) -> String {
        let mut out = String::from("config,subject_id,n_followups,ssim_mean\n");
        for c in &self.cells {
            for s in c.subjects.iter().flatten() {
                out.push_str(&format!("{},{},{},{}\n", c.name, s.subject_id, s.ssim.len(), s.mean()));
            }
        }
        out
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_atomic(&out.join("report.csv"), self.report_csv().as_bytes())?;
        write_atomic(&out.join("subjects.csv"), self.subjects_csv().as_bytes())
    }
}

/// Writes the loss CSV for a training run.
pub fn write_losses(path: &Path, rows: &[(usize, LossBreakdown)]) -> Result<()> {
    tables::write_loss_csv(path, rows)
}

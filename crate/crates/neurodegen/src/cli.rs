//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use neurodegen_core::personalize::personalize;
use neurodegen_core::phantom::{CohortSpec, PhantomConfig};
use neurodegen_core::preprocess::normalize_intensity;
use neurodegen_core::train::ModelCheckpoint;
use neurodegen_core::{Diagnosis, NormalizedSlice, Slice, SliceMeta};

use crate::atomic::read_text;
use crate::error::{Error, Result};
use crate::formats::checkpoint::CheckpointFile;
use crate::formats::config::PipelineConfig;
use crate::formats::manifest::Manifest;
use crate::formats::slice_file::{read_image, read_masks, write_masks};
use crate::formats::svr_text;
use crate::pipeline::{self, AblationSettings, ConstraintSet, TrainedSet};

#[derive(Parser, Debug)]
#[command(name = "neurodegen", about = "Simulate regional brain atrophy on 2-D slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic cohort and its manifest.
    Phantom(PhantomArgs),
    /// Normalize every slice of a manifest.
    Preprocess(PreprocessArgs),
    /// Cluster the training cohort into region masks.
    Regions(RegionsArgs),
    /// Fit one progression-rate SVR per region.
    SvrFit(SvrFitArgs),
    /// Train the networks.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on one baseline slice.
    Personalize(PersonalizeArgs),
    /// Emit the age-bin frames and the frame at a target age.
    Simulate(SimulateArgs),
    /// Run the eight-configuration ablation on a test cohort.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long)]
    subjects: usize,
    #[arg(long, default_value_t = 4)]
    visits: usize,
    /// Years between visits.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Id of the first subject; later subjects count up from it.
    #[arg(long, default_value_t = 0)]
    first_subject: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RegionsArgs {
    /// Preprocessed training manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    dilation: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SvrFitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    svr: Option<PathBuf>,
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Continue from this checkpoint; its embedded configuration is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_p: bool,
    #[arg(long)]
    no_c: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Slice file of the subject.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    age: f64,
    #[arg(long)]
    dx: u8,
    #[arg(long, default_value_t = 0)]
    subject: u32,
    /// The input is already normalized to [-1, 1].
    #[arg(long)]
    prenormalized: bool,
}

#[derive(Args, Debug)]
struct PersonalizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Defaults to the checkpoint's configured count.
    #[arg(long)]
    iters: Option<usize>,
    /// Rejected unless it matches the checkpoint's embedded configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    svr: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Age of the blended frame; defaults to the input age.
    #[arg(long)]
    target_age: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Preprocessed test manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint trained without P and C.
    #[arg(long)]
    ckpt_base: Option<PathBuf>,
    #[arg(long)]
    ckpt_c: Option<PathBuf>,
    #[arg(long)]
    ckpt_p: Option<PathBuf>,
    #[arg(long)]
    ckpt_pc: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    svr: Option<PathBuf>,
    #[arg(long, default_value_t = neurodegen_core::personalize::DEFAULT_ITERATIONS)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.csv and subjects.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::parse(&read_text(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_input(args: &InputArgs) -> Result<NormalizedSlice> {
    let slice = Slice {
        image: read_image(&args.input)?,
        meta: SliceMeta {
            subject_id: args.subject,
            age: args.age,
            diagnosis: Diagnosis::new(args.dx).map_err(|e| Error::Usage(e.to_string()))?,
        },
    };
    if args.prenormalized {
        NormalizedSlice::from_unit_range(slice.image, slice.meta)
            .map_err(|e| Error::format(&args.input, e.to_string()))
    } else {
        Ok(normalize_intensity(&slice)?)
    }
}

/// Masks and SVR models, required when `needed`.
fn load_constraints(
    masks: Option<&Path>,
    svr: Option<&Path>,
    model: &ModelCheckpoint,
    needed: bool,
) -> Result<Option<ConstraintSet>> {
    if !needed {
        return Ok(None);
    }
    let (Some(m), Some(s)) = (masks, svr) else {
        return Err(Error::Usage("models with P enabled need --masks and --svr".into()));
    };
    Ok(Some(ConstraintSet::new(read_masks(m)?, &svr_text::read(s)?, &model.config.binning()?)?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom(a) => {
            let config = PhantomConfig {
                grid_size: a.grid,
                noise_sigma: a.noise,
                seed: a.seed,
                ..PhantomConfig::default()
            };
            let spec = CohortSpec {
                subjects: a.subjects,
                visits: a.visits,
                interval: a.interval,
                first_subject: a.first_subject,
            };
            let rows = pipeline::write_cohort(&a.out, &config, &spec)?;
            println!("wrote {} slices to {}", rows.len(), a.out.display());
        }
        Command::Preprocess(a) => {
            let rows = pipeline::preprocess(&Manifest::read(&a.manifest)?, &a.out)?;
            println!("normalized {} slices into {}", rows.len(), a.out.display());
        }
        Command::Regions(a) => {
            let config = load_config(a.config.as_deref())?;
            let subjects = pipeline::load_subjects(&Manifest::read(&a.manifest)?)?;
            let r = a.regions.unwrap_or(config.train.regions);
            let masks = pipeline::fit_regions(&subjects, r, a.dilation.unwrap_or(config.dilation))?;
            write_masks(&a.out, &masks)?;
            println!("{} regions, mean size {:.1} voxels", masks.len(), masks.mean_mask_size());
        }
        Command::SvrFit(a) => {
            let config = load_config(a.config.as_deref())?;
            let subjects = pipeline::load_subjects(&Manifest::read(&a.manifest)?)?;
            let masks = read_masks(&a.masks)?;
            let (data, models) = pipeline::fit_svr_models(&subjects, &masks, &config.svr)?;
            svr_text::write(&a.out, &models)?;
            println!(
                "fitted {} regions; dropped {:.1}% of ratio samples",
                models.len(),
                100.0 * data.dropped_fraction()
            );
        }
        Command::Train(a) => {
            let start = match &a.resume {
                Some(p) => CheckpointFile::read(p)?,
                None => {
                    let mut config = load_config(a.config.as_deref())?;
                    if a.no_p {
                        config.train.enable_p = false;
                    }
                    if a.no_c {
                        config.train.enable_c = false;
                    }
                    if let Some(s) = a.seed {
                        config.train.seed = s;
                    }
                    if let Some(e) = a.epochs {
                        config.train.epochs = e;
                    }
                    config.validate()?;
                    CheckpointFile::new(ModelCheckpoint::initial(&config.train)?, config)
                }
            };
            if a.resume.is_some() && (a.no_p || a.no_c || a.seed.is_some()) {
                return Err(Error::Usage(
                    "--no-p, --no-c and --seed cannot change a resumed checkpoint".into(),
                ));
            }
            let epochs = a.epochs.unwrap_or(start.config.train.epochs);
            let subjects = pipeline::load_subjects(&Manifest::read(&a.manifest)?)?;
            let constraints = load_constraints(
                a.masks.as_deref(),
                a.svr.as_deref(),
                &start.model,
                start.config.train.enable_p,
            )?;
            let (ckpt, log) = pipeline::train_model(&start, &subjects, constraints.as_ref(), epochs, |e, b| {
                eprintln!("epoch {e}: l_tot {:.6} l_def {:.6}", b.l_tot, b.l_def);
            })?;
            ckpt.write(&a.out)?;
            if let Some(p) = &a.loss_csv {
                pipeline::write_losses(p, &log)?;
            }
        }
        Command::Personalize(a) => {
            let ckpt = CheckpointFile::read(&a.ckpt)?;
            if let Some(p) = &a.config {
                let given = PipelineConfig::parse(&read_text(p)?)?;
                if given.train.arch != ckpt.config.train.arch
                    || given.train.enable_p != ckpt.config.train.enable_p
                    || given.train.enable_c != ckpt.config.train.enable_c
                {
                    return Err(Error::Usage(format!(
                        "{} does not match the configuration embedded in {}",
                        p.display(),
                        a.ckpt.display()
                    )));
                }
            }
            let baseline = load_input(&a.input)?;
            let iters = a.iters.unwrap_or(ckpt.config.personalize_iters);
            let constraints = load_constraints(
                a.masks.as_deref(),
                a.svr.as_deref(),
                &ckpt.model,
                ckpt.config.train.enable_p,
            )?;
            let view = constraints.as_ref().map(ConstraintSet::view);
            let tuned = personalize(&ckpt.model, &baseline, iters, view.as_ref(), a.seed)?;
            CheckpointFile::new(tuned, ckpt.config).write(&a.out)?;
        }
        Command::Simulate(a) => {
            let ckpt = CheckpointFile::read(&a.ckpt)?;
            let input = load_input(&a.input)?;
            let sim = pipeline::simulate(&ckpt.model, &input, a.target_age.unwrap_or(a.input.age))?;
            let files = pipeline::write_simulation(&a.out, &sim)?;
            println!("wrote {} files to {}", files.len(), a.out.display());
        }
        Command::Evaluate(a) => {
            let subjects = pipeline::load_subjects(&Manifest::read(&a.manifest)?)?;
            let load = |p: &Option<PathBuf>| p.as_deref().map(CheckpointFile::read).transpose();
            let (plain, c, p, pc) = (load(&a.ckpt_base)?, load(&a.ckpt_c)?, load(&a.ckpt_p)?, load(&a.ckpt_pc)?);
            let masks = a.masks.as_deref().map(read_masks).transpose()?;
            let svr = a.svr.as_deref().map(svr_text::read).transpose()?;
            let trained = TrainedSet {
                plain: plain.as_ref().map(|f| &f.model),
                c: c.as_ref().map(|f| &f.model),
                p: p.as_ref().map(|f| &f.model),
                pc: pc.as_ref().map(|f| &f.model),
            };
            let settings = AblationSettings {
                iterations: a.iters,
                seed: a.seed,
                masks: masks.as_ref(),
                svr: svr.as_deref(),
            };
            let report = pipeline::run_ablation(&subjects, &trained, &settings)?;
            for id in &report.skipped {
                eprintln!("warning: subject {id} has no follow-up two years after baseline; skipped");
            }
            report.write(&a.out)?;
            print!("{}", report.report_csv());
        }
    }
    Ok(())
}

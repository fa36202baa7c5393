//! `viewadapt` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric or training failure.

mod config;
mod predictions;
mod render;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use viewadapt::data::{
    dataset_stats, load_sequence, manifest_root, save_sequence, split_indices, stick_figure_bones,
    synth_generate, DatasetManifest, SplitRole, STICK_FIGURE_JOINTS,
};
use viewadapt::geometry::{preprocess, AugmentRange};
use viewadapt::models::{
    peek_checkpoint, AnyModel, Checkpoint, ModelKind, TrainConfig, Trainer, VaCnn, VaRnn,
};
use viewadapt::oracles::run_gradient_oracles;
use viewadapt::skeleton::{FrameOfReference, SkeletonSequence};
use viewadapt::ErrorCategory;
use viewadapt_tensor::Scalar;

use config::{Precision, RunConfig};
use predictions::{write, Prediction, PredictionFile, ReportFile, PREDICTIONS_FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] viewadapt::Error),
    #[error("{0} gradient oracle(s) failed")]
    OraclesFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            },
            CliError::OraclesFailed(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "viewadapt",
    version,
    about = "View-adaptive skeleton action recognition"
)]
struct Cli {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multi-view dataset.
    Synth {
        /// Directory for the sequence files and `manifest.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize every sequence of a dataset with the configured strategy.
    Preprocess {
        /// Input manifest.
        #[arg(long)]
        data: PathBuf,
        /// Directory for the normalized dataset.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint, an epoch log and the effective configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes a report and per-sequence probabilities.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        /// Which part of the dataset to score.
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
        /// Directory for `predictions.toml` and `report.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse two prediction files by weighted averaging (4:1 by default).
    Fuse {
        /// Predictions of the VA-CNN.
        #[arg(long)]
        cnn: PathBuf,
        /// Predictions of the VA-RNN.
        #[arg(long)]
        rnn: PathBuf,
        #[arg(long, default_value_t = viewadapt::models::CNN_WEIGHT)]
        cnn_weight: f64,
        #[arg(long, default_value_t = viewadapt::models::RNN_WEIGHT)]
        rnn_weight: f64,
        /// Directory for the fused `predictions.toml` and `report.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a sequence before and after the model's learned viewpoint as SVG.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A sequence file in the dataset format.
        #[arg(long)]
        sequence: PathBuf,
        /// Comma-separated frame indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        frames: Vec<usize>,
        /// SVG file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every analytic gradient against finite differences.
    Gradcheck {
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelChoice::VaRnn)]
    model: ModelChoice,
    /// Turn off the rotation branch of the view subnetwork.
    #[arg(long)]
    disable_rotation: bool,
    /// Turn off the translation branch of the view subnetwork.
    #[arg(long)]
    disable_translation: bool,
    /// Rotation augmentation of `±DEG` degrees on every angle.
    #[arg(long, value_name = "DEG")]
    augment_range: Option<f64>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Directory for the checkpoint, log and configuration.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    VaRnn,
    VaCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth { out } => synth(&cfg, &out),
        Command::Preprocess { data, out } => preprocess_cmd(&cfg, &data, &out),
        Command::Train(args) => match cfg.precision {
            Precision::F32 => train_cmd::<f32>(cfg, &args),
            Precision::F64 => train_cmd::<f64>(cfg, &args),
        },
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => eval_cmd(&cfg, &checkpoint, &data, split, &out),
        Command::Fuse {
            cnn,
            rnn,
            cnn_weight,
            rnn_weight,
            out,
        } => fuse_cmd(&cnn, &rnn, cnn_weight, rnn_weight, &out),
        Command::Render {
            checkpoint,
            sequence,
            frames,
            out,
        } => render_cmd(&cfg, &checkpoint, &sequence, &frames, &out),
        Command::Gradcheck { out } => gradcheck(out.as_deref()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        viewadapt::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = viewadapt::data::SynthSpec {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let data = synth_generate(&spec)?;
    data.write_to(out)?;
    println!(
        "wrote {} sequences to {}",
        data.sequences.len(),
        out.display()
    );
    Ok(())
}

/// Raw sequences get the configured normalization; anything already
/// normalized is used as is.
fn normalize(cfg: &RunConfig, seq: SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.frame_of_reference == FrameOfReference::Raw {
        Ok(preprocess(&seq, &cfg.preprocess)?)
    } else {
        Ok(seq)
    }
}

fn preprocess_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(data)?;
    let seqs = manifest.load_sequences(&manifest_root(data))?;
    create_dir(out)?;
    for (entry, seq) in manifest.entries.iter().zip(seqs) {
        if seq.frame_of_reference != FrameOfReference::Raw {
            return Err(viewadapt::Error::State(format!(
                "{} is already normalized",
                entry.path.display()
            ))
            .into());
        }
        save_sequence(&preprocess(&seq, &cfg.preprocess)?, out.join(&entry.path))?;
    }
    manifest.save(out.join("manifest.toml"))?;
    println!(
        "normalized {} sequences into {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}

/// Entries and normalized sequences of one side of the dataset. Split tags
/// in the manifest win; untagged manifests are split with `[split]`.
fn load_split(
    cfg: &RunConfig,
    data: &Path,
    role: Option<SplitRole>,
) -> Result<(DatasetManifest, Vec<SkeletonSequence>)> {
    let manifest = DatasetManifest::load(data)?;
    let all = manifest.load_sequences(&manifest_root(data))?;
    let keep: Vec<usize> = match role {
        None => (0..all.len()).collect(),
        Some(role) if manifest.entries.iter().any(|e| e.split.is_some()) => (0..all.len())
            .filter(|&i| manifest.entries[i].split == Some(role))
            .collect(),
        Some(role) => {
            let tags: Vec<(u32, &str)> = manifest
                .entries
                .iter()
                .map(|e| (e.subject, e.view.as_str()))
                .collect();
            let idx = split_indices(&tags, &cfg.split, cfg.seed)?;
            match role {
                SplitRole::Train => idx.train,
                SplitRole::Test => idx.test,
            }
        }
    };
    if keep.is_empty() {
        return Err(viewadapt::Error::Schema(format!(
            "{} has no sequences in the requested split",
            data.display()
        ))
        .into());
    }
    let entries = keep.iter().map(|&i| manifest.entries[i].clone()).collect();
    let seqs = keep
        .iter()
        .map(|&i| normalize(cfg, all[i].clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        DatasetManifest {
            entries,
            ..manifest
        },
        seqs,
    ))
}

fn train_cmd<T: Scalar>(mut cfg: RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(deg) = args.augment_range {
        if !(deg >= 0.0 && deg.is_finite()) {
            return Err(CliError::Usage(format!(
                "--augment-range must be a non-negative angle, got {deg}"
            )));
        }
        cfg.train.augment = Some(AugmentRange::symmetric(deg));
    }
    let (manifest, train_set) = load_split(&cfg, &args.data, Some(SplitRole::Train))?;
    let classes = manifest.num_classes();
    let joints = manifest.joint_names.len();
    let (rotation, translation) = (!args.disable_rotation, !args.disable_translation);
    let mut model: AnyModel<T> = match args.model {
        ModelChoice::VaRnn => {
            let c = &mut cfg.varnn;
            (c.num_classes, c.num_joints) = (classes, joints);
            c.enable_rotation_branch &= rotation;
            c.enable_translation_branch &= translation;
            AnyModel::Rnn(VaRnn::new(c.clone(), cfg.seed)?)
        }
        ModelChoice::VaCnn => {
            let c = &mut cfg.vacnn;
            c.num_classes = classes;
            c.enable_rotation_branch &= rotation;
            c.enable_translation_branch &= translation;
            let (lo, hi) = dataset_stats(&train_set)?;
            AnyModel::Cnn(VaCnn::new(c.clone(), lo, hi, cfg.seed)?)
        }
    };
    let train_config = TrainConfig {
        epochs: cfg.train.epochs,
        seed: cfg.seed,
        augment: cfg.train.augment,
    };
    create_dir(&args.out)?;
    write(&args.out.join("run.toml"), cfg.to_toml()?)?;
    let log_path = args.out.join("train.log");
    let mut log = std::fs::File::create(&log_path).map_err(|e| viewadapt::Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let mut trainer = match &model {
        AnyModel::Rnn(m) => Trainer::new(m, train_config)?,
        AnyModel::Cnn(m) => Trainer::new(m, train_config)?,
    };
    for _ in 0..cfg.train.epochs {
        let entry = match &mut model {
            AnyModel::Rnn(m) => trainer.run_epoch(m, &train_set)?,
            AnyModel::Cnn(m) => trainer.run_epoch(m, &train_set)?,
        };
        writeln!(
            log,
            "epoch={} loss={:?} accuracy={:?} clip_scale={:?}",
            entry.epoch, entry.loss, entry.accuracy, entry.clip_scale
        )
        .and_then(|_| log.flush())
        .map_err(|e| viewadapt::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        println!(
            "epoch {} loss {:.4} train accuracy {:.3}",
            entry.epoch, entry.loss, entry.accuracy
        );
    }
    let checkpoint = Checkpoint::from_training(model, cfg.seed, &trainer);
    checkpoint.save(args.out.join("checkpoint.vack"))?;
    println!("wrote {}", args.out.join("checkpoint.vack").display());
    Ok(())
}

/// Loads a checkpoint in whichever precision it was stored.
fn with_checkpoint<R>(
    path: &Path,
    f32_fn: impl FnOnce(AnyModel<f32>) -> Result<R>,
    f64_fn: impl FnOnce(AnyModel<f64>) -> Result<R>,
) -> Result<R> {
    let bytes = std::fs::read(path).map_err(|e| viewadapt::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (_, dtype): (ModelKind, String) = peek_checkpoint(&bytes)?;
    if dtype == "f64" {
        f64_fn(Checkpoint::<f64>::from_bytes(&bytes)?.model)
    } else {
        f32_fn(Checkpoint::<f32>::from_bytes(&bytes)?.model)
    }
}

fn eval_cmd(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    split: SplitChoice,
    out: &Path,
) -> Result<()> {
    let role = match split {
        SplitChoice::Train => Some(SplitRole::Train),
        SplitChoice::Test => Some(SplitRole::Test),
        SplitChoice::All => None,
    };
    let (manifest, seqs) = load_split(cfg, data, role)?;
    let probabilities = with_checkpoint(
        checkpoint,
        |m| Ok(m.predict_proba(&seqs)?),
        |m| Ok(m.predict_proba(&seqs)?),
    )?;
    if probabilities
        .first()
        .is_some_and(|p| p.len() != manifest.num_classes())
    {
        return Err(viewadapt::Error::Schema(format!(
            "checkpoint scores {} classes, dataset has {}",
            probabilities[0].len(),
            manifest.num_classes()
        ))
        .into());
    }
    let file = PredictionFile {
        format_version: PREDICTIONS_FORMAT_VERSION,
        class_names: manifest.class_names.clone(),
        predictions: manifest
            .entries
            .iter()
            .zip(probabilities)
            .map(|(e, p)| Prediction {
                path: e.path.clone(),
                label: e.label,
                probabilities: p,
            })
            .collect(),
    };
    write_report(&file, out)
}

fn write_report(file: &PredictionFile, out: &Path) -> Result<()> {
    let report = ReportFile::new(&file.report()?, &file.class_names);
    create_dir(out)?;
    file.save(&out.join("predictions.toml"))?;
    write(&out.join("report.toml"), report.to_toml()?)?;
    println!(
        "accuracy {:.4} over {} sequences",
        report.accuracy, report.sequences
    );
    Ok(())
}

fn fuse_cmd(cnn: &Path, rnn: &Path, w_cnn: f64, w_rnn: f64, out: &Path) -> Result<()> {
    let fused = PredictionFile::fuse(
        &PredictionFile::load(cnn)?,
        &PredictionFile::load(rnn)?,
        w_cnn,
        w_rnn,
    )?;
    write_report(&fused, out)
}

fn render_cmd(
    cfg: &RunConfig,
    checkpoint: &Path,
    sequence: &Path,
    frames: &[usize],
    out: &Path,
) -> Result<()> {
    let seq = normalize(cfg, load_sequence(sequence)?)?;
    let transformed = with_checkpoint(
        checkpoint,
        |m| Ok(m.transform_sequence(&seq)?),
        |m| Ok(m.transform_sequence(&seq)?),
    )?;
    let bones = if seq
        .joint_names
        .iter()
        .map(String::as_str)
        .eq(STICK_FIGURE_JOINTS)
    {
        stick_figure_bones()
    } else {
        Vec::new()
    };
    let svg = render::render_svg(&seq, &transformed, frames, &bones)?;
    write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gradcheck(out: Option<&Path>) -> Result<()> {
    let outcomes = run_gradient_oracles()?;
    let mut text = String::new();
    for o in &outcomes {
        text.push_str(&format!("{o}\n"));
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    text.push_str(&format!(
        "{} of {} oracles passed\n",
        outcomes.len() - failed,
        outcomes.len()
    ));
    print!("{text}");
    if let Some(p) = out {
        write(p, text)?;
    }
    if failed > 0 {
        return Err(CliError::OraclesFailed(failed));
    }
    Ok(())
}

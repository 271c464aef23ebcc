//! Command-line front end: assess candidates against a reference, generate
//! synthetic recordings, and train or apply the transformer scorer.
//!
//! Every command builds its outputs in memory first and only then writes
//! them, each through a temporary file and rename, so a failing run leaves
//! no partial files behind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use posture_core::assessment::assess;
use posture_core::config::ExerciseConfig;
use posture_core::correction::{canvas_for, render_svg};
use posture_core::io::{
    load_annotation, load_report, load_sequence_with, read_json, sequence_to_json, to_json_pretty,
    write_atomic, LoadOptions,
};
use posture_core::report::AssessmentReport;
use posture_core::skeleton::{Annotation, Sequence};
use posture_core::synth::{generate, MotionSpec};
use posture_core::transformer::{
    checkpoint_json, load_checkpoint, loss_curve_csv, score_sequence, train, Example, TrainConfig,
    TransformerConfig, TransformerModel,
};
use posture_core::{Error, ErrorKind};

pub const EXIT_OUTPUT: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

pub const INDEX_FILE: &str = "index.json";
const KEYPOINTS_SUFFIX: &str = ".keypoints.json";
const ANNOTATION_SUFFIX: &str = ".annotation.json";

#[derive(Parser, Debug)]
#[command(
    name = "posture",
    version,
    about = "Exercise assessment and correction from 2D keypoints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score candidate recordings against a reference and draw correction aids.
    Assess(AssessArgs),
    /// Generate a synthetic recording and its annotation from a motion spec.
    Synth(SynthArgs),
    /// Train the transformer scorer on a directory of annotated recordings.
    Train(TrainArgs),
    /// Score a recording with a trained checkpoint.
    ScoreModel(ScoreModelArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Json,
}

#[derive(Args, Debug)]
pub struct AssessArgs {
    /// Candidate keypoint file; repeat to assess several in one run.
    #[arg(long = "candidate", required = true)]
    pub candidates: Vec<PathBuf>,
    #[arg(long)]
    pub reference: PathBuf,
    /// Exercise config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Transformer checkpoint whose scores are added to each report.
    #[arg(long)]
    pub aux_model: Option<PathBuf>,
    /// Worker threads for batch assessment (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Motion spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// File stem for the outputs; defaults to the exercise id.
    #[arg(long)]
    pub name: Option<String>,
    /// Also write an exercise config with the generated reference ranges.
    #[arg(long)]
    pub emit_config: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of `<name>.keypoints.json` / `<name>.annotation.json` pairs.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Training config (JSON with optional `model` and `train` sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; the loss curve is written next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides both the initialization and the shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
}

#[derive(Args, Debug)]
pub struct ScoreModelArgs {
    #[arg(long)]
    pub aux_model: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
    /// Report to extend with the transformer scores; without it the scores go to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Where to write the extended report (default: overwrite `--report`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingFile {
    pub model: TransformerConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub candidate: PathBuf,
    pub report: String,
    pub aids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentIndex {
    pub reference: PathBuf,
    pub entries: Vec<IndexEntry>,
}

/// Exit code for a failed run, from the library error underneath any context.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::kind)
    {
        Some(ErrorKind::Validation) => EXIT_VALIDATION,
        Some(ErrorKind::Degenerate) => EXIT_DEGENERATE,
        Some(ErrorKind::Divergence) => EXIT_DIVERGENCE,
        Some(ErrorKind::Output) | None => EXIT_OUTPUT,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Assess(a) => cmd_assess(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::ScoreModel(a) => cmd_score_model(&a),
    }
}

/// Files to write, in order. Nothing touches the disk until the whole set is ready.
#[derive(Debug, Default)]
pub struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    fn push(&mut self, path: PathBuf, bytes: impl Into<Vec<u8>>) {
        self.0.push((path, bytes.into()));
    }

    fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.0.len());
        for (path, bytes) in self.0 {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| Error::Write {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            write_atomic(&path, &bytes)?;
            log::info!("wrote {}", path.display());
            written.push(path);
        }
        Ok(written)
    }
}

fn pool(jobs: Option<u16>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n as usize);
    }
    builder.build().context("cannot start worker threads")
}

/// `squat_01.keypoints.json` -> `squat_01`.
pub fn file_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in [KEYPOINTS_SUFFIX, ".json"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            if !stem.is_empty() {
                return stem.to_string();
            }
        }
    }
    name
}

/// Frame ids are free text; keep file names portable.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn load_sequence(path: &Path, config: &ExerciseConfig, role: &str) -> Result<Sequence> {
    let options = LoadOptions {
        occlusion_threshold: config.occlusion_threshold,
    };
    load_sequence_with(path, &options).with_context(|| format!("{role} {}", path.display()))
}

struct Assessed {
    entry: IndexEntry,
    files: Vec<(String, String)>,
}

fn assess_one(
    path: &Path,
    reference: &Sequence,
    config: &ExerciseConfig,
    model: Option<&TransformerModel>,
) -> Result<Assessed> {
    let candidate = load_sequence(path, config, "candidate")?;
    let mut out = assess(&candidate, reference, config)
        .with_context(|| format!("assessing {}", path.display()))?;
    if let Some(model) = model {
        let (scores, _) = score_sequence(model, &candidate)
            .with_context(|| format!("model scoring {}", path.display()))?;
        out.report.detail.auxiliary = Some(scores);
        out.report.validate()?;
    }
    let stem = file_stem(path);
    let report_name = format!("{stem}_report.json");
    let mut files = vec![(report_name.clone(), to_json_pretty(&out.report))];
    let mut aids = Vec::new();
    for aid in &out.aids {
        let frame = candidate
            .frames()
            .iter()
            .find(|f| f.id() == aid.frame_id)
            .expect("aids refer to candidate frames");
        let (w, h) = canvas_for(frame);
        let name = format!("{stem}_{}_aid.svg", sanitize(&aid.frame_id));
        files.push((name.clone(), render_svg(aid, frame, w, h)));
        aids.push(name);
    }
    log::info!(
        "{}: joint {:.1} pace {:.1} range {:?}, {} aids",
        out.report.name,
        out.report.joint,
        out.report.pace,
        out.report.range,
        aids.len()
    );
    Ok(Assessed {
        entry: IndexEntry {
            candidate: path.to_path_buf(),
            report: report_name,
            aids,
        },
        files,
    })
}

/// Assess every candidate, then write reports, aids and an index into `--out`.
pub fn cmd_assess(args: &AssessArgs) -> Result<Vec<PathBuf>> {
    let config = ExerciseConfig::load(&args.config)
        .with_context(|| format!("config {}", args.config.display()))?;
    let reference = load_sequence(&args.reference, &config, "reference")?;
    let model = match &args.aux_model {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("checkpoint {}", p.display()))?),
        None => None,
    };
    let mut stems = BTreeSet::new();
    for c in &args.candidates {
        if !stems.insert(file_stem(c)) {
            return Err(Error::Config(format!(
                "two candidates share the output name {:?}",
                file_stem(c)
            ))
            .into());
        }
    }
    let results = pool(args.jobs)?.install(|| {
        args.candidates
            .par_iter()
            .map(|c| assess_one(c, &reference, &config, model.as_ref()))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut outputs = Outputs::default();
    let mut entries = Vec::new();
    for r in results {
        for (name, body) in r.files {
            outputs.push(args.out.join(name), body);
        }
        entries.push(r.entry);
    }
    let index = AssessmentIndex {
        reference: args.reference.clone(),
        entries,
    };
    outputs.push(args.out.join(INDEX_FILE), to_json_pretty(&index));
    outputs.commit()
}

/// Generate one recording; writes `<name>.keypoints.json` and `<name>.annotation.json`.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let spec: MotionSpec =
        read_json(&args.spec).with_context(|| format!("motion spec {}", args.spec.display()))?;
    let (seq, annotation) = generate(&spec, args.seed)
        .with_context(|| format!("motion spec {}", args.spec.display()))?;
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| annotation.exercise_id.clone());
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(Error::Config(format!("{name:?} is not a usable file name")).into());
    }
    let mut outputs = Outputs::default();
    outputs.push(
        args.out.join(format!("{name}{KEYPOINTS_SUFFIX}")),
        sequence_to_json(&seq),
    );
    outputs.push(
        args.out.join(format!("{name}{ANNOTATION_SUFFIX}")),
        to_json_pretty(&annotation),
    );
    if args.emit_config {
        let mut config = spec.template.exercise_config();
        config.exercise_id = annotation.exercise_id.clone();
        config.reference_angles = Some(annotation.reference_angles.clone());
        outputs.push(
            args.out.join(format!("{name}.config.json")),
            to_json_pretty(&config),
        );
    }
    outputs.commit()
}

/// Keypoint/annotation pairs in `dir`, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Sequence, Annotation)>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Read {
            path: dir.to_path_buf(),
            source,
        })?;
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = file.strip_suffix(KEYPOINTS_SUFFIX) {
            names.insert(stem.to_string(), entry.path());
        }
    }
    if names.is_empty() {
        return Err(
            Error::Config(format!("no *{KEYPOINTS_SUFFIX} files in {}", dir.display())).into(),
        );
    }
    names
        .into_iter()
        .map(|(name, keypoints)| {
            let seq = load_sequence_with(&keypoints, &LoadOptions::default())
                .with_context(|| format!("training sequence {}", keypoints.display()))?;
            let ann_path = dir.join(format!("{name}{ANNOTATION_SUFFIX}"));
            let annotation = load_annotation(&ann_path)
                .with_context(|| format!("annotation {}", ann_path.display()))?;
            Ok((name, seq, annotation))
        })
        .collect()
}

/// Train from scratch; writes the checkpoint and `<stem>.loss.csv` beside it.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let mut settings = match &args.config {
        Some(p) => read_json::<TrainingFile>(p)
            .with_context(|| format!("training config {}", p.display()))?,
        None => TrainingFile::default(),
    };
    if let Some(seed) = args.seed {
        settings.model.seed = seed;
        settings.train.seed = seed;
    }
    settings.model.validate()?;
    let dataset = load_dataset(&args.dataset)?;
    let seq_len = settings.model.seq_len;
    let examples = dataset
        .iter()
        .map(|(name, seq, ann)| {
            Example::from_annotated(seq, ann, seq_len).with_context(|| format!("example {name}"))
        })
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "training on {} examples for {} epochs",
        examples.len(),
        settings.train.epochs
    );

    let mut model = TransformerModel::new(settings.model.clone())?;
    let curve = pool(args.jobs)?.install(|| train(&mut model, &examples, &settings.train))?;

    let mut outputs = Outputs::default();
    outputs.push(args.out.clone(), checkpoint_json(&model));
    outputs.push(loss_csv_path(&args.out), loss_curve_csv(&curve));
    outputs.commit()
}

pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    checkpoint.with_file_name(format!("{stem}.loss.csv"))
}

/// Score one recording with a checkpoint, either into an existing report or to stdout.
pub fn cmd_score_model(args: &ScoreModelArgs) -> Result<()> {
    let model = load_checkpoint(&args.aux_model)
        .with_context(|| format!("checkpoint {}", args.aux_model.display()))?;
    let seq = load_sequence_with(&args.candidate, &LoadOptions::default())
        .with_context(|| format!("candidate {}", args.candidate.display()))?;
    let (scores, _) = score_sequence(&model, &seq)?;
    let Some(report_path) = &args.report else {
        print!("{}", to_json_pretty(&scores));
        return Ok(());
    };
    let mut report: AssessmentReport =
        load_report(report_path).with_context(|| format!("report {}", report_path.display()))?;
    report.detail.auxiliary = Some(scores);
    report.validate()?;
    let mut outputs = Outputs::default();
    outputs.push(
        args.out.clone().unwrap_or_else(|| report_path.clone()),
        to_json_pretty(&report),
    );
    outputs.commit()?;
    Ok(())
}

//! Command-line entry points.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::checkpoint::{self, CheckpointError};
use crate::config::{RunConfig, Seeds};
use crate::eval::evaluate;
use crate::train::{TrainError, Trainer};
use crate::visualize::{heatmap, to_svg, to_tsv};
use crate::world::dataset::{read_manifest, read_split, read_vocab};
use crate::world::{build_dataset, DataError};

#[derive(Debug, Parser)]
#[command(name = "textgroup", version, about = "Text group transformer on a synthetic image-caption world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train/val/test splits.
    Datagen(Common),
    /// Train a model and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write the metrics report.
    Eval(EvalArgs),
    /// Write the group attention heatmap of one caption.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON). Missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory or file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Ablate {
    Contrastive,
    Reconstruction,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory; defaults to the configured one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Disable one objective.
    #[arg(long, value_enum)]
    pub ablate: Option<Ablate>,
    /// Number of text groups K.
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Caption text, tokenized with the checkpoint vocabulary.
    #[arg(long, conflicts_with = "example", required_unless_present = "example")]
    pub caption: Option<String>,
    /// Index into the test split.
    #[arg(long)]
    pub example: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output prefix; `.tsv` and `.svg` are appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(m) => CliError::Config(m),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => CliError::Config(c.0),
            TrainError::Callback(m) => CliError::Data(m),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.0)))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = Seeds::from_base(seed);
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Datagen(args) => datagen(&args),
        Command::Train(args) => train(&args),
        Command::Eval(args) => eval(&args),
        Command::Visualize(args) => visualize(&args),
    }
}

fn datagen(args: &Common) -> Result<(), CliError> {
    let config = load_config(args)?;
    let dir = args.out.clone().unwrap_or_else(|| config.data.dir.clone());
    let d = &config.data;
    let dataset = build_dataset(&config.world, d.n_train, d.n_val, d.n_test, config.seeds.data)?;
    dataset.write(&dir)?;
    info!(
        "wrote {} / {} / {} examples to {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        dir.display()
    );
    Ok(())
}

fn check_dataset(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let manifest = read_manifest(dir)?;
    if manifest.world != config.world {
        return Err(CliError::Config(format!(
            "dataset in {} was generated with a different world config",
            dir.display()
        )));
    }
    let vocab = read_vocab(dir)?;
    if vocab.hash() != manifest.vocab_hash {
        return Err(CliError::Data(format!("{}: vocab.json does not match manifest", dir.display())));
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.common)?;
    if let Some(dir) = &args.data {
        config.data.dir = dir.clone();
    }
    match args.ablate {
        Some(Ablate::Contrastive) => config.ablation.disable_contrastive = true,
        Some(Ablate::Reconstruction) => config.ablation.disable_reconstruction = true,
        None => {}
    }
    if let Some(k) = args.groups {
        config.encoder.n_groups = k;
    }
    config.validate().map_err(|e| CliError::Config(e.0))?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&out).map_err(io(&out))?;

    let dir = config.data.dir.clone();
    check_dataset(&config, &dir)?;
    let vocab = read_vocab(&dir)?;
    let examples = read_split(&dir.join("train.jsonl"))?;
    if examples.len() < config.batch_size {
        return Err(CliError::Data(format!(
            "{} holds {} training examples, fewer than one batch",
            dir.display(),
            examples.len()
        )));
    }
    config.data.n_train = config.data.n_train.min(examples.len());
    let config_path = out.join("config.json");
    fs::write(&config_path, config.to_json()).map_err(io(&config_path))?;
    info!("run {} on {} examples", &config.hash()[..12], config.data.n_train);

    let log_path = out.join("log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(io(&log_path))?;
    let mut trainer = Trainer::new(config.clone())?;
    let last = out.join("last.ckpt");
    trainer.fit(&examples, |t, log| {
        let line = serde_json::to_string(log).expect("log serializes");
        writeln!(log_file, "{line}").map_err(|e| format!("{}: {e}", log_path.display()))?;
        info!("epoch {} l_total {:.4}", log.epoch, log.l_total);
        checkpoint::save(&last, &t.config, &vocab, &t.model, t.steps_taken(), t.epochs_done())
            .map(|_| ())
            .map_err(|e| e.to_string())
    })?;
    let hash = checkpoint::save(
        &out.join("final.ckpt"),
        &config,
        &vocab,
        &trainer.model,
        trainer.steps_taken(),
        trainer.epochs_done(),
    )?;
    info!("final checkpoint sha256 {hash}");
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (ck, ck_hash) = checkpoint::load(&args.checkpoint)?;
    let dir = args.data.clone().unwrap_or_else(|| ck.config.data.dir.clone());
    check_dataset(&ck.config, &dir)?;
    let vocab = read_vocab(&dir)?;
    if vocab.hash() != ck.vocab.hash() {
        return Err(CliError::Config("checkpoint and dataset vocabularies differ".into()));
    }
    let split = dir.join(format!("{}.jsonl", args.split));
    let examples = read_split(&split)?;
    let report = evaluate(&ck.model, &examples, &ck.config.hash(), &ck_hash)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => fs::write(path, json + "\n").map_err(io(path))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn visualize(args: &VisualizeArgs) -> Result<(), CliError> {
    let (ck, _) = checkpoint::load(&args.checkpoint)?;
    let ids = match (&args.caption, args.example) {
        (Some(text), _) => {
            let (ids, unknown) = ck.vocab.encode(text);
            for w in unknown {
                warn!("`{w}` is not in the vocabulary; using <unk>");
            }
            ids
        }
        (None, Some(i)) => {
            let dir = args.data.clone().unwrap_or_else(|| ck.config.data.dir.clone());
            let test = read_split(&dir.join("test.jsonl"))?;
            test.get(i)
                .ok_or_else(|| CliError::Data(format!("test split has {} examples, no index {i}", test.len())))?
                .caption
                .tokens
                .clone()
        }
        (None, None) => unreachable!("clap requires --caption or --example"),
    };
    if ids.len() > ck.config.encoder.max_tokens {
        return Err(CliError::Data(format!(
            "caption has {} tokens, the model takes at most {}",
            ids.len(),
            ck.config.encoder.max_tokens
        )));
    }
    let labels = ids
        .iter()
        .map(|&i| ck.vocab.token(i).unwrap_or("<unk>").to_string())
        .collect();
    let h = heatmap(&ck.model, &ids, labels).map_err(|e| CliError::Numeric(e.to_string()))?;
    let tsv = args.out.with_extension("tsv");
    let svg = args.out.with_extension("svg");
    fs::write(&tsv, to_tsv(&h)).map_err(io(&tsv))?;
    fs::write(&svg, to_svg(&h)).map_err(io(&svg))?;
    info!("wrote {} and {}", tsv.display(), svg.display());
    Ok(())
}

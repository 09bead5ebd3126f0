//! Command-line entry point.
//!
//! One binary, eight subcommands covering the whole workflow: dataset prep
//! (`ingest`, `synth`), training (`pretrain`, `finetune`), measurement
//! (`eval`, `retrieve`, `ablate`), and artifact assembly (`report`).
//!
//! Every subcommand takes `--config FILE` plus repeatable
//! `--override KEY=VALUE` deltas (dotted config paths; unique suffixes
//! allowed, see [`crate::config::resolve_key`]) and prints a one-line
//! summary on success. `--help` on any subcommand ends with the full config
//! schema, defaults included. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::Config;
use crate::data::{self, build_manifest, DatasetManifest, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::report::{write_retrieval_report, RetrievalCurve};
use crate::retrieval::build_gallery;
use crate::train::ablate::run_ablation;
use crate::train::{
    self, checkpoint, evaluate_classifier, extract_retrieval_features, load_split, manifest_path,
    stream_rng, write_class_report, Task, STREAM_INIT,
};

#[derive(Parser, Debug)]
#[command(
    name = "pacesort",
    version,
    about = "Self-supervised video representations from playback speed ordering",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan a video directory into a train/test manifest.
    Ingest(IngestArgs),
    /// Generate the synthetic moving-pattern dataset from the config.
    Synth(SynthArgs),
    /// Self-supervised pretraining: sort shuffled clips by playback speed.
    Pretrain(TrainCmdArgs),
    /// Supervised fine-tuning, optionally from a pretrained checkpoint.
    Finetune(FinetuneArgs),
    /// Classification accuracy of a fine-tuned checkpoint on the test split.
    Eval(EvalArgs),
    /// Build a retrieval gallery and score nearest-neighbour accuracy.
    Retrieve(RetrieveArgs),
    /// Re-run pretraining across a grid of values for one config key.
    Ablate(AblateArgs),
    /// Merge retrieval accuracy tables into one CSV plus a curve plot.
    Report(ReportArgs),
}

/// `--config` / `--override` pair shared by every config-driven subcommand.
#[derive(Args, Debug)]
struct ConfigOpts {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--override sampler.n=5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigOpts {
    fn load(&self) -> Result<Config> {
        Config::load(self.config.as_deref(), &self.overrides)
    }
}

/// `--out`, defaulting to `$PACESORT_OUT/<subcommand>` or `runs/<subcommand>`.
#[derive(Args, Debug)]
struct OutOpt {
    /// Output directory for this run's artifacts.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl OutOpt {
    fn dir(&self, subcommand: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os("PACESORT_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(subcommand)
        })
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Dataset root: either `root/<class>/<video>` or flat `root/<video>`.
    #[arg(long, value_name = "DIR")]
    root: PathBuf,
    /// Fraction of videos held out as the test split.
    #[arg(long, value_name = "F", default_value_t = 0.2, conflicts_with = "split_file")]
    test_fraction: f64,
    /// Seed for the pseudo-random split assignment.
    #[arg(long, value_name = "N", default_value_t = 7, conflicts_with = "split_file")]
    split_seed: u64,
    /// JSON file mapping relative video paths to "train" or "test".
    #[arg(long, value_name = "FILE")]
    split_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigOpts,
}

#[derive(Args, Debug)]
struct TrainCmdArgs {
    #[command(flatten)]
    cfg: ConfigOpts,
    #[command(flatten)]
    out: OutOpt,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    cfg: ConfigOpts,
    #[command(flatten)]
    out: OutOpt,
    /// Pretrained checkpoint to initialize the backbone from; omit to
    /// train from scratch.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigOpts,
    #[command(flatten)]
    out: OutOpt,
    /// Fine-tuned checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    cfg: ConfigOpts,
    #[command(flatten)]
    out: OutOpt,
    /// Checkpoint whose backbone embeds the gallery; omit for an
    /// untrained-baseline gallery.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigOpts,
    #[command(flatten)]
    out: OutOpt,
    /// Config key to sweep (same grammar as --override keys).
    #[arg(long, value_name = "KEY")]
    axis: String,
    /// Comma-separated values for the axis, e.g. `--values 2,3,4`.
    #[arg(long, value_name = "V1,V2,...", value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    out: OutOpt,
    /// Accuracy tables (`model,k,accuracy` CSV) from earlier `retrieve` runs.
    #[arg(value_name = "CSV")]
    inputs: Vec<PathBuf>,
}

/// The clap command tree with the config schema appended to every help page.
fn build_command() -> clap::Command {
    static SCHEMA: OnceLock<String> = OnceLock::new();
    let schema = SCHEMA.get_or_init(|| {
        format!(
            "Config keys and defaults (set with --override KEY=VALUE; \
             unique key suffixes allowed):\n\n{}",
            Config::schema()
        )
    });
    let mut cmd = Cli::command().after_help(schema.as_str());
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(schema.as_str()));
    }
    cmd
}

/// Parse argv, run the chosen subcommand, and map the outcome to an exit
/// code: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            // --help/--version print to stdout and exit 0; genuine usage
            // errors go to stderr and exit 2.
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matcher mirrors the parser");
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::Eval(a) => eval(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let spec = match &a.split_file {
        Some(p) => {
            let map: BTreeMap<String, Split> = serde_json::from_slice(&fs::read(p)?)?;
            SplitSpec::Explicit(map)
        }
        None => SplitSpec::Fraction {
            test_fraction: a.test_fraction,
            seed: a.split_seed,
        },
    };
    let manifest = build_manifest(&a.root, &spec)?;
    let path = manifest_path(&a.root);
    manifest.save(&path)?;
    let train = manifest.split(Split::Train).len();
    let test = manifest.split(Split::Test).len();
    let classes = match manifest.num_classes() {
        Some(c) => format!("{c} classes"),
        None => "unlabeled".into(),
    };
    println!(
        "ingest: {} videos ({classes}), train {train} / test {test} -> {}",
        manifest.entries.len(),
        path.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let manifest = data::synthetic::generate(&cfg.synth, &cfg.dataset.root)?;
    let train = manifest.split(Split::Train).len();
    let test = manifest.split(Split::Test).len();
    println!(
        "synth: {} videos ({} classes), train {train} / test {test} -> {}",
        manifest.entries.len(),
        manifest.num_classes().unwrap_or(0),
        cfg.dataset.root.display()
    );
    Ok(())
}

fn pretrain(a: TrainCmdArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let out = a.out.dir("pretrain");
    fs::create_dir_all(&out)?;
    cfg.save(&out.join("config.toml"))?;
    let outcome = train::pretrain(&cfg, &out)?;
    let last = outcome.rows.last().expect("at least one epoch runs");
    println!(
        "pretrain: {} epochs, loss {:.4}, pretext acc {:.4} -> {}",
        outcome.rows.len(),
        last.loss,
        last.pretext_acc,
        outcome.checkpoint.display()
    );
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let out = a.out.dir("finetune");
    fs::create_dir_all(&out)?;
    cfg.save(&out.join("config.toml"))?;
    let outcome = train::finetune(&cfg, &out, a.init.as_deref())?;
    let last = outcome.rows.last().expect("at least one epoch runs");
    let test = outcome
        .test_acc
        .map(|t| format!("{t:.4}"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "finetune: {} epochs, train acc {:.4}, test acc {test} -> {}",
        outcome.rows.len(),
        last.pretext_acc,
        outcome.checkpoint.display()
    );
    Ok(())
}

/// Model geometry comes from the checkpoint; where the data lives and how
/// it is scored stay with the caller.
fn overlay(stored: Config, cli_cfg: &Config) -> Config {
    Config {
        dataset: cli_cfg.dataset.clone(),
        eval: cli_cfg.eval.clone(),
        ..stored
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let cli_cfg = a.cfg.load()?;
    let out = a.out.dir("eval");
    fs::create_dir_all(&out)?;
    let (mut model, meta) = checkpoint::load(&a.checkpoint)?;
    let cfg = overlay(meta.config, &cli_cfg);
    let manifest_file = manifest_path(&cfg.dataset.root);
    let manifest = DatasetManifest::load(&manifest_file)?;
    let videos = load_split(&manifest, &manifest_file, Split::Test, cfg.dataset.target_fps)?;
    let rep = evaluate_classifier(&mut model, &cfg, &videos)?;
    let table = out.join("class_report.csv");
    write_class_report(&table, manifest.class_names.as_deref(), &rep)?;
    println!(
        "eval: top-1 acc {:.4} over {} test videos -> {}",
        rep.accuracy,
        videos.len(),
        table.display()
    );
    Ok(())
}

/// FNV-1a over a file's bytes; enough to tell checkpoints apart in labels.
fn file_digest(path: &Path) -> Result<String> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in fs::read(path)? {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let cli_cfg = a.cfg.load()?;
    let out = a.out.dir("retrieve");
    fs::create_dir_all(&out)?;
    let (mut model, cfg, tag) = match &a.checkpoint {
        Some(p) => {
            let (model, meta) = checkpoint::load(p)?;
            let stem = p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
            let tag = format!("{stem}@{}", &file_digest(p)?[..10]);
            (model, overlay(meta.config, &cli_cfg), tag)
        }
        None => {
            let mut rng = stream_rng(cli_cfg.train.seed, STREAM_INIT);
            let model = train::build_model(&cli_cfg, Task::PspOrder, None, &mut rng)?;
            (model, cli_cfg, "untrained".to_string())
        }
    };
    let manifest_file = manifest_path(&cfg.dataset.root);
    let manifest = DatasetManifest::load(&manifest_file)?;

    let gallery_videos =
        load_split(&manifest, &manifest_file, Split::Train, cfg.dataset.target_fps)?;
    let gallery_ids: Vec<String> = manifest
        .split(Split::Train)
        .iter()
        .map(|e| e.source_id.clone())
        .collect();
    let index = build_gallery(
        &mut model,
        &cfg,
        &gallery_videos,
        &gallery_ids,
        cfg.eval.clips_per_video,
        &tag,
    )?;
    index.save(&out.join("index"))?;

    let query_videos =
        load_split(&manifest, &manifest_file, Split::Test, cfg.dataset.target_fps)?;
    let (features, owners) =
        extract_retrieval_features(&mut model, &cfg, &query_videos, cfg.eval.clips_per_video)?;
    let labels = owners
        .iter()
        .map(|&o| {
            query_videos[o]
                .label
                .ok_or_else(|| Error::Config("retrieval needs labeled test videos".into()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let table = index.topk_accuracy(features.view(), &labels, &cfg.eval.ks)?;

    let curve = RetrievalCurve {
        model: tag.clone(),
        points: table.clone(),
    };
    write_retrieval_report(&[curve], &out)?;
    let summary: Vec<String> = table
        .iter()
        .map(|(k, acc)| format!("top-{k} {acc:.4}"))
        .collect();
    println!(
        "retrieve[{tag}]: {} ({} gallery x {} query clips) -> {}",
        summary.join(", "),
        index.len(),
        labels.len(),
        out.display()
    );
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let out = a.out.dir("ablate");
    let outcome = run_ablation(&cfg, &a.axis, &a.values, &out)?;
    println!(
        "ablate[{}]: {} cells -> {}",
        a.axis,
        outcome.rows.len(),
        outcome.table.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.dir("report");
    let mut curves: Vec<RetrievalCurve> = Vec::new();
    for path in &a.inputs {
        read_accuracy_table(path, &mut curves)?;
    }
    let written = write_retrieval_report(&curves, &out)?;
    let points: usize = curves.iter().map(|c| c.points.len()).sum();
    println!(
        "report: {} models, {points} points -> {}",
        curves.len(),
        written[0].display()
    );
    Ok(())
}

/// Parse one `model,k,accuracy` table, merging rows into `curves` by model
/// label (first-seen order).
fn read_accuracy_table(path: &Path, curves: &mut Vec<RetrievalCurve>) -> Result<()> {
    let bad = |reason: String| Error::BadFormat {
        path: path.display().to_string(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    {
        let headers = rdr.headers()?;
        if headers != vec!["model", "k", "accuracy"] {
            return Err(bad(format!("unexpected header {headers:?}")));
        }
    }
    for record in rdr.records() {
        let record = record?;
        let model = record
            .get(0)
            .ok_or_else(|| bad("short row".into()))?
            .to_string();
        let k: usize = record
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("k is not an integer".into()))?;
        let acc: f64 = record
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("accuracy is not a number".into()))?;
        match curves.iter_mut().find(|c| c.model == model) {
            Some(c) => c.points.push((k, acc)),
            None => curves.push(RetrievalCurve {
                model,
                points: vec![(k, acc)],
            }),
        }
    }
    Ok(())
}

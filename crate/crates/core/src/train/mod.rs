//! Training harness: self-supervised pretraining (clip-order or speed
//! prediction), supervised fine-tuning, evaluation, and metrics logging.
//!
//! Datasets at the scales this crate targets fit in memory, so every run
//! preloads its split into RAM once and samples clips from there.

pub mod ablate;
pub mod checkpoint;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Array4, Array5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::FeatureExtractor;
use crate::config::Config;
use crate::data::augment::{prepare_clip, AugmentConfig, Phase};
use crate::data::{DatasetManifest, FrameVolume, Split};
use crate::error::{Error, Result};
use crate::head::{OrderHead, SpeedHead};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{join, zero_grads, Sgd, Slot, Tensors};
use crate::sampler::{sample_clip_indices, sample_tuple, SamplerConfig};

/// Reserved rng streams: weights, per-epoch sampling, evaluation. Keeping
/// them disjoint makes every phase reproducible independently of how many
/// draws the others consumed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_EPOCH_BASE: u64 = 1000;
pub const STREAM_EVAL: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PspOrder,
    SpeedBaseline,
    FinetuneClassify,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: Task,
    /// Pretraining epochs; one tuple per training video per epoch.
    pub epochs: usize,
    /// Fine-tuning epochs; one clip per training video per epoch.
    pub finetune_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Videos per optimization step (pretext steps see this many tuples).
    pub batch_videos: usize,
    pub seed: u64,
    /// Also write the rolling checkpoint every this many epochs (0 = only
    /// at the end).
    pub checkpoint_every: usize,
    /// Stop early once the epoch's training accuracy reaches this level
    /// (0 disables; useful for overfit experiments).
    pub target_train_acc: f64,
    /// Fine-tuning only: train just the classifier head for this many
    /// initial epochs before unfreezing the backbone. The backbone still
    /// runs train-mode forward passes (augmentation and normalization
    /// statistics behave as usual); only its weight updates are skipped.
    pub head_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::PspOrder,
            epochs: 300,
            finetune_epochs: 150,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_videos: 8,
            seed: 7,
            checkpoint_every: 0,
            target_train_acc: 0.0,
            head_warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if self.batch_videos == 0 {
            return Err(Error::Config("batch_videos must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.target_train_acc) {
            return Err(Error::Config("target_train_acc must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// An rng pinned to one of the reserved streams, independent of draws made
/// on any other stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A decoded video held in memory with its optional class label.
pub struct LoadedVideo {
    pub volume: FrameVolume,
    pub label: Option<usize>,
}

/// Decode every video of one split into memory, in manifest order.
pub fn load_split(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    split: Split,
    target_fps: Option<f32>,
) -> Result<Vec<LoadedVideo>> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(Error::EmptySplit {
            split: format!("{split:?}").to_lowercase(),
        });
    }
    entries
        .into_iter()
        .map(|e| {
            let volume = crate::data::ingest_video(&dir.join(&e.path), target_fps)?;
            Ok(LoadedVideo { volume, label: e.label })
        })
        .collect()
}

/// Manifest location for a dataset directory.
pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.jsonl")
}

pub enum HeadKind {
    Order(OrderHead<f32>),
    Affine(SpeedHead<f32>),
}

/// A backbone plus a task head; everything a checkpoint stores.
pub struct Model {
    pub backbone: FeatureExtractor<f32>,
    pub head: HeadKind,
}

impl Tensors<f32> for Model {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, f32>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        match &mut self.head {
            HeadKind::Order(h) => h.visit(&join(prefix, "order_head"), f),
            HeadKind::Affine(h) => h.visit(&join(prefix, "classifier"), f),
        }
    }
}

/// Build a model for `task`, taking every width from the config.
/// `num_classes` is required only for classification heads.
pub fn build_model(
    cfg: &Config,
    task: Task,
    num_classes: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    let backbone = FeatureExtractor::build(&cfg.backbone, rng)?;
    let embed = backbone.embedding_dim();
    let head = match task {
        Task::PspOrder => HeadKind::Order(OrderHead::new(&cfg.order_head_config(), rng)?),
        Task::SpeedBaseline => {
            HeadKind::Affine(SpeedHead::new(embed, cfg.sampler.speed_set()?.len(), rng)?)
        }
        Task::FinetuneClassify => {
            let classes = num_classes
                .ok_or_else(|| Error::Config("classification needs a labeled dataset".into()))?;
            HeadKind::Affine(SpeedHead::new(embed, classes, rng)?)
        }
    };
    Ok(Model { backbone, head })
}

/// One metrics-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub pretext_acc: f64,
    pub wall_time: f64,
}

/// Everything a training run leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<EpochRow>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Test-split classification accuracy (fine-tuning only).
    pub test_acc: Option<f64>,
}

struct MetricsLog {
    writer: csv::Writer<std::fs::File>,
    path: PathBuf,
}

impl MetricsLog {
    fn create(path: PathBuf) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(std::fs::File::create(&path)?);
        writer.write_record(["epoch", "loss", "pretext_acc", "wall_time"])?;
        writer.flush()?;
        Ok(MetricsLog { writer, path })
    }

    fn push(&mut self, row: &EpochRow) -> Result<()> {
        self.writer.write_record([
            row.epoch.to_string(),
            format!("{:.6}", row.loss),
            format!("{:.6}", row.pretext_acc),
            format!("{:.3}", row.wall_time),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}

fn sgd_of(cfg: &TrainConfig) -> Sgd<f32> {
    Sgd {
        lr: cfg.lr as f32,
        momentum: cfg.momentum as f32,
        weight_decay: cfg.weight_decay as f32,
    }
}

/// Stack prepared clips into one (N, 3, m, crop, crop) batch.
fn batch_of(clips: Vec<Array4<f32>>) -> Array5<f32> {
    let (c, m, h, w) = clips[0].dim();
    let mut x = Array5::zeros((clips.len(), c, m, h, w));
    for (i, clip) in clips.iter().enumerate() {
        x.slice_mut(s![i, .., .., .., ..]).assign(clip);
    }
    x
}

/// Deterministic eval-time anchor: centered when the clip fits, else 0.
fn center_anchor(len: usize, speed: i32, m: usize) -> usize {
    let span = 1 + (m - 1) * speed.unsigned_abs() as usize;
    if span <= len {
        (len - span) / 2
    } else {
        0
    }
}

struct EpochOut {
    loss: f64,
    acc: f64,
}

/// One pass over `order` for the clip-order task. With an optimizer this is
/// a training epoch; without, a deterministic evaluation pass.
#[allow(clippy::too_many_arguments)]
fn psp_pass(
    backbone: &mut FeatureExtractor<f32>,
    head: &mut OrderHead<f32>,
    videos: &[LoadedVideo],
    order: &[usize],
    sampler: &SamplerConfig,
    augment: &AugmentConfig,
    batch_videos: usize,
    sgd: Option<&Sgd<f32>>,
    rng: &mut ChaCha8Rng,
) -> Result<EpochOut> {
    let train = sgd.is_some();
    let phase = if train { Phase::Train } else { Phase::Eval };
    let n = sampler.n;
    let embed = backbone.embedding_dim();
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for chunk in order.chunks(batch_videos) {
        let mut clips = Vec::with_capacity(chunk.len() * n);
        let mut labels = Vec::with_capacity(chunk.len());
        for &vi in chunk {
            let v = &videos[vi];
            let tuple = sample_tuple(v.volume.len(), sampler, rng)?;
            labels.push(tuple.label);
            for spec in &tuple.clips {
                let idx = spec.indices(v.volume.len(), sampler.m)?;
                clips.push(prepare_clip::<f32, _>(&v.volume, &idx, augment, phase, rng)?);
            }
        }
        let x = batch_of(clips);
        let e = backbone.forward(&x, train)?;
        let e3 = e
            .into_shape_with_order((chunk.len(), n, embed))
            .expect("embeddings are contiguous");
        let logits = head.forward(&e3, train, rng)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        if let Some(sgd) = sgd {
            let d3 = head.backward(&out.dlogits)?;
            let d2 = d3
                .into_shape_with_order((chunk.len() * n, embed))
                .expect("gradients are contiguous");
            backbone.backward(&d2)?;
            sgd.step(backbone);
            sgd.step(head);
            zero_grads(backbone);
            zero_grads(head);
        }
        loss_sum += out.loss as f64 * chunk.len() as f64;
        correct += out.correct;
        seen += chunk.len();
    }
    Ok(EpochOut { loss: loss_sum / seen as f64, acc: correct as f64 / seen as f64 })
}

/// One pass for the speed-prediction baseline: n independent clips per
/// video, each labeled by the index of its speed in the canonical set.
#[allow(clippy::too_many_arguments)]
fn speed_pass(
    backbone: &mut FeatureExtractor<f32>,
    head: &mut SpeedHead<f32>,
    videos: &[LoadedVideo],
    order: &[usize],
    sampler: &SamplerConfig,
    augment: &AugmentConfig,
    batch_videos: usize,
    sgd: Option<&Sgd<f32>>,
    rng: &mut ChaCha8Rng,
) -> Result<EpochOut> {
    let train = sgd.is_some();
    let phase = if train { Phase::Train } else { Phase::Eval };
    let speeds = sampler.speed_set()?;
    let n = sampler.n;
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for chunk in order.chunks(batch_videos) {
        let mut clips = Vec::with_capacity(chunk.len() * n);
        let mut labels = Vec::with_capacity(chunk.len() * n);
        for &vi in chunk {
            let v = &videos[vi];
            for _ in 0..n {
                let si = rng.gen_range(0..speeds.len());
                let anchor = rng.gen_range(0..v.volume.len());
                let idx = sample_clip_indices(v.volume.len(), speeds[si], sampler.m, anchor)?;
                clips.push(prepare_clip::<f32, _>(&v.volume, &idx, augment, phase, rng)?);
                labels.push(si);
            }
        }
        let x = batch_of(clips);
        let e = backbone.forward(&x, train)?;
        let logits = head.forward(&e, train)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        if let Some(sgd) = sgd {
            let d = head.backward(&out.dlogits)?;
            backbone.backward(&d)?;
            sgd.step(backbone);
            sgd.step(head);
            zero_grads(backbone);
            zero_grads(head);
        }
        loss_sum += out.loss as f64 * labels.len() as f64;
        correct += out.correct;
        seen += labels.len();
    }
    Ok(EpochOut { loss: loss_sum / seen as f64, acc: correct as f64 / seen as f64 })
}

/// One pass for supervised classification: one speed-1 clip per video,
/// random anchor and crop in training, centered in eval.
#[allow(clippy::too_many_arguments)]
fn classify_pass(
    backbone: &mut FeatureExtractor<f32>,
    head: &mut SpeedHead<f32>,
    videos: &[LoadedVideo],
    order: &[usize],
    m: usize,
    augment: &AugmentConfig,
    batch_videos: usize,
    sgd: Option<&Sgd<f32>>,
    freeze_backbone: bool,
    rng: &mut ChaCha8Rng,
    per_class: Option<&mut Vec<ClassStat>>,
) -> Result<EpochOut> {
    let train = sgd.is_some();
    let phase = if train { Phase::Train } else { Phase::Eval };
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    let mut stats = per_class;
    for chunk in order.chunks(batch_videos) {
        let mut clips = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for &vi in chunk {
            let v = &videos[vi];
            let label = v
                .label
                .ok_or_else(|| Error::Config("classification needs labeled videos".into()))?;
            let anchor = if train {
                rng.gen_range(0..v.volume.len())
            } else {
                center_anchor(v.volume.len(), 1, m)
            };
            let idx = sample_clip_indices(v.volume.len(), 1, m, anchor)?;
            clips.push(prepare_clip::<f32, _>(&v.volume, &idx, augment, phase, rng)?);
            labels.push(label);
        }
        let x = batch_of(clips);
        let e = backbone.forward(&x, train)?;
        let logits = head.forward(&e, train)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        if let Some(stats) = stats.as_deref_mut() {
            for (bi, &label) in labels.iter().enumerate() {
                let row = logits.row(bi);
                let pred = argmax(&row);
                while stats.len() <= label {
                    stats.push(ClassStat::default());
                }
                stats[label].total += 1;
                if pred == label {
                    stats[label].correct += 1;
                }
            }
        }
        if let Some(sgd) = sgd {
            let d = head.backward(&out.dlogits)?;
            if freeze_backbone {
                sgd.step(head);
                zero_grads(head);
            } else {
                backbone.backward(&d)?;
                sgd.step(backbone);
                sgd.step(head);
                zero_grads(backbone);
                zero_grads(head);
            }
        }
        loss_sum += out.loss as f64 * labels.len() as f64;
        correct += out.correct;
        seen += labels.len();
    }
    Ok(EpochOut { loss: loss_sum / seen as f64, acc: correct as f64 / seen as f64 })
}

fn argmax(row: &ndarray::ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Self-supervised pretraining on the train split; writes `metrics.csv` and
/// a rolling `checkpoint.ckpt` under `out_dir`.
pub fn pretrain(cfg: &Config, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.train.task == Task::FinetuneClassify {
        return Err(Error::Config(
            "pretraining task must be psp_order or speed_baseline".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let manifest_file = manifest_path(&cfg.dataset.root);
    let manifest = DatasetManifest::load(&manifest_file)?;
    let videos = load_split(&manifest, &manifest_file, Split::Train, cfg.dataset.target_fps)?;

    let mut init_rng = stream_rng(cfg.train.seed, STREAM_INIT);
    let mut model = build_model(cfg, cfg.train.task, None, &mut init_rng)?;
    let sgd = sgd_of(&cfg.train);
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    let mut log = MetricsLog::create(out_dir.join("metrics.csv"))?;
    let mut rows = Vec::with_capacity(cfg.train.epochs);

    for epoch in 1..=cfg.train.epochs {
        let started = Instant::now();
        let mut rng = stream_rng(cfg.train.seed, STREAM_EPOCH_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut rng);
        let out = match &mut model.head {
            HeadKind::Order(head) => psp_pass(
                &mut model.backbone,
                head,
                &videos,
                &order,
                &cfg.sampler,
                &cfg.augment,
                cfg.train.batch_videos,
                Some(&sgd),
                &mut rng,
            )?,
            HeadKind::Affine(head) => speed_pass(
                &mut model.backbone,
                head,
                &videos,
                &order,
                &cfg.sampler,
                &cfg.augment,
                cfg.train.batch_videos,
                Some(&sgd),
                &mut rng,
            )?,
        };
        let row = EpochRow {
            epoch,
            loss: out.loss,
            pretext_acc: out.acc,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log.push(&row)?;
        rows.push(row);
        let hit_target = cfg.train.target_train_acc > 0.0 && out.acc >= cfg.train.target_train_acc;
        if cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0 {
            checkpoint::save(&ckpt_path, &mut model, &checkpoint::Meta::new(cfg, epoch, None))?;
        }
        if hit_target {
            break;
        }
    }
    let final_epoch = rows.last().map(|r| r.epoch).unwrap_or(0);
    checkpoint::save(&ckpt_path, &mut model, &checkpoint::Meta::new(cfg, final_epoch, None))?;
    Ok(RunOutcome { rows, checkpoint: ckpt_path, metrics: log.path, test_acc: None })
}

/// Pretext-task accuracy of a trained model on held-out videos, using the
/// dedicated eval rng stream (one tuple per video, centered crops).
pub fn evaluate_pretext(model: &mut Model, cfg: &Config, videos: &[LoadedVideo]) -> Result<f64> {
    let mut rng = stream_rng(cfg.train.seed, STREAM_EVAL);
    let order: Vec<usize> = (0..videos.len()).collect();
    let out = match &mut model.head {
        HeadKind::Order(head) => psp_pass(
            &mut model.backbone,
            head,
            videos,
            &order,
            &cfg.sampler,
            &cfg.augment,
            cfg.train.batch_videos,
            None,
            &mut rng,
        )?,
        HeadKind::Affine(head) => speed_pass(
            &mut model.backbone,
            head,
            videos,
            &order,
            &cfg.sampler,
            &cfg.augment,
            cfg.train.batch_videos,
            None,
            &mut rng,
        )?,
    };
    Ok(out.acc)
}

/// Supervised fine-tuning: the backbone starts from `init_checkpoint` when
/// given (any pretext head it carries is dropped), otherwise from random
/// init; the classifier layer is always fresh.
pub fn finetune(cfg: &Config, out_dir: &Path, init_checkpoint: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let manifest_file = manifest_path(&cfg.dataset.root);
    let manifest = DatasetManifest::load(&manifest_file)?;
    let classes = manifest
        .num_classes()
        .ok_or_else(|| Error::Config("fine-tuning needs a labeled dataset".into()))?;
    let videos = load_split(&manifest, &manifest_file, Split::Train, cfg.dataset.target_fps)?;

    let mut init_rng = stream_rng(cfg.train.seed, STREAM_INIT);
    let mut model = build_model(cfg, Task::FinetuneClassify, Some(classes), &mut init_rng)?;
    if let Some(path) = init_checkpoint {
        let (source, meta) = checkpoint::load(path)?;
        if meta.config.backbone != cfg.backbone {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint backbone {:?} differs from configured {:?}",
                meta.config.backbone, cfg.backbone
            )));
        }
        model.backbone = source.backbone;
    }
    let sgd = sgd_of(&cfg.train);
    let ckpt_path = out_dir.join("finetune.ckpt");
    let mut log = MetricsLog::create(out_dir.join("finetune_metrics.csv"))?;
    let mut rows = Vec::with_capacity(cfg.train.finetune_epochs);

    for epoch in 1..=cfg.train.finetune_epochs {
        let started = Instant::now();
        let mut rng = stream_rng(cfg.train.seed, STREAM_EPOCH_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut rng);
        let head = match &mut model.head {
            HeadKind::Affine(h) => h,
            HeadKind::Order(_) => unreachable!("classifier model has an affine head"),
        };
        let out = classify_pass(
            &mut model.backbone,
            head,
            &videos,
            &order,
            cfg.sampler.m,
            &cfg.augment,
            cfg.train.batch_videos,
            Some(&sgd),
            epoch <= cfg.train.head_warmup_epochs,
            &mut rng,
            None,
        )?;
        let row = EpochRow {
            epoch,
            loss: out.loss,
            pretext_acc: out.acc,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log.push(&row)?;
        rows.push(row);
        if cfg.train.target_train_acc > 0.0 && out.acc >= cfg.train.target_train_acc {
            break;
        }
    }
    let final_epoch = rows.last().map(|r| r.epoch).unwrap_or(0);
    checkpoint::save(
        &ckpt_path,
        &mut model,
        &checkpoint::Meta::new(cfg, final_epoch, Some(classes)),
    )?;

    let test_videos = load_split(&manifest, &manifest_file, Split::Test, cfg.dataset.target_fps)?;
    let report = evaluate_classifier(&mut model, cfg, &test_videos)?;
    Ok(RunOutcome {
        rows,
        checkpoint: ckpt_path,
        metrics: log.path,
        test_acc: Some(report.accuracy),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassStat {
    pub correct: usize,
    pub total: usize,
}

pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassStat>,
}

/// Deterministic top-1 classification accuracy with per-class counts:
/// centered clips, centered crops, running normalization statistics.
pub fn evaluate_classifier(
    model: &mut Model,
    cfg: &Config,
    videos: &[LoadedVideo],
) -> Result<EvalReport> {
    let head = match &mut model.head {
        HeadKind::Affine(h) => h,
        HeadKind::Order(_) => {
            return Err(Error::Config("model has no classification head".into()))
        }
    };
    let mut rng = stream_rng(cfg.train.seed, STREAM_EVAL);
    let order: Vec<usize> = (0..videos.len()).collect();
    let mut per_class = Vec::new();
    let out = classify_pass(
        &mut model.backbone,
        head,
        videos,
        &order,
        cfg.sampler.m,
        &cfg.augment,
        cfg.train.batch_videos,
        None,
        false,
        &mut rng,
        Some(&mut per_class),
    )?;
    Ok(EvalReport { accuracy: out.acc, per_class })
}

/// Write a per-class accuracy table beside the metrics log.
pub fn write_class_report(path: &Path, names: Option<&[String]>, report: &EvalReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "class,name,correct,total,accuracy")?;
    for (i, stat) in report.per_class.iter().enumerate() {
        let name = names.and_then(|n| n.get(i)).map(String::as_str).unwrap_or("");
        let acc = if stat.total == 0 { 0.0 } else { stat.correct as f64 / stat.total as f64 };
        writeln!(f, "{i},{name},{},{},{acc:.6}", stat.correct, stat.total)?;
    }
    Ok(())
}

/// Retrieval-feature extraction for every video of a split: evenly spaced
/// speed-1 clips, centered crops, features stacked in manifest order.
pub fn extract_retrieval_features(
    model: &mut Model,
    cfg: &Config,
    videos: &[LoadedVideo],
    clips_per_video: usize,
) -> Result<(Array2<f32>, Vec<usize>)> {
    if clips_per_video == 0 {
        return Err(Error::Config("clips_per_video must be positive".into()));
    }
    if videos.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let m = cfg.sampler.m;
    let mut rng = stream_rng(cfg.train.seed, STREAM_EVAL);
    let mut per_video = Vec::with_capacity(videos.len());
    let mut owners = Vec::with_capacity(videos.len() * clips_per_video);
    for (vi, v) in videos.iter().enumerate() {
        let len = v.volume.len();
        let mut clips = Vec::with_capacity(clips_per_video);
        for c in 0..clips_per_video {
            let anchor = if clips_per_video == 1 {
                center_anchor(len, 1, m)
            } else {
                (c * len / clips_per_video).min(len - 1)
            };
            let idx = sample_clip_indices(len, 1, m, anchor)?;
            clips.push(prepare_clip::<f32, _>(&v.volume, &idx, &cfg.augment, Phase::Eval, &mut rng)?);
            owners.push(vi);
        }
        let x = batch_of(clips);
        per_video.push(model.backbone.retrieval_features(&x)?);
    }
    let views: Vec<_> = per_video.iter().map(|f| f.view()).collect();
    let features =
        ndarray::concatenate(ndarray::Axis(0), &views).expect("feature widths agree");
    Ok((features, owners))
}

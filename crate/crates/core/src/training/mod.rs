//! Per-fold training with masked cross-entropy and AdamW, plus the
//! leave-one-quarter-out driver.

mod loss;
mod optim;

pub use loss::{masked_cross_entropy, one_hot_targets, MaskedLoss};
pub use optim::{clip_grad_norm, AdamW, OptimizerState};

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, sample_rng, AugmentationConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_prediction, mean_report, predict_quarter, report, FoldTag, MetricsReport};
use crate::geodata::{dilate_mask, merge_classes, ClassScheme, LabelMask};
use crate::model::{
    images_to_tensor, import_checkpoint, parse_name_table, parse_tensors, read_checkpoint, save_checkpoint, Checkpoint,
    Init, Mode, ModelConfig, ParamStore, SegmentationModel,
};
use crate::sampling::{FoldDataset, PatchRecord, Scene, TilingConfig};

/// Where initial weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitSource {
    #[default]
    Scratch,
    /// A checkpoint written by this crate. The head is re-initialised when
    /// the class count differs.
    Pretrained { path: PathBuf },
    /// A foreign safetensors archive mapped through a prefix table.
    Imported { path: PathBuf, name_table: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `gamma` every `every_epochs` epochs.
    Step { every_epochs: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every_epochs, gamma } => base * gamma.powi((epoch / every_epochs.max(1)) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    pub dilate: bool,
    pub dilation_kernel: usize,
    pub init: InitSource,
    pub schedule: LrSchedule,
    /// Global gradient-norm limit; off when `None`.
    pub grad_clip: Option<f64>,
    /// Draw this many patches per epoch instead of the full list.
    pub samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 5e-5,
            weight_decay: 5e-6,
            seed: 0,
            augment: true,
            dilate: true,
            dilation_kernel: 3,
            init: InitSource::Scratch,
            schedule: LrSchedule::Constant,
            grad_clip: None,
            samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate and weight decay must be non-negative".into(),
            ));
        }
        if self.dilate && self.dilation_kernel % 2 == 0 {
            return Err(Error::InvalidArgument("dilation kernel must be odd".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::InvalidArgument("samples_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    /// Optimizer updates applied.
    pub steps: usize,
    /// Batches without a single labeled pixel.
    pub skipped: usize,
    pub samples: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

/// Run-level settings that do not belong to the experiment itself.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub dtype: DType,
    pub device: Device,
    /// Epoch records are appended here as JSON lines.
    pub log_path: Option<PathBuf>,
    /// Rewritten after every epoch.
    pub checkpoint_path: Option<PathBuf>,
    pub fingerprint: String,
    pub resume: Option<Checkpoint>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            dtype: DType::F32,
            device: Device::Cpu,
            log_path: None,
            checkpoint_path: None,
            fingerprint: String::new(),
            resume: None,
        }
    }
}

pub struct TrainOutcome {
    pub fold: usize,
    pub model: SegmentationModel,
    pub optimizer: AdamW,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn checkpoint_meta(&self, train: &TrainConfig, fingerprint: &str) -> serde_json::Value {
        checkpoint_meta(self.fold, &self.optimizer, &self.history, train, fingerprint)
    }

    pub fn save(&self, path: &Path, train: &TrainConfig, fingerprint: &str) -> Result<()> {
        write_state(
            path,
            self.fold,
            &self.model,
            &self.optimizer,
            &self.history,
            train,
            fingerprint,
        )
    }
}

fn checkpoint_meta(
    fold: usize,
    optimizer: &AdamW,
    history: &[EpochRecord],
    train: &TrainConfig,
    fingerprint: &str,
) -> serde_json::Value {
    serde_json::json!({
        "fold": fold,
        "epoch": history.last().map_or(0, |r| r.epoch + 1),
        "fingerprint": fingerprint,
        "train_config": train,
        "optimizer": optimizer.state(),
        "history": history,
    })
}

fn write_state(
    path: &Path,
    fold: usize,
    model: &SegmentationModel,
    optimizer: &AdamW,
    history: &[EpochRecord],
    train: &TrainConfig,
    fingerprint: &str,
) -> Result<()> {
    let meta = checkpoint_meta(fold, optimizer, history, train, fingerprint);
    save_checkpoint(path, model, &optimizer.state_tensors(), &meta)
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Labels the network is trained on: dilated (optionally), then merged.
pub fn training_labels(labels: &LabelMask, scheme: ClassScheme, dilate: Option<usize>) -> Result<LabelMask> {
    let base = match dilate {
        Some(k) => dilate_mask(labels, k)?,
        None => labels.clone(),
    };
    Ok(merge_classes(&base, scheme))
}

fn initial_model(
    cfg: &ModelConfig,
    train: &TrainConfig,
    fold: usize,
    opts: &TrainOptions,
) -> Result<SegmentationModel> {
    let model = SegmentationModel::new(cfg, mix_seed(train.seed, 1 + fold as u64), opts.dtype, &opts.device)?;
    match &train.init {
        InitSource::Scratch => {}
        InitSource::Pretrained { path } => {
            let ck = read_checkpoint(path)?;
            load_pretrained(&model, &ck, mix_seed(train.seed, 100 + fold as u64))?;
        }
        InitSource::Imported { path, name_table } => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let text = std::fs::read_to_string(name_table).map_err(|e| Error::io(name_table, e))?;
            let report = import_checkpoint(&model, &parse_tensors(&bytes)?, &parse_name_table(&text)?)?;
            if !report.reinitialized.is_empty() {
                reinit_head(&model, mix_seed(train.seed, 100 + fold as u64))?;
            }
        }
    }
    Ok(model)
}

/// Loads a checkpoint of the same architecture. A different class count
/// only affects the head, which then gets a small uniform initialisation.
pub fn load_pretrained(model: &SegmentationModel, ck: &Checkpoint, seed: u64) -> Result<()> {
    let mut probe = ck.config.clone();
    probe.num_classes = model.config().num_classes;
    if &probe != model.config() {
        return Err(Error::Checkpoint(
            "pretrained checkpoint has a different architecture beyond the class count".into(),
        ));
    }
    if ck.config.num_classes == model.config().num_classes {
        return model.load_state(&ck.tensors);
    }
    for name in model.params().names() {
        if name.starts_with("head.") {
            continue;
        }
        let t = ck
            .tensors
            .get(&name)
            .ok_or_else(|| Error::UnmappedParameters(vec![format!("missing {name}")]))?;
        model.params().assign(&name, t)?;
    }
    reinit_head(model, seed)
}

fn reinit_head(model: &SegmentationModel, seed: u64) -> Result<()> {
    let mut fresh = ParamStore::new(seed, model.dtype(), model.device());
    let c_in = model.params().shape("head.weight").map_or(1, |s| s[1]);
    let bound = 1e-2 / (c_in as f64).sqrt();
    for name in ["head.weight", "head.bias"] {
        let shape = model.params().shape(name).unwrap_or(&[]).to_vec();
        let v = fresh.param(name, &shape, Init::Uniform { bound })?;
        model.params().assign(name, v.as_tensor())?;
    }
    Ok(())
}

/// Trains one fold. Re-checks that no training patch touches the held-out
/// quarter before doing anything else.
pub fn train_fold(
    scene: &Scene,
    dataset: &FoldDataset,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    aug: &AugmentationConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    dataset.check_disjoint()?;
    train.validate()?;
    if train.augment {
        aug.validate()?;
    }
    let fold = dataset.fold.fold_index;
    if dataset.train.is_empty() {
        return Err(Error::NoData(format!("fold {fold} has no training patches")));
    }
    let scheme = ClassScheme::from_num_classes(model_cfg.num_classes)?;
    let labels = training_labels(&scene.labels, scheme, train.dilate.then_some(train.dilation_kernel))?;

    let (model, mut optimizer, start_epoch, mut history) = match &opts.resume {
        Some(ck) => {
            let model = ck.to_model(opts.dtype, &opts.device)?;
            if model.config() != model_cfg {
                return Err(Error::Checkpoint(
                    "resume checkpoint has a different model config".into(),
                ));
            }
            let state: OptimizerState = serde_json::from_value(ck.meta["optimizer"].clone())?;
            let optimizer = AdamW::restore(&state, &ck.tensors, model.params())?;
            let history: Vec<EpochRecord> = serde_json::from_value(ck.meta["history"].clone())?;
            let epoch = ck.meta["epoch"].as_u64().unwrap_or(0) as usize;
            (model, optimizer, epoch, history)
        }
        None => (
            initial_model(model_cfg, train, fold, opts)?,
            AdamW::new(train.weight_decay),
            0,
            Vec::new(),
        ),
    };

    for epoch in start_epoch..train.epochs {
        let started = Instant::now();
        let lr = train.schedule.rate(train.learning_rate, epoch);
        let epoch_seed = mix_seed(train.seed, ((fold as u64) << 32) | epoch as u64);
        let mut order: Vec<&PatchRecord> = dataset.train.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        if let Some(n) = train.samples_per_epoch {
            order.truncate(n);
        }
        let (mut steps, mut skipped, mut loss_sum) = (0, 0, 0.0);
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let samples = batch
                .iter()
                .enumerate()
                .map(|(i, rec)| {
                    let mut s = rec.extract(scene);
                    s.labels = labels.crop(rec.x, rec.y, rec.size, rec.size);
                    if train.augment {
                        let index = (b * train.batch_size + i) as u64;
                        s = augment_sample(&s, aug, &mut sample_rng(epoch_seed, index));
                    }
                    s
                })
                .collect::<Vec<_>>();
            let pre = images_to_tensor(
                &samples.iter().map(|s| &s.pre).collect::<Vec<_>>(),
                opts.dtype,
                &opts.device,
            )?;
            let post = images_to_tensor(
                &samples.iter().map(|s| &s.post).collect::<Vec<_>>(),
                opts.dtype,
                &opts.device,
            )?;
            let masks: Vec<&LabelMask> = samples.iter().map(|s| &s.labels).collect();
            let logits = model.forward(&pre, &post, Mode::Train)?;
            let loss = masked_cross_entropy(&logits, &masks)?;
            if loss.labeled == 0 {
                skipped += 1;
                continue;
            }
            let value = loss.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "loss diverged at fold {fold}, epoch {epoch}"
                )));
            }
            let mut grads = loss.loss.backward()?;
            if let Some(max) = train.grad_clip {
                clip_grad_norm(model.params(), &mut grads, max)?;
            }
            optimizer.step(model.params(), &grads, lr)?;
            loss_sum += value;
            steps += 1;
        }
        let record = EpochRecord {
            fold,
            epoch,
            steps,
            skipped,
            samples: order.len(),
            mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            learning_rate: lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "fold {fold} epoch {epoch}: loss {:.4} over {steps} steps ({:.1}s)",
            record.mean_loss,
            record.seconds
        );
        if let Some(path) = &opts.log_path {
            append_jsonl(path, &record)?;
        }
        history.push(record);
        if let Some(path) = &opts.checkpoint_path {
            write_state(path, fold, &model, &optimizer, &history, train, &opts.fingerprint)?;
        }
    }
    Ok(TrainOutcome {
        fold,
        model,
        optimizer,
        history,
    })
}

pub(crate) fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(value)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Result of a full leave-one-quarter-out run.
pub struct LoqoResult {
    pub outcomes: Vec<TrainOutcome>,
    /// One report per fold, under the training scheme, on the held-out quarter.
    pub reports: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

/// Trains one model per fold (up to `jobs` at a time) and evaluates each on
/// its own held-out quarter with undilated labels.
pub fn run_loqo(
    scene: &Scene,
    datasets: &[FoldDataset],
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    aug: &AugmentationConfig,
    eval_tiling: &TilingConfig,
    opts: &TrainOptions,
    jobs: usize,
) -> Result<LoqoResult> {
    let scheme = ClassScheme::from_num_classes(model_cfg.num_classes)?;
    let run_one = |ds: &FoldDataset| -> Result<(TrainOutcome, MetricsReport)> {
        let outcome = train_fold(scene, ds, model_cfg, train, aug, opts)?;
        let q = ds.fold.test_quarter;
        let pred = predict_quarter(&outcome.model, scene, &q, eval_tiling)?;
        let truth = scene.labels.crop(q.x0, q.y0, q.width(), q.height());
        let cm = evaluate_prediction(&pred, scheme, &truth, scheme)?;
        let r = report(&cm, scheme, FoldTag::Fold(ds.fold.fold_index))?;
        Ok((outcome, r))
    };
    let mut results = Vec::with_capacity(datasets.len());
    for group in datasets.chunks(jobs.max(1)) {
        let partial: Vec<Result<(TrainOutcome, MetricsReport)>> = std::thread::scope(|s| {
            let handles: Vec<_> = group.iter().map(|ds| s.spawn(move || run_one(ds))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::InvalidArgument("training thread panicked".into())))
                })
                .collect()
        });
        for r in partial {
            results.push(r?);
        }
    }
    let (outcomes, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mean = mean_report(&reports)?;
    Ok(LoqoResult {
        outcomes,
        reports,
        mean,
    })
}

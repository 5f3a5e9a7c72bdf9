use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{encoder_display, fingerprint, short, EvalConfig, LabelingConfig, PathsConfig, Project, ProjectConfig};
use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    dual_table, evaluate_prediction, format_table, mean_report, predict_probabilities, report, write_damage_map,
    FoldTag, MetricsReport, ReportRow,
};
use crate::geodata::{
    assign_check_crs, assign_point_labels, dilate_mask, load_label_mask, load_raster, rasterize_labels,
    read_footprints, read_points, write_label_mask, write_labeled_geojson, write_raster, ClassScheme, LabelMask,
    LabeledFootprint, LabeledFootprintSet,
};
use crate::model::{read_checkpoint, EncoderKind, ModelConfig, SegmentationModel};
use crate::sampling::{
    build_fold_datasets, parse_manifest, quarter_split, write_manifest, FoldDataset, Manifest, ManifestHeader, Scene,
    Split, TilingConfig,
};
use crate::synthetic::{generate_scene, SyntheticConfig};
use crate::training::{train_fold, EpochRecord, InitSource, TrainConfig, TrainOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArtifactStamp {
    command: String,
    fingerprint: String,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path, command: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            command,
        });
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_fingerprint(artifact: &str, config: &str, force: bool) -> Result<()> {
    if artifact == config {
        return Ok(());
    }
    if force {
        log::warn!("fingerprint mismatch ignored: artifact {artifact}, config {config}");
        return Ok(());
    }
    Err(Error::FingerprintMismatch {
        artifact: artifact.to_string(),
        config: config.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    /// Buildings per damage code 0..=3, then unlabeled.
    pub counts: [usize; 5],
    pub unassigned_points: usize,
    pub labeled_geojson: PathBuf,
    pub label_mask: PathBuf,
    pub counts_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSummary {
    pub manifest: PathBuf,
    pub train_patches: [usize; 4],
    pub test_patches: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub fold: usize,
    pub checkpoint: PathBuf,
    /// Epochs run by this invocation (0 when the checkpoint was complete).
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
}

/// What produced a report, for grouping rows in comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// `run`, `ensemble` or `zero-shot`.
    pub kind: String,
    pub encoders: Vec<EncoderKind>,
    pub init: String,
    pub augment: bool,
    pub dilate: bool,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReports {
    pub scheme: ClassScheme,
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

/// Everything an evaluation writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub fingerprint: String,
    pub label: String,
    pub settings: RunSettings,
    pub reports: Vec<SchemeReports>,
}

impl EvalRecord {
    pub fn scheme(&self, scheme: ClassScheme) -> Option<&SchemeReports> {
        self.reports.iter().find(|r| r.scheme == scheme)
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub record: EvalRecord,
    pub dir: PathBuf,
    pub table: String,
}

fn init_name(init: &InitSource) -> &'static str {
    match init {
        InitSource::Scratch => "scratch",
        InitSource::Pretrained { .. } => "pretrained",
        InitSource::Imported { .. } => "imported",
    }
}

fn run_settings(cfg: &ProjectConfig) -> RunSettings {
    RunSettings {
        kind: "run".into(),
        encoders: vec![cfg.model.encoder],
        init: init_name(&cfg.training.init).into(),
        augment: cfg.training.augment,
        dilate: cfg.training.dilate,
        classes: cfg.classes,
    }
}

/// Table with one row per fold plus the mean; dual layout when both the
/// three- and two-class schemes are present.
fn record_table(record: &EvalRecord) -> Result<String> {
    let rows_of = |s: &SchemeReports| -> Vec<(String, MetricsReport)> {
        s.folds
            .iter()
            .map(|r| (format!("{} {}", record.label, r.fold), r.clone()))
            .chain(std::iter::once((format!("{} mean", record.label), s.mean.clone())))
            .collect()
    };
    if let (Some(three), Some(two)) = (
        record.scheme(ClassScheme::ThreeClass),
        record.scheme(ClassScheme::TwoClass),
    ) {
        let a = rows_of(three);
        let b = rows_of(two);
        let rows: Vec<_> = a.iter().zip(&b).map(|((l, r3), (_, r2))| (l.clone(), r3, r2)).collect();
        return dual_table("Model", &rows);
    }
    let mut out = String::new();
    for s in &record.reports {
        let rows = rows_of(s);
        let rows: Vec<ReportRow> = rows
            .iter()
            .map(|(l, r)| ReportRow {
                label: l.clone(),
                report: r,
            })
            .collect();
        out.push_str(&format_table("Model", &rows)?);
        out.push('\n');
    }
    Ok(out)
}

fn write_record(dir: &Path, record: &EvalRecord) -> Result<EvalSummary> {
    let table = record_table(record)?;
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(record)?)?;
    write_file(&dir.join("table.md"), &table)?;
    Ok(EvalSummary {
        record: record.clone(),
        dir: dir.to_path_buf(),
        table,
    })
}

pub fn load_eval_record(path: &Path) -> Result<EvalRecord> {
    Ok(serde_json::from_str(&read_text(path, "eval")?)?)
}

/// Every `report.json` under the run, ensemble and zero-shot directories.
pub fn collect_records(output: &Path) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (group, sub) in [("runs", Some("eval")), ("ensembles", None), ("zero-shot", None)] {
        let dir = output.join(group);
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .map(|p| match sub {
                Some(s) => p.join(s).join("report.json"),
                None => p.join("report.json"),
            })
            .filter(|p| p.exists())
            .collect();
        paths.sort();
        for p in paths {
            out.push(load_eval_record(&p)?);
        }
    }
    Ok(out)
}

/// Experimental axis along which reports are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportAxis {
    Encoder,
    Init,
    Augment,
    Dilate,
}

impl ReportAxis {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "encoder" | "model" => Ok(ReportAxis::Encoder),
            "init" | "pretraining" => Ok(ReportAxis::Init),
            "augment" | "augmentation" => Ok(ReportAxis::Augment),
            "dilate" | "dilation" => Ok(ReportAxis::Dilate),
            other => Err(Error::InvalidArgument(format!("unknown report axis {other:?}"))),
        }
    }

    fn header(self) -> &'static str {
        match self {
            ReportAxis::Encoder => "Model",
            ReportAxis::Init => "Model / initialisation",
            ReportAxis::Augment => "Model / augmentation",
            ReportAxis::Dilate => "Model / dilation",
        }
    }

    fn setting(self, s: &RunSettings) -> String {
        let flag = |on: bool, what: &str| format!("{} {what}", if on { "with" } else { "without" });
        match self {
            ReportAxis::Encoder => String::new(),
            ReportAxis::Init => s.init.clone(),
            ReportAxis::Augment => flag(s.augment, "augmentation"),
            ReportAxis::Dilate => flag(s.dilate, "dilation"),
        }
    }
}

/// Mean reports of many evaluations, one row per record, labelled by model
/// and the value of `axis`. Records carrying both the three- and two-class
/// schemes go into one dual table; others into per-scheme tables.
pub fn comparison_report(records: &[EvalRecord], axis: ReportAxis) -> Result<String> {
    let label = |r: &EvalRecord| {
        let setting = axis.setting(&r.settings);
        if setting.is_empty() {
            r.label.clone()
        } else {
            format!("{} / {setting}", r.label)
        }
    };
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by_key(|r| label(r));
    let mut out = String::new();
    let dual: Vec<_> = sorted
        .iter()
        .filter_map(|r| {
            let three = r.scheme(ClassScheme::ThreeClass)?;
            let two = r.scheme(ClassScheme::TwoClass)?;
            Some((label(r), &three.mean, &two.mean))
        })
        .collect();
    if !dual.is_empty() {
        out.push_str(&dual_table(axis.header(), &dual)?);
    }
    let mut single: BTreeMap<usize, Vec<(String, &MetricsReport)>> = BTreeMap::new();
    for r in &sorted {
        if r.scheme(ClassScheme::ThreeClass).is_some() && r.scheme(ClassScheme::TwoClass).is_some() {
            continue;
        }
        for s in &r.reports {
            single
                .entry(s.scheme.num_classes())
                .or_default()
                .push((label(r), &s.mean));
        }
    }
    for (_, rows) in single.into_iter().rev() {
        let rows: Vec<ReportRow> = rows
            .into_iter()
            .map(|(label, report)| ReportRow { label, report })
            .collect();
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format_table(axis.header(), &rows)?);
    }
    Ok(out)
}

/// Pixels that are not black in either image.
fn nodata_validity(scene: &Scene) -> Option<Vec<bool>> {
    let (pre, post) = (scene.pre.as_raw(), scene.post.as_raw());
    let (bp, bq) = (scene.pre.bands(), scene.post.bands());
    let n = scene.width() * scene.height();
    let valid: Vec<bool> = (0..n)
        .map(|i| pre[i * bp..i * bp + 3].iter().any(|&v| v != 0) && post[i * bq..i * bq + 3].iter().any(|&v| v != 0))
        .collect();
    valid.iter().any(|v| !v).then_some(valid)
}

impl Project {
    /// Assigns points to footprints and rasterizes the result on the pre grid.
    pub fn label(&self) -> Result<LabelSummary> {
        let p = &self.config.paths;
        let mut footprints = read_footprints(&p.footprints)?;
        let mut points = read_points(&p.points)?;
        let pre = load_raster(&p.pre)?;
        let post = load_raster(&p.post)?;
        assign_check_crs(pre.crs(), post.crs())?;
        if pre.grid() != post.grid() {
            return Err(Error::ShapeMismatch(
                "pre and post rasters are not co-registered".into(),
            ));
        }
        // Layers without a CRS are taken to be in the raster CRS.
        let crs = pre.crs().map(str::to_string);
        footprints.crs = footprints.crs.or_else(|| crs.clone());
        points.crs = points.crs.or_else(|| crs.clone());
        let set = assign_point_labels(&footprints, &points, self.config.labeling.buffer_m)?;
        if set.unassigned_points > 0 {
            log::warn!(
                "{} damage point(s) fell outside every {} m buffer and were dropped",
                set.unassigned_points,
                self.config.labeling.buffer_m
            );
        }
        let counts = set.counts();
        if counts[4] > 0 {
            log::warn!("{} building(s) received no damage label", counts[4]);
        }
        let mask = rasterize_labels(&set, pre.grid())?;

        let dir = self.labels_dir();
        let geojson = dir.join("labeled_footprints.geojson");
        let mask_path = self.label_mask_path();
        let counts_csv = dir.join("counts.csv");
        write_file(&geojson, write_labeled_geojson(&set))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_label_mask(&mask_path, &mask, pre.grid())?;
        let mut csv = String::from("label,buildings\n");
        for (i, name) in [
            "No Damage",
            "Moderate Damage",
            "Severe Damage",
            "Destroyed",
            "Unlabeled",
        ]
        .iter()
        .enumerate()
        {
            let _ = writeln!(csv, "{name},{}", counts[i]);
        }
        let _ = writeln!(csv, "Dropped points,{}", set.unassigned_points);
        write_file(&counts_csv, csv)?;
        let stamp = ArtifactStamp {
            command: "label".into(),
            fingerprint: self.label_fingerprint()?,
        };
        write_file(&dir.join("artifact.json"), serde_json::to_string_pretty(&stamp)?)?;
        Ok(LabelSummary {
            counts,
            unassigned_points: set.unassigned_points,
            labeled_geojson: geojson,
            label_mask: mask_path,
            counts_csv,
        })
    }

    fn check_labels(&self, force: bool) -> Result<()> {
        let stamp_path = self.labels_dir().join("artifact.json");
        let stamp: ArtifactStamp = serde_json::from_str(&read_text(&stamp_path, "label")?)?;
        check_fingerprint(&stamp.fingerprint, &self.label_fingerprint()?, force)
    }

    /// Pre and post rasters with the label mask written by `label`.
    pub fn load_scene(&self) -> Result<Scene> {
        let mask_path = self.label_mask_path();
        if !mask_path.exists() {
            return Err(Error::MissingArtifact {
                path: mask_path,
                command: "label",
            });
        }
        let pre = load_raster(&self.config.paths.pre)?;
        let post = load_raster(&self.config.paths.post)?;
        let (labels, grid) = load_label_mask(&mask_path)?;
        if grid.width != pre.width() || grid.height != pre.height() {
            return Err(Error::ShapeMismatch("label mask does not match the pre raster".into()));
        }
        let scene = Scene::new(pre, post, labels)?;
        match nodata_validity(&scene) {
            Some(v) => scene.with_valid(v),
            None => Ok(scene),
        }
    }

    /// Splits the scene into quarters and writes the patch manifest.
    pub fn tile(&self, force: bool) -> Result<TileSummary> {
        self.check_labels(force)?;
        let scene = self.load_scene()?;
        let folds = quarter_split(scene.width(), scene.height())?;
        let datasets = build_fold_datasets(&scene, &folds, &self.config.tiling)?;
        let mut train_patches = [0; 4];
        let mut test_patches = [0; 4];
        let mut records = Vec::new();
        for (k, ds) in datasets.into_iter().enumerate() {
            train_patches[k] = ds.train.len();
            test_patches[k] = ds.test.len();
            records.extend(ds.train);
            records.extend(ds.test);
        }
        let manifest = Manifest {
            header: ManifestHeader {
                fingerprint: self.tile_fingerprint()?,
                scene_width: scene.width(),
                scene_height: scene.height(),
                tiling: self.config.tiling.clone(),
            },
            records,
        };
        let path = self.manifest_path()?;
        write_file(&path, write_manifest(&manifest))?;
        Ok(TileSummary {
            manifest: path,
            train_patches,
            test_patches,
        })
    }

    fn load_manifest(&self, force: bool) -> Result<Manifest> {
        let path = self.manifest_path()?;
        let manifest = parse_manifest(&read_text(&path, "tile")?)?;
        check_fingerprint(&manifest.header.fingerprint, &self.tile_fingerprint()?, force)?;
        Ok(manifest)
    }

    /// Trains the requested folds, at most `jobs` at a time. A complete
    /// checkpoint with the current fingerprint is kept; a partial one is
    /// resumed. `force` retrains from scratch.
    pub fn train(&self, folds: &[usize], jobs: usize, force: bool) -> Result<Vec<TrainSummary>> {
        if let Some(bad) = folds.iter().find(|&&k| k > 3) {
            return Err(Error::InvalidArgument(format!("fold {bad} out of range 0..=3")));
        }
        let manifest = self.load_manifest(force)?;
        let scene = self.load_scene()?;
        let specs = quarter_split(scene.width(), scene.height())?;
        let fp = self.train_fingerprint()?;
        let run_dir = self.run_dir()?;
        write_file(
            &run_dir.join("config.json"),
            serde_json::to_string_pretty(&self.config)?,
        )?;

        let run_one = |k: usize| -> Result<TrainSummary> {
            let dataset = FoldDataset {
                fold: specs[k].clone(),
                train: manifest.fold_records(k, Split::Train),
                test: manifest.fold_records(k, Split::Test),
            };
            let ckpt = self.checkpoint_path(k)?;
            let log_path = ckpt.with_file_name("epochs.jsonl");
            let mut resume = None;
            if ckpt.exists() && !force {
                let ck = read_checkpoint(&ckpt)?;
                let done = ck.meta["epoch"].as_u64().unwrap_or(0) as usize;
                check_fingerprint(ck.meta["fingerprint"].as_str().unwrap_or(""), &fp, false)?;
                if done >= self.config.training.epochs {
                    log::info!("fold {k}: checkpoint complete, skipping");
                    let history: Vec<EpochRecord> = serde_json::from_value(ck.meta["history"].clone())?;
                    return Ok(TrainSummary {
                        fold: k,
                        checkpoint: ckpt,
                        epochs_run: 0,
                        final_loss: history.last().map(|r| r.mean_loss),
                    });
                }
                log::info!("fold {k}: resuming after epoch {done}");
                resume = Some(ck);
            } else if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
            }
            let before = resume
                .as_ref()
                .map_or(0, |c| c.meta["epoch"].as_u64().unwrap_or(0) as usize);
            let opts = TrainOptions {
                dtype: self.dtype,
                device: self.device.clone(),
                log_path: Some(log_path),
                checkpoint_path: Some(ckpt.clone()),
                fingerprint: fp.clone(),
                resume,
            };
            let c = &self.config;
            let out = train_fold(&scene, &dataset, &c.model, &c.training, &c.augmentation, &opts)?;
            Ok(TrainSummary {
                fold: k,
                checkpoint: ckpt,
                epochs_run: out.history.len() - before,
                final_loss: out.history.last().map(|r| r.mean_loss),
            })
        };

        let mut summaries = Vec::with_capacity(folds.len());
        for group in folds.chunks(jobs.max(1)) {
            let results: Vec<Result<TrainSummary>> = std::thread::scope(|s| {
                let handles: Vec<_> = group.iter().map(|&k| s.spawn(move || run_one(k))).collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(Error::InvalidArgument("training thread panicked".into())))
                    })
                    .collect()
            });
            for r in results {
                summaries.push(r?);
            }
        }
        Ok(summaries)
    }

    fn load_fold_models(&self, force: bool) -> Result<Vec<SegmentationModel>> {
        let fp = self.train_fingerprint()?;
        (0..4)
            .map(|k| {
                let path = self.checkpoint_path(k)?;
                if !path.exists() {
                    return Err(Error::MissingArtifact { path, command: "train" });
                }
                let ck = read_checkpoint(&path)?;
                check_fingerprint(ck.meta["fingerprint"].as_str().unwrap_or(""), &fp, force)?;
                let done = ck.meta["epoch"].as_u64().unwrap_or(0) as usize;
                if done < self.config.training.epochs && !force {
                    return Err(Error::Checkpoint(format!(
                        "fold {k} stopped after {done} of {} epochs; rerun `train`",
                        self.config.training.epochs
                    )));
                }
                ck.to_model(self.dtype, &self.device)
            })
            .collect()
    }

    fn truth(&self, scene: &Scene) -> Result<LabelMask> {
        if self.config.evaluation.dilate_truth {
            dilate_mask(&scene.labels, self.config.training.dilation_kernel)
        } else {
            Ok(scene.labels.clone())
        }
    }

    /// Scores `members[k]` (one or more models) on the quarter of fold `k`.
    fn score(
        &self,
        scene: &Scene,
        members: &[Vec<&SegmentationModel>],
        schemes: &[ClassScheme],
        maps_dir: Option<&Path>,
    ) -> Result<Vec<SchemeReports>> {
        let model_scheme = ClassScheme::from_num_classes(members[0][0].config().num_classes)?;
        if let Some(bad) = schemes.iter().find(|s| s.num_classes() > model_scheme.num_classes()) {
            return Err(Error::InvalidArgument(format!(
                "cannot report {} classes from a {}-class model",
                bad.num_classes(),
                model_scheme.num_classes()
            )));
        }
        let truth = self.truth(scene)?;
        let folds = quarter_split(scene.width(), scene.height())?;
        let tiling: TilingConfig = self.config.evaluation.tiling();
        let mut per_scheme: Vec<Vec<MetricsReport>> = vec![Vec::new(); schemes.len()];
        for (k, models) in members.iter().enumerate() {
            let q = folds[k].test_quarter;
            let pred = predict_probabilities(models, scene, &q, &tiling)?.argmax()?;
            let t = truth.crop(q.x0, q.y0, q.width(), q.height());
            for (i, &s) in schemes.iter().enumerate() {
                let cm = evaluate_prediction(&pred, model_scheme, &t, s)?;
                per_scheme[i].push(report(&cm, s, FoldTag::Fold(k))?);
            }
            if let Some(dir) = maps_dir {
                let grid = scene.pre.grid().window(q.x0, q.y0, q.width(), q.height());
                let path = dir.join(format!("fold-{k}-damage.tif"));
                write_damage_map(&path, &pred, model_scheme, Some(&t), &grid)?;
            }
        }
        schemes
            .iter()
            .zip(per_scheme)
            .map(|(&scheme, folds)| {
                let mean = mean_report(&folds)?;
                Ok(SchemeReports { scheme, folds, mean })
            })
            .collect()
    }

    fn maps_dir(&self, dir: &Path) -> Result<Option<PathBuf>> {
        if !self.config.evaluation.damage_maps {
            return Ok(None);
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Some(dir.to_path_buf()))
    }

    /// Evaluates the four fold models of this run on their own quarters.
    pub fn eval(&self, schemes: &[ClassScheme], force: bool) -> Result<EvalSummary> {
        let models = self.load_fold_models(force)?;
        let scene = self.load_scene()?;
        let dir = self.run_dir()?.join("eval");
        let members: Vec<Vec<&SegmentationModel>> = models.iter().map(|m| vec![m]).collect();
        let reports = self.score(&scene, &members, schemes, self.maps_dir(&dir)?.as_deref())?;
        let record = EvalRecord {
            fingerprint: fingerprint(&serde_json::json!({
                "stage": "eval",
                "upstream": self.train_fingerprint()?,
                "evaluation": self.config.evaluation,
            })),
            label: encoder_display(self.config.model.encoder).into(),
            settings: run_settings(&self.config),
            reports,
        };
        write_record(&dir, &record)
    }

    /// Applies one external checkpoint to all four quarters, without any
    /// training on this scene. Its fingerprint is that of another project,
    /// so `force` is required unless it was trained here.
    pub fn eval_checkpoint(&self, path: &Path, schemes: &[ClassScheme], force: bool) -> Result<EvalSummary> {
        let ck = read_checkpoint(path)?;
        let theirs = ck.meta["fingerprint"].as_str().unwrap_or("").to_string();
        check_fingerprint(&theirs, &self.train_fingerprint()?, force)?;
        let model = ck.to_model(self.dtype, &self.device)?;
        let scene = self.load_scene()?;
        let id = fingerprint(&serde_json::json!({
            "stage": "zero-shot",
            "checkpoint": theirs,
            "tensors": ck.tensors.keys().collect::<Vec<_>>(),
            "label": self.label_fingerprint()?,
            "evaluation": self.config.evaluation,
        }));
        let dir = self.output().join("zero-shot").join(short(&id));
        let members = vec![vec![&model]; 4];
        let reports = self.score(&scene, &members, schemes, self.maps_dir(&dir)?.as_deref())?;
        let mut settings = run_settings(&self.config);
        settings.kind = "zero-shot".into();
        settings.encoders = vec![model.config().encoder];
        settings.init = "zero-shot".into();
        let record = EvalRecord {
            fingerprint: id,
            label: format!("{} (ZS)", encoder_display(model.config().encoder)),
            settings,
            reports,
        };
        write_record(&dir, &record)
    }

    /// Averages the probabilities of several runs (typically one per
    /// encoder) fold by fold.
    pub fn ensemble(&self, runs: &[Project], schemes: &[ClassScheme], force: bool) -> Result<EvalSummary> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument("an ensemble needs at least one run".into()));
        }
        let per_run: Vec<Vec<SegmentationModel>> =
            runs.iter().map(|r| r.load_fold_models(force)).collect::<Result<_>>()?;
        let classes = per_run[0][0].config().num_classes;
        if per_run.iter().any(|m| m[0].config().num_classes != classes) {
            return Err(Error::InvalidArgument(
                "ensemble members disagree on the class count".into(),
            ));
        }
        let scene = self.load_scene()?;
        let fps: Vec<String> = runs.iter().map(|r| r.train_fingerprint()).collect::<Result<_>>()?;
        let id = fingerprint(&serde_json::json!({
            "stage": "ensemble",
            "members": fps,
            "evaluation": self.config.evaluation,
        }));
        let dir = self.output().join("ensembles").join(short(&id));
        let members: Vec<Vec<&SegmentationModel>> = (0..4).map(|k| per_run.iter().map(|m| &m[k]).collect()).collect();
        let reports = self.score(&scene, &members, schemes, self.maps_dir(&dir)?.as_deref())?;
        let mut settings = run_settings(&runs[0].config);
        settings.kind = "ensemble".into();
        settings.encoders = runs.iter().map(|r| r.config.model.encoder).collect();
        let record = EvalRecord {
            fingerprint: id,
            label: "Ensemble".into(),
            settings,
            reports,
        };
        write_record(&dir, &record)
    }
}

/// Writes a generated scene (rasters, footprints, points) and a project file
/// tuned for it into `dir`. Returns the project file path.
pub fn write_synthetic_project(dir: &Path, synth: &SyntheticConfig) -> Result<PathBuf> {
    let s = generate_scene(synth)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_raster(&dir.join("pre.tif"), &s.pre)?;
    write_raster(&dir.join("post.tif"), &s.post)?;
    let layer = LabeledFootprintSet {
        crs: s.footprints.crs.clone(),
        entries: s
            .footprints
            .footprints
            .iter()
            .map(|f| LabeledFootprint {
                footprint: f.clone(),
                label: None,
            })
            .collect(),
        unassigned_points: 0,
    };
    write_file(&dir.join("footprints.geojson"), write_labeled_geojson(&layer))?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
    csv.write_record(["x", "y", "label"]).map_err(csv_err)?;
    for p in &s.points.points {
        csv.write_record([
            p.location.x.to_string(),
            p.location.y.to_string(),
            p.label.code().to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
    write_file(&dir.join("points.csv"), bytes)?;

    let patch = if synth.width.min(synth.height) >= 1024 { 256 } else { 64 };
    let config = ProjectConfig {
        paths: PathsConfig {
            pre: "pre.tif".into(),
            post: "post.tif".into(),
            footprints: "footprints.geojson".into(),
            points: "points.csv".into(),
            output: "out".into(),
        },
        classes: 3,
        labeling: LabelingConfig::default(),
        tiling: TilingConfig {
            patch_size: patch,
            stride: patch / 2,
            min_labeled_fraction: 0.0,
            min_valid_fraction: 0.0,
        },
        augmentation: AugmentationConfig::default(),
        model: ModelConfig::tiny(EncoderKind::ResNet, 3),
        training: TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 2e-3,
            weight_decay: 5e-6,
            ..TrainConfig::default()
        },
        evaluation: EvalConfig {
            patch_size: patch,
            stride: patch,
            ..EvalConfig::default()
        },
    };
    let path = dir.join("project.toml");
    write_file(&path, config.to_toml())?;
    Ok(path)
}

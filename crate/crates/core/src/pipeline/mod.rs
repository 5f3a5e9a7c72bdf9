//! Project configuration, artifact layout and the end-to-end commands.
//!
//! Output directory layout:
//!
//! ```text
//! labels/                     labeled footprints, label mask, counts
//! tiles/<id>/manifest.jsonl   patch manifest for all four folds
//! runs/<id>/fold-<k>/         checkpoint and epoch log of one fold
//! runs/<id>/eval/             reports of that run
//! ensembles/<id>/             reports of a multi-run ensemble
//! zero-shot/<id>/             reports of an external checkpoint
//! ```
//!
//! Each `<id>` is a prefix of the fingerprint of everything upstream, so a
//! changed setting never reuses a stale artifact.

mod commands;

pub use commands::{
    collect_records, comparison_report, load_eval_record, write_synthetic_project, EvalRecord, EvalSummary,
    LabelSummary, ReportAxis, RunSettings, SchemeReports, TileSummary, TrainSummary,
};

use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::geodata::{ClassScheme, DEFAULT_BUFFER_M};
use crate::model::{EncoderKind, ModelConfig};
use crate::sampling::TilingConfig;
use crate::training::{InitSource, TrainConfig};

/// Environment variable naming the compute device (`cpu`, `cuda`, `cuda:N`, `metal`).
pub const DEVICE_ENV: &str = "SIAMDAMAGE_DEVICE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub pre: PathBuf,
    pub post: PathBuf,
    pub footprints: PathBuf,
    /// CSV or GeoJSON damage points.
    pub points: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Buffer around footprints for point matching, in CRS units (meters).
    pub buffer_m: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            buffer_m: DEFAULT_BUFFER_M,
        }
    }
}

/// Inference tiling and evaluation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Score against dilated truth instead of the plain mask.
    pub dilate_truth: bool,
    /// Also write a colour-coded class map per quarter.
    pub damage_maps: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            patch_size: 1024,
            stride: 512,
            dilate_truth: false,
            damage_maps: false,
        }
    }
}

impl EvalConfig {
    pub fn tiling(&self) -> TilingConfig {
        TilingConfig {
            patch_size: self.patch_size,
            stride: self.stride,
            min_labeled_fraction: 0.0,
            min_valid_fraction: 0.0,
        }
    }
}

/// Declarative project file (TOML). Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub paths: PathsConfig,
    /// Number of training classes: 4, 3 (severe + destroyed) or 2.
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub labeling: LabelingConfig,
    #[serde(default)]
    pub tiling: TilingConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

fn default_classes() -> usize {
    3
}

/// Command-line settings applied on top of the project file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub encoder: Option<EncoderKind>,
    pub classes: Option<usize>,
    pub augment: Option<bool>,
    pub dilate: Option<bool>,
    pub init: Option<InitSource>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl ProjectConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("project config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn scheme(&self) -> Result<ClassScheme> {
        ClassScheme::from_num_classes(self.classes)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(e) = o.encoder {
            self.model.encoder = e;
        }
        if let Some(c) = o.classes {
            self.classes = c;
        }
        if let Some(a) = o.augment {
            self.training.augment = a;
        }
        if let Some(d) = o.dilate {
            self.training.dilate = d;
        }
        if let Some(i) = &o.init {
            self.training.init = i.clone();
        }
        if let Some(s) = o.seed {
            self.training.seed = s;
        }
        if let Some(e) = o.epochs {
            self.training.epochs = e;
        }
        if let Some(b) = o.batch_size {
            self.training.batch_size = b;
        }
        if let Some(lr) = o.learning_rate {
            self.training.learning_rate = lr;
        }
        self.model.num_classes = self.classes;
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme()?;
        if self.model.num_classes != self.classes {
            return Err(Error::InvalidArgument(format!(
                "model.num_classes = {} disagrees with classes = {}",
                self.model.num_classes, self.classes
            )));
        }
        if !(self.labeling.buffer_m > 0.0) {
            return Err(Error::InvalidArgument("labeling.buffer_m must be positive".into()));
        }
        self.tiling.validate()?;
        self.evaluation.tiling().validate()?;
        for (what, size) in [
            ("tiling", self.tiling.patch_size),
            ("evaluation", self.evaluation.patch_size),
        ] {
            if size % 32 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{what}.patch_size must be a multiple of 32"
                )));
            }
        }
        self.augmentation.validate()?;
        self.model.validate()?;
        self.training.validate()
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.pre);
        fix(&mut self.paths.post);
        fix(&mut self.paths.footprints);
        fix(&mut self.paths.points);
        fix(&mut self.paths.output);
        match &mut self.training.init {
            InitSource::Scratch => {}
            InitSource::Pretrained { path } => fix(path),
            InitSource::Imported { path, name_table } => {
                fix(path);
                fix(name_table);
            }
        }
    }
}

/// SHA-256 over the canonical (key-sorted) JSON form of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("fingerprinted values serialise");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn short(fp: &str) -> &str {
    &fp[..16.min(fp.len())]
}

/// Size and name of an input file; cheap stand-in for hashing gigabytes.
fn file_identity(path: &Path) -> Result<serde_json::Value> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::json!({"path": path, "bytes": meta.len()}))
}

/// A loaded project with its effective configuration.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    pub dtype: DType,
    pub device: Device,
}

impl Project {
    /// Reads the project file, applies overrides and checks that every input exists.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = ProjectConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve(&base);
        Self::from_config(config, overrides)
    }

    pub fn from_config(mut config: ProjectConfig, overrides: &Overrides) -> Result<Self> {
        config.apply(overrides);
        config.validate()?;
        for p in [
            &config.paths.pre,
            &config.paths.post,
            &config.paths.footprints,
            &config.paths.points,
        ] {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(Self {
            config,
            dtype: DType::F32,
            device: Device::Cpu,
        })
    }

    pub fn with_device(mut self, device: Device) -> Self {
        self.device = device;
        self
    }

    pub fn output(&self) -> &Path {
        &self.config.paths.output
    }

    pub fn label_fingerprint(&self) -> Result<String> {
        let p = &self.config.paths;
        Ok(fingerprint(&serde_json::json!({
            "stage": "label",
            "pre": file_identity(&p.pre)?,
            "post": file_identity(&p.post)?,
            "footprints": file_identity(&p.footprints)?,
            "points": file_identity(&p.points)?,
            "labeling": self.config.labeling,
        })))
    }

    pub fn tile_fingerprint(&self) -> Result<String> {
        Ok(fingerprint(&serde_json::json!({
            "stage": "tile",
            "upstream": self.label_fingerprint()?,
            "tiling": self.config.tiling,
        })))
    }

    pub fn train_fingerprint(&self) -> Result<String> {
        Ok(fingerprint(&serde_json::json!({
            "stage": "train",
            "upstream": self.tile_fingerprint()?,
            "classes": self.config.classes,
            "augmentation": self.config.augmentation,
            "model": self.config.model,
            "training": self.config.training,
        })))
    }

    pub fn labels_dir(&self) -> PathBuf {
        self.output().join("labels")
    }

    pub fn label_mask_path(&self) -> PathBuf {
        self.labels_dir().join("label_mask.tif")
    }

    pub fn manifest_path(&self) -> Result<PathBuf> {
        Ok(self
            .output()
            .join("tiles")
            .join(short(&self.tile_fingerprint()?))
            .join("manifest.jsonl"))
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output().join("runs").join(short(&self.train_fingerprint()?)))
    }

    pub fn checkpoint_path(&self, fold: usize) -> Result<PathBuf> {
        Ok(self.run_dir()?.join(format!("fold-{fold}")).join("model.safetensors"))
    }
}

/// Parses a device name as accepted in [`DEVICE_ENV`].
pub fn parse_device(name: &str) -> Result<Device> {
    let n = name.trim().to_ascii_lowercase();
    let dev = match n.as_str() {
        "" | "cpu" => Ok(Device::Cpu),
        "metal" => Device::new_metal(0),
        "cuda" => Device::new_cuda(0),
        other => match other.strip_prefix("cuda:").and_then(|i| i.parse().ok()) {
            Some(i) => Device::new_cuda(i),
            None => return Err(Error::InvalidArgument(format!("unknown device {name:?}"))),
        },
    };
    dev.map_err(|e| Error::InvalidArgument(format!("device {name:?} unavailable: {e}")))
}

/// Human-readable encoder name for report rows.
pub fn encoder_display(kind: EncoderKind) -> &'static str {
    match kind {
        EncoderKind::ResNet => "ResNet",
        EncoderKind::SeResNeXt => "SEResNeXt",
        EncoderKind::SeNet => "SENet",
        EncoderKind::DualPathNet => "DPN",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
classes = 2
[paths]
pre = "pre.tif"
post = "post.tif"
footprints = "fp.geojson"
points = "pts.csv"
output = "out"
[training]
epochs = 3
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let mut c = ProjectConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.batch_size, 64);
        assert_eq!(c.tiling.patch_size, 1024);
        c.apply(&Overrides::default());
        assert_eq!(c.model.num_classes, 2);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ProjectConfig::parse(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn overrides_change_the_fingerprint_inputs() {
        let base = ProjectConfig::parse(MINIMAL).unwrap();
        let mut a = base.clone();
        a.apply(&Overrides::default());
        let mut b = base.clone();
        b.apply(&Overrides {
            augment: Some(false),
            ..Overrides::default()
        });
        assert_ne!(fingerprint(&a.training), fingerprint(&b.training));
        assert_eq!(fingerprint(&a.training), fingerprint(&a.clone().training));
    }

    #[test]
    fn toml_round_trip() {
        let c = ProjectConfig::parse(MINIMAL).unwrap();
        assert_eq!(ProjectConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn cpu_device_parses() {
        assert!(parse_device("cpu").unwrap().is_cpu());
        assert!(parse_device("tpu").is_err());
    }
}

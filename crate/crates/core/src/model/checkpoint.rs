use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::Deserialize;

use super::{ModelConfig, SegmentationModel};
use crate::error::{Error, Result};

/// Value of the `format` metadata key.
pub const CHECKPOINT_FORMAT: &str = "siamdamage-checkpoint/1";

/// Named tensors plus the architecture they belong to and free-form
/// training metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Builds a model of the stored architecture and loads its weights.
    pub fn to_model(&self, dtype: DType, device: &Device) -> Result<SegmentationModel> {
        let model = SegmentationModel::new(&self.config, 0, dtype, device)?;
        model.load_state(&self.tensors)?;
        Ok(model)
    }
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

/// Serialises the model state, any extra tensors (optimizer moments) and
/// `meta` into a safetensors archive.
pub fn encode_checkpoint(
    model: &SegmentationModel,
    extra: &[(String, Tensor)],
    meta: &serde_json::Value,
) -> Result<Vec<u8>> {
    let mut owned: Vec<(String, Vec<usize>, Dtype, Vec<u8>)> = Vec::new();
    for (name, var) in model.params().iter() {
        let (dt, bytes) = to_bytes(var.as_tensor())?;
        owned.push((name.to_string(), var.dims().to_vec(), dt, bytes));
    }
    for (name, t) in extra {
        let (dt, bytes) = to_bytes(t)?;
        owned.push((name.clone(), t.dims().to_vec(), dt, bytes));
    }
    let views = owned
        .iter()
        .map(|(n, shape, dt, bytes)| {
            TensorView::new(*dt, shape.clone(), bytes)
                .map(|v| (n.as_str(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut info = HashMap::new();
    info.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    info.insert("model_config".to_string(), serde_json::to_string(model.config())?);
    info.insert("meta".to_string(), serde_json::to_string(meta)?);
    safetensors::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(
    path: &Path,
    model: &SegmentationModel,
    extra: &[(String, Tensor)],
    meta: &serde_json::Value,
) -> Result<()> {
    let bytes = encode_checkpoint(model, extra, meta)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads every tensor of a safetensors archive onto the CPU.
pub fn parse_tensors(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.iter() {
        let shape = view.shape().to_vec();
        let data = view.data();
        let t = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Tensor::from_vec(v, shape, &Device::Cpu)?
            }
            Dtype::F64 => {
                let v: Vec<f64> = data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                Tensor::from_vec(v, shape, &Device::Cpu)?
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has unsupported dtype {other:?}"
                )));
            }
        };
        out.insert(name.to_string(), t);
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let info = header
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("archive carries no metadata".into()))?;
    match info.get("format") {
        Some(f) if f == CHECKPOINT_FORMAT => {}
        other => return Err(Error::Checkpoint(format!("unsupported checkpoint format {other:?}"))),
    }
    let config: ModelConfig = serde_json::from_str(
        info.get("model_config")
            .ok_or_else(|| Error::Checkpoint("missing model_config".into()))?,
    )?;
    config.validate()?;
    let meta = match info.get("meta") {
        Some(m) => serde_json::from_str(m)?,
        None => serde_json::Value::Null,
    };
    Ok(Checkpoint {
        config,
        meta,
        tensors: parse_tensors(bytes)?,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

impl SegmentationModel {
    /// Copies every parameter and buffer from `tensors`. Names under
    /// `optim.` are ignored; anything else missing or unexpected is an error.
    pub fn load_state(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut problems: Vec<String> = self
            .params()
            .names()
            .into_iter()
            .filter(|n| !tensors.contains_key(n))
            .map(|n| format!("missing {n}"))
            .collect();
        problems.extend(
            tensors
                .keys()
                .filter(|n| !n.starts_with("optim.") && self.params().get(n).is_none())
                .map(|n| format!("unexpected {n}")),
        );
        if !problems.is_empty() {
            return Err(Error::UnmappedParameters(problems));
        }
        for name in self.params().names() {
            self.params().assign(&name, &tensors[&name])?;
        }
        Ok(())
    }
}

/// Prefix rewrite rules for importing third-party weights. The longest
/// matching source prefix wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct NameTable {
    pub prefixes: BTreeMap<String, String>,
}

impl NameTable {
    pub fn translate(&self, name: &str) -> Option<String> {
        self.prefixes
            .iter()
            .filter(|(src, _)| name.starts_with(src.as_str()))
            .max_by_key(|(src, _)| src.len())
            .map(|(src, dst)| format!("{dst}{}", &name[src.len()..]))
    }
}

/// Parses a TOML table of the form `[prefixes]` / `"source." = "target."`.
pub fn parse_name_table(text: &str) -> Result<NameTable> {
    toml::from_str(text).map_err(|e| Error::Parse(format!("name table: {e}")))
}

/// Outcome of [`import_checkpoint`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub loaded: Vec<String>,
    /// Head parameters kept at their fresh initialisation because the
    /// class count differs.
    pub reinitialized: Vec<String>,
}

/// Loads foreign weights through `table`. Every source tensor must map onto
/// a model parameter and every model parameter must receive one, except the
/// classification head when its shape differs; violations are reported
/// together.
pub fn import_checkpoint(
    model: &SegmentationModel,
    source: &BTreeMap<String, Tensor>,
    table: &NameTable,
) -> Result<ImportReport> {
    let mut report = ImportReport::default();
    let mut unmapped = Vec::new();
    let mut assignments = Vec::new();
    let mut covered = std::collections::BTreeSet::new();
    for (name, t) in source {
        let Some(target) = table.translate(name).filter(|t| model.params().get(t).is_some()) else {
            unmapped.push(format!("source {name}"));
            continue;
        };
        covered.insert(target.clone());
        let shape = model.params().shape(&target).unwrap_or(&[]);
        if t.dims() != shape {
            if target.starts_with("head.") {
                report.reinitialized.push(target);
                continue;
            }
            return Err(Error::Checkpoint(format!(
                "{name} -> {target}: shape {:?} does not fit {shape:?}",
                t.dims()
            )));
        }
        assignments.push((target, t));
    }
    for name in model.params().names() {
        if !covered.contains(&name) && !name.starts_with("head.") {
            unmapped.push(format!("target {name}"));
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappedParameters(unmapped));
    }
    for (target, t) in assignments {
        model.params().assign(&target, t)?;
        report.loaded.push(target);
    }
    Ok(report)
}

use serde::{Deserialize, Serialize};

use super::{PatchRecord, TilingConfig};
use crate::error::{Error, Result};

/// First line of a patch manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub fingerprint: String,
    pub scene_width: usize,
    pub scene_height: usize,
    pub tiling: TilingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<PatchRecord>,
}

impl Manifest {
    pub fn fold_records(&self, fold: usize, split: super::Split) -> Vec<PatchRecord> {
        self.records
            .iter()
            .filter(|r| r.fold == fold && r.split == split)
            .copied()
            .collect()
    }
}

/// One JSON object per line: the header, then one record per patch.
pub fn write_manifest(manifest: &Manifest) -> String {
    let mut out = serde_json::to_string(&manifest.header).expect("header serialises");
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Parse("empty manifest".into()))?;
    let header: ManifestHeader =
        serde_json::from_str(first).map_err(|e| Error::Parse(format!("manifest header: {e}")))?;
    header.tiling.validate()?;
    let extent = super::PixelRect::new(0, 0, header.scene_width, header.scene_height);
    let mut records = Vec::new();
    for (i, line) in lines {
        let r: PatchRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))?;
        if r.fold > 3 || r.size == 0 {
            return Err(Error::Parse(format!("manifest line {}: bad fold or size", i + 1)));
        }
        let fits =
            r.x.checked_add(r.size)
                .zip(r.y.checked_add(r.size))
                .is_some_and(|(x1, y1)| x1 <= extent.x1 && y1 <= extent.y1);
        if !fits {
            return Err(Error::Parse(format!(
                "manifest line {}: patch outside the scene",
                i + 1
            )));
        }
        records.push(r);
    }
    Ok(Manifest { header, records })
}

#[cfg(test)]
mod tests {
    use super::super::Split;
    use super::*;

    #[test]
    fn roundtrip() {
        let m = Manifest {
            header: ManifestHeader {
                fingerprint: "abc".into(),
                scene_width: 64,
                scene_height: 64,
                tiling: TilingConfig {
                    patch_size: 32,
                    stride: 16,
                    ..Default::default()
                },
            },
            records: vec![PatchRecord {
                fold: 2,
                split: Split::Test,
                x: 0,
                y: 32,
                size: 32,
            }],
        };
        assert_eq!(parse_manifest(&write_manifest(&m)).unwrap(), m);
        let text = write_manifest(&m).replace("\"y\":32", "\"y\":40");
        assert!(parse_manifest(&text).is_err());
        assert!(parse_manifest("").is_err());
    }
}

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::geometry::{Point, Polygon};
use super::DamageLabel;
use crate::error::{Error, Result};

/// Footprint identifier. Integers sort numerically and before text ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FootprintId {
    Num(i64),
    Text(String),
}

impl Ord for FootprintId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (FootprintId::Num(a), FootprintId::Num(b)) => a.cmp(b),
            (FootprintId::Num(_), FootprintId::Text(_)) => Ordering::Less,
            (FootprintId::Text(_), FootprintId::Num(_)) => Ordering::Greater,
            (FootprintId::Text(a), FootprintId::Text(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for FootprintId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FootprintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FootprintId::Num(n) => write!(f, "{n}"),
            FootprintId::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for FootprintId {
    fn from(v: i64) -> Self {
        FootprintId::Num(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingFootprint {
    pub id: FootprintId,
    pub polygon: Polygon,
    /// Area-weighted centroid of `polygon`.
    pub barycentre: Point,
    /// Label carried by the input layer itself (expert photo-interpretation).
    pub prior_label: Option<DamageLabel>,
}

impl BuildingFootprint {
    pub fn new(id: impl Into<FootprintId>, polygon: Polygon) -> Self {
        let barycentre = polygon.centroid();
        Self {
            id: id.into(),
            polygon,
            barycentre,
            prior_label: None,
        }
    }

    pub fn with_prior_label(mut self, label: Option<DamageLabel>) -> Self {
        self.prior_label = label;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSource {
    External,
    Expert,
}

impl PointSource {
    fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "" | "external" | "unitar" => Some(PointSource::External),
            "expert" => Some(PointSource::Expert),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamagePoint {
    pub location: Point,
    pub label: DamageLabel,
    pub source: PointSource,
}

impl DamagePoint {
    pub fn new(x: f64, y: f64, label: DamageLabel) -> Self {
        Self {
            location: Point::new(x, y),
            label,
            source: PointSource::External,
        }
    }
}

/// Footprints sharing one CRS. `crs == None` means "the project CRS".
#[derive(Debug, Clone, Default)]
pub struct FootprintLayer {
    pub crs: Option<String>,
    pub footprints: Vec<BuildingFootprint>,
}

#[derive(Debug, Clone, Default)]
pub struct PointLayer {
    pub crs: Option<String>,
    pub points: Vec<DamagePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFootprint {
    pub footprint: BuildingFootprint,
    /// `None` is the unlabeled state.
    pub label: Option<DamageLabel>,
}

/// Footprints with their assigned labels, sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFootprintSet {
    pub crs: Option<String>,
    pub entries: Vec<LabeledFootprint>,
    /// Points that fell outside every buffer and were dropped.
    pub unassigned_points: usize,
}

impl LabeledFootprintSet {
    pub fn label_of(&self, id: &FootprintId) -> Option<Option<DamageLabel>> {
        self.entries
            .binary_search_by(|e| e.footprint.id.cmp(id))
            .ok()
            .map(|i| self.entries[i].label)
    }

    /// Building counts per damage code 0..=3, then unlabeled.
    pub fn counts(&self) -> [usize; 5] {
        let mut c = [0usize; 5];
        for e in &self.entries {
            match e.label {
                Some(l) => c[l.code() as usize] += 1,
                None => c[4] += 1,
            }
        }
        c
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn crs_of(doc: &Value) -> Option<String> {
    doc.get("crs")?
        .get("properties")?
        .get("name")?
        .as_str()
        .map(normalize_crs)
}

/// Maps the long OGC URN form onto `EPSG:<code>`.
pub(crate) fn normalize_crs(name: &str) -> String {
    let n = name.trim();
    if let Some(code) = n.strip_prefix("urn:ogc:def:crs:EPSG::") {
        return format!("EPSG:{code}");
    }
    n.to_string()
}

fn features(doc: &Value) -> Result<&Vec<Value>> {
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(parse_err("expected a GeoJSON FeatureCollection"));
    }
    doc.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("FeatureCollection without a features array"))
}

fn parse_position(v: &Value) -> Result<Point> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| parse_err("position must be an array of at least two numbers"))?;
    let x = arr[0].as_f64().ok_or_else(|| parse_err("non-numeric x"))?;
    let y = arr[1].as_f64().ok_or_else(|| parse_err("non-numeric y"))?;
    Ok(Point::new(x, y))
}

fn parse_polygon_coords(v: &Value) -> Result<Polygon> {
    let rings = v
        .as_array()
        .ok_or_else(|| parse_err("polygon coordinates must be an array of rings"))?;
    let rings = rings
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| parse_err("ring must be an array"))?
                .iter()
                .map(parse_position)
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Polygon::new(rings)
}

fn parse_id(feature: &Value) -> Option<FootprintId> {
    let props = feature.get("properties");
    let raw = feature
        .get("id")
        .or_else(|| props.and_then(|p| p.get("id")))
        .or_else(|| props.and_then(|p| p.get("osm_id")))?;
    match raw {
        Value::Number(n) => n.as_i64().map(FootprintId::Num),
        Value::String(s) => Some(FootprintId::Text(s.clone())),
        _ => None,
    }
}

fn parse_label_value(v: &Value) -> Result<Option<DamageLabel>> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => n
            .as_u64()
            .and_then(|c| u8::try_from(c).ok())
            .and_then(DamageLabel::from_code)
            .map(Some)
            .ok_or_else(|| parse_err(format!("damage code {n} out of range 0..=3"))),
        Value::String(s) => DamageLabel::parse(s)
            .map(Some)
            .ok_or_else(|| parse_err(format!("unknown damage label {s:?}"))),
        _ => Err(parse_err("damage must be an integer or a name")),
    }
}

/// Parses a footprint FeatureCollection. Each feature needs an id and a
/// Polygon (or single-part MultiPolygon); an optional `damage` property
/// carries a prior label.
pub fn parse_footprints_geojson(text: &str) -> Result<FootprintLayer> {
    let doc: Value = serde_json::from_str(text)?;
    let mut footprints = Vec::new();
    for (i, f) in features(&doc)?.iter().enumerate() {
        let id = parse_id(f).ok_or_else(|| parse_err(format!("feature {i} has no usable id")))?;
        let geom = f
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| parse_err(format!("feature {id} has no geometry")))?;
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| parse_err(format!("feature {id} geometry has no coordinates")))?;
        let polygon = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => parse_polygon_coords(coords)?,
            Some("MultiPolygon") => match coords.as_array().map(|a| a.as_slice()) {
                Some([single]) => parse_polygon_coords(single)?,
                _ => {
                    return Err(Error::InvalidGeometry(format!(
                        "feature {id}: only single-part MultiPolygons are supported"
                    )))
                }
            },
            other => {
                return Err(Error::InvalidGeometry(format!(
                    "feature {id}: unsupported geometry type {other:?}"
                )))
            }
        };
        let prior = match f.get("properties").and_then(|p| p.get("damage")) {
            Some(v) => parse_label_value(v)?,
            None => None,
        };
        footprints.push(BuildingFootprint::new(id, polygon).with_prior_label(prior));
    }
    Ok(FootprintLayer {
        crs: crs_of(&doc),
        footprints,
    })
}

/// Parses damage points from a FeatureCollection of Point features with
/// `label` (or `damage`) and optional `source` properties.
pub fn parse_points_geojson(text: &str) -> Result<PointLayer> {
    let doc: Value = serde_json::from_str(text)?;
    let mut points = Vec::new();
    for (i, f) in features(&doc)?.iter().enumerate() {
        let geom = f
            .get("geometry")
            .ok_or_else(|| parse_err(format!("point feature {i} has no geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("Point") {
            return Err(Error::InvalidGeometry(format!("feature {i} is not a Point")));
        }
        let location = parse_position(
            geom.get("coordinates")
                .ok_or_else(|| parse_err(format!("point feature {i} has no coordinates")))?,
        )?;
        let props = f.get("properties");
        let label = props
            .and_then(|p| p.get("label").or_else(|| p.get("damage")))
            .map(parse_label_value)
            .transpose()?
            .flatten()
            .ok_or_else(|| parse_err(format!("point feature {i} has no label")))?;
        let source = match props.and_then(|p| p.get("source")).and_then(Value::as_str) {
            Some(s) => PointSource::parse(s).ok_or_else(|| parse_err(format!("unknown point source {s:?}")))?,
            None => PointSource::External,
        };
        points.push(DamagePoint {
            location,
            label,
            source,
        });
    }
    Ok(PointLayer {
        crs: crs_of(&doc),
        points,
    })
}

/// Parses delimited damage points with a header naming `x`, `y`, `label`
/// and optionally `source` columns (any order, case-insensitive).
pub fn parse_points_csv(text: &str) -> Result<PointLayer> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(format!("csv header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (xi, yi) = (
        col("x").ok_or_else(|| parse_err("missing x column"))?,
        col("y").ok_or_else(|| parse_err("missing y column"))?,
    );
    let li = col("label")
        .or_else(|| col("damage"))
        .ok_or_else(|| parse_err("missing label column"))?;
    let si = col("source");
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(format!("csv row {}: {e}", row + 1)))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("row {}: bad coordinate {:?}", row + 1, field(i))))
        };
        let location = Point::new(num(xi)?, num(yi)?);
        let label = DamageLabel::parse(field(li))
            .ok_or_else(|| parse_err(format!("row {}: bad label {:?}", row + 1, field(li))))?;
        let source = match si {
            Some(i) => PointSource::parse(field(i))
                .ok_or_else(|| parse_err(format!("row {}: bad source {:?}", row + 1, field(i))))?,
            None => PointSource::External,
        };
        points.push(DamagePoint {
            location,
            label,
            source,
        });
    }
    Ok(PointLayer { crs: None, points })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_footprints(path: &Path) -> Result<FootprintLayer> {
    parse_footprints_geojson(&read_text(path)?)
}

/// Reads `.csv` as delimited text, anything else as GeoJSON.
pub fn read_points(path: &Path) -> Result<PointLayer> {
    let text = read_text(path)?;
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_points_csv(&text)
    } else {
        parse_points_geojson(&text)
    }
}

/// Serialises labeled footprints; `damage` is null for unlabeled buildings.
pub fn write_labeled_geojson(set: &LabeledFootprintSet) -> String {
    let features: Vec<Value> = set
        .entries
        .iter()
        .map(|e| {
            let rings: Vec<Vec<[f64; 2]>> = e
                .footprint
                .polygon
                .rings()
                .iter()
                .map(|r| r.iter().map(|p| [p.x, p.y]).collect())
                .collect();
            json!({
                "type": "Feature",
                "id": e.footprint.id,
                "properties": {
                    "damage": e.label.map(|l| l.code()),
                    "barycentre": [e.footprint.barycentre.x, e.footprint.barycentre.y],
                },
                "geometry": {"type": "Polygon", "coordinates": rings},
            })
        })
        .collect();
    let mut doc = json!({"type": "FeatureCollection", "features": features});
    if let Some(crs) = &set.crs {
        doc["crs"] = json!({"type": "name", "properties": {"name": crs}});
    }
    serde_json::to_string_pretty(&doc).expect("geojson serialisation")
}

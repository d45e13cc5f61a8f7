//! Static result products: per-factor 7 × 24 heatmap tables and a GeoJSON
//! point layer of per-cell factor scores.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::condense::{DAY_LABELS, SLOTS};
use crate::efa::FactorModel;
use crate::scoring::ScoreTable;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cells without valid coordinates: {}", .0.join(", "))]
    MissingCoordinates(Vec<String>),
    #[error("model has {0} variables; heatmaps need {SLOTS}")]
    NotWeekly(usize),
    #[error("heatmap csv: {0}")]
    Format(String),
    #[error("invalid GeoJSON: {0}")]
    InvalidGeoJson(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One factor's loadings laid out by day (rows, Mon..Sun) and hour (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTable {
    /// 1-based factor number.
    pub factor: usize,
    pub values: [[f64; 24]; 7],
}

impl HeatmapTable {
    pub fn from_column(factor: usize, column: &[f64]) -> Result<Self, ExportError> {
        if column.len() != SLOTS {
            return Err(ExportError::NotWeekly(column.len()));
        }
        let mut values = [[0.0; 24]; 7];
        for (d, row) in values.iter_mut().enumerate() {
            row.copy_from_slice(&column[d * 24..d * 24 + 24]);
        }
        Ok(Self { factor, values })
    }

    pub fn file_name(&self) -> String {
        format!("factor_{}_heatmap.csv", self.factor)
    }

    pub fn get(&self, day: usize, hour: usize) -> f64 {
        self.values[day][hour]
    }

    /// Flattened back to slot order.
    pub fn to_column(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// (day, hour) of the largest entry; first in slot order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let col = self.to_column();
        let mut best = 0;
        for (s, v) in col.iter().enumerate() {
            if *v > col[best] {
                best = s;
            }
        }
        (best / 24, best % 24)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ExportError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["day".to_string()];
        header.extend((0..24).map(|h| format!("h{h}")));
        w.write_record(&header)?;
        for (d, row) in self.values.iter().enumerate() {
            let mut rec = vec![DAY_LABELS[d].to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| ExportError::Io {
            path: self.file_name(),
            source,
        })?;
        Ok(())
    }

    pub fn read_csv<R: Read>(factor: usize, reader: R) -> Result<Self, ExportError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let expected: Vec<String> = std::iter::once("day".to_string())
            .chain((0..24).map(|h| format!("h{h}")))
            .collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(ExportError::Format("header must be day,h0..h23".into()));
        }
        let mut values = [[0.0; 24]; 7];
        let mut rows = 0;
        for (d, rec) in r.records().enumerate() {
            let rec = rec?;
            if d >= 7 {
                return Err(ExportError::Format("more than 7 day rows".into()));
            }
            if &rec[0] != DAY_LABELS[d] {
                return Err(ExportError::Format(format!(
                    "row {} labelled `{}`, expected {}",
                    d + 1,
                    &rec[0],
                    DAY_LABELS[d]
                )));
            }
            for h in 0..24 {
                values[d][h] = rec[h + 1]
                    .parse()
                    .map_err(|_| ExportError::Format(format!("`{}` is not a number", &rec[h + 1])))?;
            }
            rows += 1;
        }
        if rows != 7 {
            return Err(ExportError::Format(format!("{rows} day rows, expected 7")));
        }
        Ok(Self { factor, values })
    }
}

/// Heatmaps for every factor of a finalized 168-variable model.
pub fn heatmaps(model: &FactorModel) -> Result<Vec<HeatmapTable>, ExportError> {
    (0..model.n_factors())
        .map(|k| HeatmapTable::from_column(k + 1, model.pattern.column(k).as_slice()))
        .collect()
}

/// Writes `factor_<k>_heatmap.csv` for every factor into `out_dir`.
pub fn export_heatmaps(model: &FactorModel, out_dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();
    for table in heatmaps(model)? {
        let path = out_dir.join(table.file_name());
        let f = File::create(&path).map_err(io_err(&path))?;
        table.write_csv(BufWriter::new(f))?;
        files.push(path);
    }
    Ok(files)
}

/// GeoJSON FeatureCollection of per-cell scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapDocument(pub Value);

impl ScoreMapDocument {
    pub fn from_table(table: &ScoreTable) -> Result<Self, ExportError> {
        let missing: Vec<String> = table
            .cell_ids
            .iter()
            .zip(&table.coordinates)
            .filter(|(_, c)| !c.is_some_and(|p| p.is_valid()))
            .map(|(id, _)| id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ExportError::MissingCoordinates(missing));
        }
        let features: Vec<Value> = table
            .cell_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let p = table.coordinates[i].expect("checked above");
                let row = table.scores.row(i);
                let mut props = Map::new();
                props.insert("cell_id".into(), json!(id));
                for (label, v) in table.labels.iter().zip(row.iter()) {
                    props.insert(label.clone(), json!(v));
                }
                props.insert("dominant".into(), json!(dominant(row.iter().copied())));
                json!({
                    "type": "Feature",
                    "geometry": { "type": "Point", "coordinates": [p.lon, p.lat] },
                    "properties": props,
                })
            })
            .collect();
        Ok(Self(json!({ "type": "FeatureCollection", "features": features })))
    }

    pub fn n_features(&self) -> usize {
        self.0["features"].as_array().map_or(0, Vec::len)
    }

    pub fn to_string_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("JSON values serialize")
    }
}

/// 1-based index of the largest score; lowest index on ties.
pub fn dominant(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in scores.into_iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map_or(0, |(i, _)| i + 1)
}

/// Builds, validates and writes the score map.
pub fn export_score_map(table: &ScoreTable, out_path: &Path) -> Result<ScoreMapDocument, ExportError> {
    let doc = ScoreMapDocument::from_table(table)?;
    validate_geojson(&doc.0)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = doc.to_string_pretty();
    text.push('\n');
    std::fs::write(out_path, text).map_err(io_err(out_path))?;
    Ok(doc)
}

fn invalid(msg: impl Into<String>) -> ExportError {
    ExportError::InvalidGeoJson(msg.into())
}

fn check_position(v: &Value, at: &str) -> Result<(), ExportError> {
    let arr = v
        .as_array()
        .ok_or_else(|| invalid(format!("{at}: position is not an array")))?;
    if !(2..=3).contains(&arr.len()) {
        return Err(invalid(format!("{at}: position has {} elements", arr.len())));
    }
    let nums: Vec<f64> = arr
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| invalid(format!("{at}: non-numeric coordinate"))))
        .collect::<Result<_, _>>()?;
    if !(-180.0..=180.0).contains(&nums[0]) || !(-90.0..=90.0).contains(&nums[1]) {
        return Err(invalid(format!("{at}: [{}, {}] outside lon/lat range", nums[0], nums[1])));
    }
    Ok(())
}

fn check_geometry(g: &Value, at: &str) -> Result<(), ExportError> {
    if g.is_null() {
        return Ok(());
    }
    let obj = g.as_object().ok_or_else(|| invalid(format!("{at}: geometry is not an object")))?;
    let kind = obj.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = || {
        obj.get("coordinates")
            .ok_or_else(|| invalid(format!("{at}: {kind} lacks coordinates")))
    };
    let list = |v: &Value, min: usize| -> Result<Vec<Value>, ExportError> {
        let a = v
            .as_array()
            .ok_or_else(|| invalid(format!("{at}: {kind} coordinates not an array")))?;
        if a.len() < min {
            return Err(invalid(format!("{at}: {kind} needs at least {min} positions")));
        }
        Ok(a.clone())
    };
    match kind {
        "Point" => check_position(coords()?, at),
        "MultiPoint" => list(coords()?, 0)?.iter().try_for_each(|p| check_position(p, at)),
        "LineString" => list(coords()?, 2)?.iter().try_for_each(|p| check_position(p, at)),
        "MultiLineString" => list(coords()?, 0)?.iter().try_for_each(|l| {
            list(l, 2)?.iter().try_for_each(|p| check_position(p, at))
        }),
        "Polygon" => list(coords()?, 0)?.iter().try_for_each(|ring| {
            let ring = list(ring, 4)?;
            ring.iter().try_for_each(|p| check_position(p, at))?;
            if ring.first() != ring.last() {
                return Err(invalid(format!("{at}: polygon ring not closed")));
            }
            Ok(())
        }),
        "GeometryCollection" => obj
            .get("geometries")
            .and_then(Value::as_array)
            .ok_or_else(|| invalid(format!("{at}: GeometryCollection lacks geometries")))?
            .iter()
            .try_for_each(|g| check_geometry(g, at)),
        other => Err(invalid(format!("{at}: unsupported geometry type `{other}`"))),
    }
}

/// Strict structural check of a GeoJSON FeatureCollection: member types,
/// geometry shapes, position arity and lon/lat ranges.
pub fn validate_geojson(doc: &Value) -> Result<(), ExportError> {
    let obj = doc.as_object().ok_or_else(|| invalid("top level is not an object"))?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(invalid("type must be FeatureCollection"));
    }
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| invalid("features must be an array"))?;
    for (i, f) in features.iter().enumerate() {
        let at = format!("features[{i}]");
        let fo = f.as_object().ok_or_else(|| invalid(format!("{at}: not an object")))?;
        if fo.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(invalid(format!("{at}: type must be Feature")));
        }
        let geometry = fo
            .get("geometry")
            .ok_or_else(|| invalid(format!("{at}: missing geometry")))?;
        check_geometry(geometry, &at)?;
        match fo.get("properties") {
            Some(Value::Object(_)) | Some(Value::Null) => {}
            _ => return Err(invalid(format!("{at}: properties must be an object or null"))),
        }
    }
    Ok(())
}

/// Reads a score map back into cell ids, [lat, lon] points and score rows.
pub fn read_score_map(text: &str) -> Result<ScoreTable, ExportError> {
    let doc: Value = serde_json::from_str(text)?;
    validate_geojson(&doc)?;
    let features = doc["features"].as_array().expect("validated");
    let mut labels: Vec<String> = Vec::new();
    let (mut ids, mut coords, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for f in features {
        let props = f["properties"]
            .as_object()
            .ok_or_else(|| invalid("feature without properties"))?;
        let id = props
            .get("cell_id")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("feature without cell_id"))?;
        let these: Vec<String> = props
            .keys()
            .filter(|k| k.starts_with('f') && k[1..].parse::<usize>().is_ok())
            .cloned()
            .collect();
        if labels.is_empty() {
            labels = these.clone();
        } else if labels != these {
            return Err(invalid(format!("{id}: factor properties differ between features")));
        }
        for l in &labels {
            data.push(props[l].as_f64().ok_or_else(|| invalid(format!("{id}: {l} not numeric")))?);
        }
        let c = &f["geometry"]["coordinates"];
        coords.push(Some(crate::ingest::GeoPoint {
            lat: c[1].as_f64().unwrap_or(f64::NAN),
            lon: c[0].as_f64().unwrap_or(f64::NAN),
        }));
        ids.push(id.to_string());
    }
    let n = ids.len();
    Ok(ScoreTable {
        cell_ids: ids,
        coordinates: coords,
        scores: DMatrix::from_row_slice(n, labels.len(), &data),
        labels,
        ridge: false,
    })
}

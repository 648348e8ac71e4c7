//! GeoJSON point and line features for distance maps.

use std::path::Path;

use apm_core::labels::Targets;
use serde_json::Value;

use crate::error::{AppError, Result};

fn coord(v: &Value) -> Option<(f64, f64)> {
    let a = v.as_array()?;
    Some((a.first()?.as_f64()?, a.get(1)?.as_f64()?))
}

fn line(v: &Value) -> Option<Vec<(f64, f64)>> {
    v.as_array()?.iter().map(coord).collect()
}

fn add_geometry(g: &Value, t: &mut Targets) -> std::result::Result<(), String> {
    let kind = g.get("type").and_then(Value::as_str).ok_or("geometry without type")?;
    let coords = g.get("coordinates");
    let bad = || format!("malformed {kind} coordinates");
    match kind {
        "Point" => t.points.push(coords.and_then(coord).ok_or_else(bad)?),
        "MultiPoint" => t.points.extend(coords.and_then(line).ok_or_else(bad)?),
        "LineString" => t.lines.push(coords.and_then(line).ok_or_else(bad)?),
        "MultiLineString" => {
            for l in coords.and_then(Value::as_array).ok_or_else(bad)? {
                t.lines.push(line(l).ok_or_else(bad)?);
            }
        }
        "GeometryCollection" => {
            for sub in g.get("geometries").and_then(Value::as_array).ok_or_else(bad)? {
                add_geometry(sub, t)?;
            }
        }
        other => return Err(format!("unsupported geometry type `{other}`")),
    }
    Ok(())
}

/// Points and lines from a FeatureCollection, Feature or bare geometry.
pub fn parse_targets(text: &str) -> std::result::Result<Targets, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut t = Targets::default();
    match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => {
            for f in v.get("features").and_then(Value::as_array).ok_or("missing features")? {
                if let Some(g) = f.get("geometry").filter(|g| !g.is_null()) {
                    add_geometry(g, &mut t)?;
                }
            }
        }
        Some("Feature") => add_geometry(v.get("geometry").ok_or("feature without geometry")?, &mut t)?,
        Some(_) => add_geometry(&v, &mut t)?,
        None => return Err("GeoJSON object without type".into()),
    }
    Ok(t)
}

pub fn read_targets(path: impl AsRef<Path>) -> Result<Targets> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_targets(&text).map_err(|m| AppError::format(path, m))
}

pub fn targets_to_geojson(t: &Targets) -> Value {
    let mut features: Vec<Value> = t
        .points
        .iter()
        .map(|(x, y)| serde_json::json!({"type": "Feature", "properties": {}, "geometry": {"type": "Point", "coordinates": [x, y]}}))
        .collect();
    features.extend(t.lines.iter().map(|l| {
        let coords: Vec<[f64; 2]> = l.iter().map(|(x, y)| [*x, *y]).collect();
        serde_json::json!({"type": "Feature", "properties": {}, "geometry": {"type": "LineString", "coordinates": coords}})
    }));
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

use log::warn;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::road_graph::Units;

/// OSM `highway` values treated as roads; `<class>_link` variants are accepted too.
pub const ROAD_CLASSES: [&str; 7] = [
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "residential",
    "service",
];

pub fn is_road_class(highway: &str) -> bool {
    let base = highway.strip_suffix("_link").unwrap_or(highway);
    ROAD_CLASSES.contains(&base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub highway: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub building: String,
    /// Outer ring first, then holes. Every ring is closed.
    pub rings: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorLayer {
    pub units: Units,
    pub roads: Vec<Road>,
    pub buildings: Vec<Building>,
}

impl VectorLayer {
    pub fn new(units: Units) -> Self {
        Self {
            units,
            roads: Vec::new(),
            buildings: Vec::new(),
        }
    }

    pub fn road_polylines(&self) -> Vec<Vec<Point>> {
        self.roads.iter().map(|r| r.points.clone()).collect()
    }
}

/// Features that were not turned into roads or buildings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl ParseReport {
    fn skip(&mut self, index: usize, why: impl AsRef<str>) {
        let msg = format!("feature {index}: {}", why.as_ref());
        warn!("{msg}");
        self.skipped += 1;
        self.warnings.push(msg);
    }
}

fn structure_error(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        column: 0,
        message: msg.into(),
    }
}

fn parse_point(v: &Value) -> Option<Point> {
    let arr = v.as_array()?;
    if arr.len() < 2 {
        return None;
    }
    let p = Point::new(arr[0].as_f64()?, arr[1].as_f64()?);
    p.is_finite().then_some(p)
}

fn parse_line(v: &Value) -> Option<Vec<Point>> {
    v.as_array()?.iter().map(parse_point).collect()
}

fn parse_rings(v: &Value) -> Option<Vec<Vec<Point>>> {
    v.as_array()?.iter().map(parse_line).collect()
}

fn building_tag(props: &Map<String, Value>) -> Option<String> {
    match props.get("building")? {
        Value::String(s) if s != "no" => Some(s.clone()),
        Value::Bool(true) => Some("yes".to_string()),
        _ => None,
    }
}

/// Parses a GeoJSON FeatureCollection into roads and buildings.
///
/// Line features whose `highway` tag is a road class become roads; polygon
/// features with a `building` tag become buildings. Everything else is skipped
/// and reported. The optional top-level `"units"` member tags the coordinate
/// frame and defaults to degrees.
pub fn parse_geojson(text: &str) -> Result<(VectorLayer, ParseReport)> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = doc
        .as_object()
        .ok_or_else(|| structure_error("top level is not a JSON object"))?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(structure_error("document is not a FeatureCollection"));
    }
    let units = match obj.get("units") {
        None => Units::Degrees,
        Some(Value::String(s)) => s.parse()?,
        Some(_) => return Err(structure_error("\"units\" must be a string")),
    };
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| structure_error("FeatureCollection has no \"features\" array"))?;

    let mut layer = VectorLayer::new(units);
    let mut report = ParseReport::default();
    let empty = Map::new();
    for (i, feature) in features.iter().enumerate() {
        let props = feature
            .get("properties")
            .and_then(Value::as_object)
            .unwrap_or(&empty);
        let Some(geometry) = feature.get("geometry").filter(|g| !g.is_null()) else {
            report.skip(i, "no geometry");
            continue;
        };
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
        let coords = geometry.get("coordinates").unwrap_or(&Value::Null);
        match kind {
            "LineString" | "MultiLineString" => {
                let Some(highway) = props.get("highway").and_then(Value::as_str) else {
                    report.skip(i, "line without a highway tag");
                    continue;
                };
                if !is_road_class(highway) {
                    report.skip(i, format!("highway={highway} is not a road class"));
                    continue;
                }
                let lines = if kind == "LineString" {
                    parse_line(coords).map(|l| vec![l])
                } else {
                    coords.as_array().and_then(|a| a.iter().map(parse_line).collect())
                };
                let Some(lines) = lines else {
                    report.skip(i, "malformed line coordinates");
                    continue;
                };
                for points in lines {
                    if points.len() < 2 {
                        report.skip(i, "line with fewer than 2 points");
                        continue;
                    }
                    layer.roads.push(Road {
                        highway: highway.to_string(),
                        points,
                    });
                }
            }
            "Polygon" | "MultiPolygon" => {
                let Some(building) = building_tag(props) else {
                    report.skip(i, "polygon without a building tag");
                    continue;
                };
                let polygons = if kind == "Polygon" {
                    parse_rings(coords).map(|r| vec![r])
                } else {
                    coords.as_array().and_then(|a| a.iter().map(parse_rings).collect())
                };
                let Some(polygons) = polygons else {
                    report.skip(i, "malformed polygon coordinates");
                    continue;
                };
                for mut rings in polygons {
                    rings.retain(|r| !r.is_empty());
                    for ring in &mut rings {
                        if ring.first() != ring.last() {
                            ring.push(ring[0]);
                        }
                    }
                    if rings.is_empty() || rings[0].len() < 4 {
                        report.skip(i, "polygon ring with fewer than 3 distinct points");
                        continue;
                    }
                    layer.buildings.push(Building {
                        building: building.clone(),
                        rings,
                    });
                }
            }
            other => report.skip(i, format!("unsupported geometry type {other:?}")),
        }
    }
    Ok((layer, report))
}

fn coords(points: &[Point]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.x, p.y])).collect())
}

/// Serializes roads as LineStrings and buildings as Polygons.
pub fn layer_to_geojson(layer: &VectorLayer) -> String {
    let mut features = Vec::with_capacity(layer.roads.len() + layer.buildings.len());
    for r in &layer.roads {
        features.push(json!({
            "type": "Feature",
            "properties": { "highway": r.highway },
            "geometry": { "type": "LineString", "coordinates": coords(&r.points) },
        }));
    }
    for b in &layer.buildings {
        let rings: Vec<Value> = b.rings.iter().map(|r| coords(r)).collect();
        features.push(json!({
            "type": "Feature",
            "properties": { "building": b.building },
            "geometry": { "type": "Polygon", "coordinates": rings },
        }));
    }
    let doc = json!({
        "type": "FeatureCollection",
        "units": layer.units.to_string(),
        "features": features,
    });
    serde_json::to_string_pretty(&doc).expect("JSON values always serialize")
}

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo_io::parse_geojson;
use crate::geom::Point;

use super::{RoadGraph, Units};

/// One LineString feature per edge with `edge_id`, `u`, `v` and `length`
/// properties. The graph units are stored in a top-level `"units"` member.
pub fn graph_to_geojson(g: &RoadGraph) -> String {
    let features: Vec<Value> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let coords: Vec<Value> = e.geometry.iter().map(|p| json!([p.x, p.y])).collect();
            json!({
                "type": "Feature",
                "properties": { "edge_id": i, "u": e.a, "v": e.b, "length": e.length },
                "geometry": { "type": "LineString", "coordinates": coords },
            })
        })
        .collect();
    let doc = json!({
        "type": "FeatureCollection",
        "units": g.units().to_string(),
        "features": features,
    });
    serde_json::to_string_pretty(&doc).expect("JSON values always serialize")
}

fn endpoint_ids(feature: &Value) -> Option<(u64, u64)> {
    let props = feature.get("properties")?;
    Some((props.get("u")?.as_u64()?, props.get("v")?.as_u64()?))
}

fn line_points(feature: &Value) -> Option<Vec<Point>> {
    let geometry = feature.get("geometry")?;
    if geometry.get("type")?.as_str()? != "LineString" {
        return None;
    }
    geometry
        .get("coordinates")?
        .as_array()?
        .iter()
        .map(|c| {
            let c = c.as_array()?;
            Some(Point::new(c.first()?.as_f64()?, c.get(1)?.as_f64()?))
        })
        .collect()
}

/// Reads a graph written by [`graph_to_geojson`]. Documents without `u`/`v`
/// edge properties (plain OSM extracts) are read as road polylines and noded
/// at shared vertices.
pub fn graph_from_geojson(text: &str) -> Result<RoadGraph> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let features = doc.get("features").and_then(Value::as_array);
    let is_graph = features.is_some_and(|f| !f.is_empty() && f.iter().all(|x| endpoint_ids(x).is_some()));
    if !is_graph {
        let (layer, _) = parse_geojson(text)?;
        return RoadGraph::from_polylines(layer.units, &layer.road_polylines());
    }
    let units: Units = match doc.get("units").and_then(Value::as_str) {
        Some(s) => s.parse()?,
        None => Units::Degrees,
    };
    let features = features.expect("checked above");

    let mut edges = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let (u, v) = endpoint_ids(f).expect("checked above");
        let points = line_points(f)
            .ok_or_else(|| Error::invalid(format!("feature {i}: edge geometry must be a LineString")))?;
        if points.len() < 2 {
            return Err(Error::invalid(format!("feature {i}: edge needs at least 2 points")));
        }
        edges.push((u, v, points));
    }

    // Node ids may have gaps where isolated nodes were not serialized.
    let mut coords: BTreeMap<u64, Point> = BTreeMap::new();
    for (i, (u, v, points)) in edges.iter().enumerate() {
        for (id, p) in [(*u, points[0]), (*v, points[points.len() - 1])] {
            if let Some(&q) = coords.get(&id) {
                if q != p {
                    return Err(Error::invalid(format!(
                        "feature {i}: node {id} has inconsistent coordinates"
                    )));
                }
            }
            coords.insert(id, p);
        }
    }
    let mut g = RoadGraph::new(units);
    let index: BTreeMap<u64, usize> = coords.iter().map(|(&id, &p)| (id, g.add_node(p))).collect();
    for (u, v, points) in edges {
        g.add_edge(index[&u], index[&v], points)?;
    }
    Ok(g)
}

use crate::error::{Error, Result};
use crate::geom::Point;

use super::{check_units, match_subsegments_within, slice_edges, RoadGraph, SlicedGraph};

/// Result of registering a change graph against a reference graph.
#[derive(Debug, Clone)]
pub struct Registration {
    /// The reference graph with matched sub-segments removed.
    pub graph: RoadGraph,
    /// Indices into `slice_edges(reference, l)` of the removed sub-segments.
    pub removed: Vec<usize>,
}

/// Removes from `osm` every sub-segment that corresponds to a sub-segment of
/// `change`, using the default match radius of `l / 2`.
pub fn register_diff(osm: &RoadGraph, change: &RoadGraph, l: f64) -> Result<RoadGraph> {
    Ok(register_diff_within(osm, change, l, l / 2.0)?.graph)
}

pub fn register_diff_within(osm: &RoadGraph, change: &RoadGraph, l: f64, radius: f64) -> Result<Registration> {
    check_units(osm.units(), change.units())?;
    let sliced_osm = slice_edges(osm, l)?;
    let sliced_change = slice_edges(change, l)?;
    let corr = match_subsegments_within(&sliced_osm, &sliced_change, radius)?;
    let removed: Vec<usize> = corr.matched_a().collect();
    let graph = remove_subsegments(osm, &sliced_osm, &removed)?;
    Ok(Registration { graph, removed })
}

/// Deletes the listed sub-segments from `g`, splitting edges at the cut points.
/// Untouched edges are copied verbatim; nodes left without edges are dropped.
pub fn remove_subsegments(g: &RoadGraph, sliced: &SlicedGraph, removed: &[usize]) -> Result<RoadGraph> {
    if sliced.edge_ranges.len() != g.edge_count() {
        return Err(Error::invalid("sliced graph does not belong to this graph"));
    }
    let mut gone = vec![false; sliced.len()];
    for &i in removed {
        *gone
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("sub-segment index {i} out of range")))? = true;
    }

    let mut out = RoadGraph::new(g.units());
    for &p in g.nodes() {
        out.add_node(p);
    }
    for (ei, e) in g.edges().iter().enumerate() {
        let range = sliced.edge_ranges[ei].clone();
        if range.clone().all(|k| !gone[k]) {
            out.add_edge(e.a, e.b, e.geometry.clone())?;
            continue;
        }
        let last = range.end - 1;
        let mut k = range.start;
        while k < range.end {
            if gone[k] {
                k += 1;
                continue;
            }
            let run_start = k;
            while k < range.end && !gone[k] {
                k += 1;
            }
            let run_end = k - 1;
            let mut geometry: Vec<Point> = Vec::new();
            for s in &sliced.sub_segments[run_start..=run_end] {
                for &p in &s.path {
                    if geometry.last() != Some(&p) {
                        geometry.push(p);
                    }
                }
            }
            let a = if run_start == range.start {
                e.a
            } else {
                out.add_node(geometry[0])
            };
            let b = if run_end == last {
                e.b
            } else {
                out.add_node(geometry[geometry.len() - 1])
            };
            if run_start == range.start {
                geometry[0] = out.nodes()[a];
            }
            if run_end == last {
                let n = geometry.len();
                geometry[n - 1] = out.nodes()[b];
            }
            out.add_edge(a, b, geometry)?;
        }
    }
    Ok(out.without_isolated_nodes())
}

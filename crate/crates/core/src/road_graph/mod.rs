//! Spatial road graphs: construction, slicing into sub-segments, sub-segment
//! correspondence, change registration and shortest paths.

mod geojson;
mod matching;
mod paths;
mod register;
mod slice;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polyline_length, Point};

pub use geojson::{graph_from_geojson, graph_to_geojson};
pub use matching::{match_subsegments, match_subsegments_within, Correspondence, SpatialHash};
pub use paths::{shortest_path_length, shortest_path_lengths_from};
pub use register::{register_diff, register_diff_within, remove_subsegments, Registration};
pub use slice::{slice_edges, SlicedGraph, SubSegment};

/// Coordinate frame tag carried by graphs and vector layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Pixels,
    Meters,
    Degrees,
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::Pixels => "pixels",
            Units::Meters => "meters",
            Units::Degrees => "degrees",
        })
    }
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixels" => Ok(Units::Pixels),
            "meters" => Ok(Units::Meters),
            "degrees" => Ok(Units::Degrees),
            other => Err(Error::invalid(format!("unknown units {other:?}"))),
        }
    }
}

pub(crate) fn check_units(a: Units, b: Units) -> Result<()> {
    if a != b {
        return Err(Error::UnitsMismatch(a.to_string(), b.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Starts at node `a` and ends at node `b`.
    pub geometry: Vec<Point>,
    /// Arc length of `geometry`.
    pub length: f64,
}

/// Undirected road network with polyline edge geometry. Node and edge ids are
/// their indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    units: Units,
    nodes: Vec<Point>,
    edges: Vec<Edge>,
}

impl RoadGraph {
    pub fn new(units: Units) -> Self {
        Self {
            units,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, p: Point) -> usize {
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize, geometry: Vec<Point>) -> Result<usize> {
        let (Some(&pa), Some(&pb)) = (self.nodes.get(a), self.nodes.get(b)) else {
            return Err(Error::invalid(format!("edge references unknown node ({a}, {b})")));
        };
        if geometry.len() < 2 {
            return Err(Error::invalid("edge geometry needs at least 2 points"));
        }
        if geometry[0] != pa || geometry[geometry.len() - 1] != pb {
            return Err(Error::invalid(format!(
                "edge geometry does not start at node {a} and end at node {b}"
            )));
        }
        if geometry.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("edge geometry has non-finite coordinates"));
        }
        let length = polyline_length(&geometry);
        if !(length > 0.0) {
            return Err(Error::invalid(format!("edge {a}-{b} has zero length")));
        }
        self.edges.push(Edge {
            a,
            b,
            geometry,
            length,
        });
        Ok(self.edges.len() - 1)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .map(|e| (e.a == node) as usize + (e.b == node) as usize)
            .sum()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Keeps the edges for which `keep` returns true; node ids are unchanged.
    pub fn retain_edges(&self, mut keep: impl FnMut(usize, &Edge) -> bool) -> RoadGraph {
        RoadGraph {
            units: self.units,
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .enumerate()
                .filter(|(i, e)| keep(*i, e))
                .map(|(_, e)| e.clone())
                .collect(),
        }
    }

    /// Drops nodes without incident edges, preserving the order of the rest.
    pub fn without_isolated_nodes(&self) -> RoadGraph {
        let mut used = vec![false; self.nodes.len()];
        for e in &self.edges {
            used[e.a] = true;
            used[e.b] = true;
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, &p) in self.nodes.iter().enumerate() {
            if used[i] {
                remap[i] = nodes.len();
                nodes.push(p);
            }
        }
        RoadGraph {
            units: self.units,
            nodes,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    a: remap[e.a],
                    b: remap[e.b],
                    ..e.clone()
                })
                .collect(),
        }
    }

    /// Maps every coordinate through `f` and retags the graph with `units`.
    pub fn map_coords(&self, units: Units, mut f: impl FnMut(Point) -> Point) -> Result<RoadGraph> {
        let mut out = RoadGraph::new(units);
        for &p in &self.nodes {
            out.add_node(f(p));
        }
        for e in &self.edges {
            let mut geometry: Vec<Point> = e.geometry.iter().map(|&p| f(p)).collect();
            // Keep endpoints bit-identical to the mapped node coordinates.
            let last = geometry.len() - 1;
            geometry[0] = out.nodes[e.a];
            geometry[last] = out.nodes[e.b];
            out.add_edge(e.a, e.b, geometry)?;
        }
        Ok(out)
    }

    /// Builds a graph from polylines such as OSM ways. Nodes are created at
    /// polyline endpoints and at vertices shared by several polylines (equal
    /// coordinates); polylines are split at those nodes.
    pub fn from_polylines(units: Units, polylines: &[Vec<Point>]) -> Result<RoadGraph> {
        let key = |p: Point| (p.x.to_bits(), p.y.to_bits());
        let mut uses: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        for line in polylines {
            if line.len() < 2 {
                return Err(Error::invalid("polyline needs at least 2 points"));
            }
            let mut seen = std::collections::HashSet::new();
            for (i, &p) in line.iter().enumerate() {
                let endpoint = i == 0 || i == line.len() - 1;
                let count = uses.entry(key(p)).or_default();
                if endpoint {
                    *count += 2;
                } else if seen.insert(key(p)) {
                    *count += 1;
                } else {
                    // Self-intersection at a vertex.
                    *count += 2;
                }
            }
        }
        let mut g = RoadGraph::new(units);
        let mut node_of: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        let mut node_for = |g: &mut RoadGraph, p: Point| {
            *node_of.entry(key(p)).or_insert_with(|| g.add_node(p))
        };
        for line in polylines {
            let mut start = 0;
            for i in 1..line.len() {
                let is_node = i == line.len() - 1 || uses[&key(line[i])] >= 2;
                if !is_node {
                    continue;
                }
                let piece: Vec<Point> = line[start..=i].to_vec();
                start = i;
                let a = node_for(&mut g, piece[0]);
                let b = node_for(&mut g, piece[piece.len() - 1]);
                if polyline_length(&piece) > 0.0 {
                    g.add_edge(a, b, piece)?;
                }
            }
        }
        Ok(g.without_isolated_nodes())
    }
}

use std::collections::HashMap;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};

use crate::error::{Error, Result};

use super::RoadGraph;

fn to_petgraph(g: &RoadGraph) -> UnGraph<(), f64> {
    let mut pg = UnGraph::with_capacity(g.node_count(), g.edge_count());
    for _ in g.nodes() {
        pg.add_node(());
    }
    for e in g.edges() {
        pg.add_edge(NodeIndex::new(e.a), NodeIndex::new(e.b), e.length);
    }
    pg
}

/// Shortest path length from `src` to every reachable node, keyed by node id.
pub fn shortest_path_lengths_from(g: &RoadGraph, src: usize) -> Result<HashMap<usize, f64>> {
    if src >= g.node_count() {
        return Err(Error::invalid(format!("unknown node id {src}")));
    }
    let pg = to_petgraph(g);
    Ok(dijkstra(&pg, NodeIndex::new(src), None, |e| *e.weight())
        .into_iter()
        .map(|(n, d)| (n.index(), d))
        .collect())
}

/// Length of the shortest path between two nodes, `None` if unreachable.
pub fn shortest_path_length(g: &RoadGraph, src: usize, dst: usize) -> Result<Option<f64>> {
    if dst >= g.node_count() {
        return Err(Error::invalid(format!("unknown node id {dst}")));
    }
    let pg = to_petgraph(g);
    if src >= g.node_count() {
        return Err(Error::invalid(format!("unknown node id {src}")));
    }
    let dist = dijkstra(&pg, NodeIndex::new(src), Some(NodeIndex::new(dst)), |e| *e.weight());
    Ok(dist.get(&NodeIndex::new(dst)).copied())
}

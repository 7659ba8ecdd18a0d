use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::Point;

use super::{check_units, SlicedGraph, SubSegment};

/// Uniform grid bucketing items by the cells of their reference points.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell_size: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        Self {
            cell_size,
            cells: HashMap::new(),
        }
    }

    fn cell(&self, p: Point) -> (i64, i64) {
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
        )
    }

    pub fn insert(&mut self, p: Point, item: usize) {
        let c = self.cell(p);
        self.cells.entry(c).or_default().push(item);
    }

    /// Items whose reference point may lie within `radius` of `p`, sorted and
    /// de-duplicated. May include items further away.
    pub fn query(&self, p: Point, radius: f64) -> Vec<usize> {
        let reach = (radius / self.cell_size).ceil() as i64;
        let (cx, cy) = self.cell(p);
        let mut out = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if let Some(items) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(items);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// One-to-one pairing between the sub-segments of two sliced graphs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondence {
    /// `(index into a, index into b)`, sorted by the `a` index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl Correspondence {
    pub fn matched_a(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }
}

/// Larger of the two vertex distances under the better of the two pairings.
fn vertex_distance(a: &SubSegment, b: &SubSegment) -> f64 {
    let same = a.v1.distance(b.v1).max(a.v2.distance(b.v2));
    let swapped = a.v1.distance(b.v2).max(a.v2.distance(b.v1));
    same.min(swapped)
}

/// Matches sub-segments whose vertices lie within half the slice length of
/// each other.
pub fn match_subsegments(a: &SlicedGraph, b: &SlicedGraph) -> Result<Correspondence> {
    match_subsegments_within(a, b, a.slice_length / 2.0)
}

/// Matches with an explicit radius. Pairs closer than `radius` are admitted;
/// conflicts resolve greedily by increasing distance, then by lower indices.
pub fn match_subsegments_within(a: &SlicedGraph, b: &SlicedGraph, radius: f64) -> Result<Correspondence> {
    if a.slice_length != b.slice_length {
        return Err(Error::invalid(format!(
            "slice lengths differ: {} vs {}",
            a.slice_length, b.slice_length
        )));
    }
    check_units(a.units, b.units)?;
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("match radius must be > 0, got {radius}")));
    }

    let mut grid = SpatialHash::new(a.slice_length.max(radius));
    for (j, s) in b.sub_segments.iter().enumerate() {
        grid.insert(s.v1, j);
        grid.insert(s.v2, j);
    }

    let mut candidates = Vec::new();
    for (i, sa) in a.sub_segments.iter().enumerate() {
        for j in grid.query(sa.v1, radius) {
            let d = vertex_distance(sa, &b.sub_segments[j]);
            if d < radius {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    let unmatched = |used: &[bool]| (0..used.len()).filter(|&k| !used[k]).collect();
    Ok(Correspondence {
        pairs,
        unmatched_a: unmatched(&used_a),
        unmatched_b: unmatched(&used_b),
    })
}

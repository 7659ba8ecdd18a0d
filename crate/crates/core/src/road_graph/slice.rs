use std::ops::Range;

use crate::error::{Error, Result};
use crate::geom::{polyline_length, Point};

use super::{RoadGraph, Units};

/// A piece of an edge of at most the slice length, measured along the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSegment {
    pub parent_edge: usize,
    /// Position of this piece along its parent edge, starting at 0.
    pub index_in_edge: usize,
    pub v1: Point,
    pub v2: Point,
    pub length: f64,
    /// Arc-length offset of `v1` from the start of the parent edge.
    pub start_offset: f64,
    /// Geometry of the piece, from `v1` to `v2`.
    pub path: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedGraph {
    pub slice_length: f64,
    pub units: Units,
    pub sub_segments: Vec<SubSegment>,
    /// `edge_ranges[e]` indexes the sub-segments of edge `e`, in order.
    pub edge_ranges: Vec<Range<usize>>,
}

impl SlicedGraph {
    pub fn len(&self) -> usize {
        self.sub_segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_segments.is_empty()
    }
}

/// Number of pieces for an edge of length `length`; tolerates rounding so an
/// exact multiple of `l` does not produce a sliver.
pub(crate) fn piece_count(length: f64, l: f64) -> usize {
    let q = length / l;
    ((q - 1e-9 * q.max(1.0)).ceil() as usize).max(1)
}

fn point_at(line: &[Point], cumulative: &[f64], offset: f64) -> Point {
    let i = cumulative
        .partition_point(|&c| c <= offset)
        .clamp(1, line.len() - 1);
    let seg = cumulative[i] - cumulative[i - 1];
    if seg == 0.0 {
        return line[i];
    }
    line[i - 1].lerp(line[i], ((offset - cumulative[i - 1]) / seg).clamp(0.0, 1.0))
}

/// Cuts `line` at the given increasing arc-length offsets.
pub(crate) fn split_polyline(line: &[Point], cuts: &[f64]) -> Vec<Vec<Point>> {
    let mut cumulative = Vec::with_capacity(line.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in line.windows(2) {
        acc += w[0].distance(w[1]);
        cumulative.push(acc);
    }
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(None);
    bounds.extend(cuts.iter().map(|&c| Some(c)));
    bounds.push(None);

    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    for (k, w) in bounds.windows(2).enumerate() {
        let (lo, hi) = (w[0].unwrap_or(0.0), w[1].unwrap_or(acc));
        let start = if k == 0 { line[0] } else { point_at(line, &cumulative, lo) };
        let end = match w[1] {
            None => line[line.len() - 1],
            Some(c) => point_at(line, &cumulative, c),
        };
        let mut piece = vec![start];
        for (i, &c) in cumulative.iter().enumerate() {
            if c > lo && c < hi && line[i] != *piece.last().unwrap() {
                piece.push(line[i]);
            }
        }
        if end != *piece.last().unwrap() || piece.len() == 1 {
            piece.push(end);
        }
        pieces.push(piece);
    }
    pieces
}

/// Slices every edge into `ceil(L / l)` consecutive pieces; all but the last
/// have arc length `l`.
pub fn slice_edges(g: &RoadGraph, l: f64) -> Result<SlicedGraph> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::invalid(format!("slice length must be > 0, got {l}")));
    }
    let mut sub_segments = Vec::new();
    let mut edge_ranges = Vec::with_capacity(g.edge_count());
    for (ei, e) in g.edges().iter().enumerate() {
        let n = piece_count(e.length, l);
        let cuts: Vec<f64> = (1..n).map(|k| k as f64 * l).collect();
        let first = sub_segments.len();
        for (k, path) in split_polyline(&e.geometry, &cuts).into_iter().enumerate() {
            sub_segments.push(SubSegment {
                parent_edge: ei,
                index_in_edge: k,
                v1: path[0],
                v2: path[path.len() - 1],
                length: polyline_length(&path),
                start_offset: k as f64 * l,
                path,
            });
        }
        edge_ranges.push(first..sub_segments.len());
    }
    Ok(SlicedGraph {
        slice_length: l,
        units: g.units(),
        sub_segments,
        edge_ranges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_graph(points: &[(f64, f64)]) -> RoadGraph {
        let pts: Vec<Point> = points.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let mut g = RoadGraph::new(Units::Meters);
        let a = g.add_node(pts[0]);
        let b = g.add_node(pts[pts.len() - 1]);
        g.add_edge(a, b, pts).unwrap();
        g
    }

    #[test]
    fn exact_multiple() {
        let g = line_graph(&[(0.0, 0.0), (6.0, 0.0)]);
        let s = slice_edges(&g, 3.0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.sub_segments.iter().all(|p| p.length == 3.0));
    }

    #[test]
    fn remainder_piece() {
        let g = line_graph(&[(0.0, 0.0), (4.0, 0.0), (4.0, 6.0)]);
        let s = slice_edges(&g, 3.0).unwrap();
        let lengths: Vec<f64> = s.sub_segments.iter().map(|p| p.length).collect();
        assert_eq!(lengths.len(), 4);
        for (got, want) in lengths.iter().zip([3.0, 3.0, 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{lengths:?}");
        }
        // The second piece turns the corner.
        assert_eq!(s.sub_segments[1].path, vec![
            Point::new(3.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(4.0, 2.0)
        ]);
    }

    #[test]
    fn short_edge_single_piece() {
        let g = line_graph(&[(0.0, 0.0), (1.0, 1.0)]);
        let s = slice_edges(&g, 5.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.sub_segments[0].path, g.edges()[0].geometry);
    }

    #[test]
    fn rejects_bad_length() {
        let g = line_graph(&[(0.0, 0.0), (1.0, 1.0)]);
        assert!(slice_edges(&g, 0.0).is_err());
        assert!(slice_edges(&g, -2.0).is_err());
        assert!(slice_edges(&g, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn pieces_concatenate_to_edge(
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..12),
            l in 0.5f64..40.0,
        ) {
            let g = line_graph(&pts);
            let e = &g.edges()[0];
            let s = slice_edges(&g, l).unwrap();
            prop_assert_eq!(s.len(), (e.length / l).ceil() as usize);
            let total: f64 = s.sub_segments.iter().map(|p| p.length).sum();
            prop_assert!((total - e.length).abs() <= 1e-9 * e.length);
            prop_assert_eq!(s.sub_segments[0].v1, e.geometry[0]);
            prop_assert_eq!(s.sub_segments.last().unwrap().v2, *e.geometry.last().unwrap());
            for w in s.sub_segments.windows(2) {
                prop_assert_eq!(w[0].v2, w[1].v1);
            }
            for p in &s.sub_segments {
                prop_assert!(p.length <= l * (1.0 + 1e-9));
            }
        }
    }
}

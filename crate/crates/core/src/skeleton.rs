//! Skeletonization of binary road masks and tracing of the skeleton into a
//! pixel-space [`RoadGraph`].
//!
//! Thinning is a Zhang-Suen two-subiteration scheme. Candidates for each
//! subiteration are found on a snapshot and then deleted in raster order,
//! re-checking that each deletion still leaves a single neighbour run, which
//! keeps 2x2 blocks and two-pixel diagonals from vanishing. A staircase pass
//! removes the remaining simple corner pixels so that the result is a
//! one-pixel-wide 8-connected set.

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Point};
use crate::raster::BinaryMask;
use crate::road_graph::{RoadGraph, Units};

/// Neighbour offsets in ring order N, NE, E, SE, S, SW, W, NW.
const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

const N: usize = 0;
const E: usize = 2;
const S: usize = 4;
const W: usize = 6;

fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let mut out = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        out[k] = mask.get_signed(x as i64 + dx, y as i64 + dy);
    }
    out
}

/// Number of 0 -> 1 transitions walking once around the ring.
fn transitions(r: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !r[k] && r[(k + 1) % 8]).count()
}

fn neighbours(r: &[bool; 8]) -> usize {
    r.iter().filter(|&&b| b).count()
}

/// Yokoi 8-connectivity number; a pixel is 8-simple iff this is 1.
fn connectivity_number(r: &[bool; 8]) -> usize {
    // Yokoi's ring starts at E and runs counter-clockwise.
    let order = [E, 1, N, 7, W, 5, S, 3];
    let c = |k: usize| !r[order[k % 8]] as i32;
    let mut sum = 0;
    for k in [0, 2, 4, 6] {
        sum += c(k) - c(k) * c(k + 1) * c(k + 2);
    }
    sum.max(0) as usize
}

fn zs_candidate(r: &[bool; 8], first: bool) -> bool {
    let b = neighbours(r);
    if !(2..=6).contains(&b) || transitions(r) != 1 {
        return false;
    }
    let (n, e, s, w) = (r[N], r[E], r[S], r[W]);
    if first {
        !(n && e && s) && !(e && s && w)
    } else {
        !(n && e && w) && !(n && s && w)
    }
}

fn zs_subiteration(mask: &mut BinaryMask, first: bool) -> bool {
    let (w, h) = mask.dims();
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) && zs_candidate(&ring(mask, x, y), first) {
                candidates.push((x, y));
            }
        }
    }
    let mut changed = false;
    for (x, y) in candidates {
        let r = ring(mask, x, y);
        if (2..=6).contains(&neighbours(&r)) && transitions(&r) == 1 {
            mask.set(x, y, false);
            changed = true;
        }
    }
    changed
}

fn staircase_pass(mask: &mut BinaryMask) -> bool {
    let (w, h) = mask.dims();
    let mut changed = false;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let r = ring(mask, x, y);
            let corner = (r[N] && r[E]) || (r[E] && r[S]) || (r[S] && r[W]) || (r[W] && r[N]);
            if corner && connectivity_number(&r) == 1 {
                mask.set(x, y, false);
                changed = true;
            }
        }
    }
    changed
}

/// A binary mask whose positives form a one-pixel-wide skeleton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton(BinaryMask);

impl Skeleton {
    /// Accepts `mask` only if thinning leaves it unchanged.
    pub fn new(mask: BinaryMask) -> Result<Self> {
        let thinned = thin(&mask);
        if thinned.0 != mask {
            return Err(Error::invalid(
                "mask is not a skeleton: thinning would remove pixels",
            ));
        }
        Ok(thinned)
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn into_mask(self) -> BinaryMask {
        self.0
    }
}

/// Thins `mask` to a one-pixel-wide 8-connected skeleton.
pub fn thin(mask: &BinaryMask) -> Skeleton {
    let mut m = mask.clone();
    loop {
        loop {
            let first = zs_subiteration(&mut m, true);
            let second = zs_subiteration(&mut m, false);
            if !(first || second) {
                break;
            }
        }
        // Only run on an already thin set; on thick regions it would peel rows.
        if !staircase_pass(&mut m) {
            return Skeleton(m);
        }
    }
}

/// Ordered pixels of one traced edge, from one node pixel to another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelChain {
    pub start_node: usize,
    pub end_node: usize,
    /// Includes both node pixels.
    pub pixels: Vec<(usize, usize)>,
}

impl PixelChain {
    pub fn interior(&self) -> &[(usize, usize)] {
        &self.pixels[1..self.pixels.len() - 1]
    }
}

/// Nodes and chains of a traced skeleton, before conversion to a graph.
#[derive(Debug, Clone, Default)]
pub struct SkeletonTrace {
    /// Node pixels sorted in row-major order.
    pub nodes: Vec<(usize, usize)>,
    pub chains: Vec<PixelChain>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PixelKind {
    Background,
    Chain,
    Node,
}

struct Tracer<'a> {
    mask: &'a BinaryMask,
    node_id: Vec<Option<usize>>,
    visited: Vec<bool>,
    nodes: Vec<(usize, usize)>,
    chains: Vec<PixelChain>,
}

enum Step {
    Node((usize, usize)),
    Pixel((usize, usize)),
    DeadEnd,
}

impl<'a> Tracer<'a> {
    fn idx(&self, p: (usize, usize)) -> usize {
        p.1 * self.mask.width() + p.0
    }

    fn kind(&self, p: (usize, usize)) -> PixelKind {
        if !self.mask.get(p.0, p.1) {
            PixelKind::Background
        } else if self.node_id[self.idx(p)].is_some() {
            PixelKind::Node
        } else {
            PixelKind::Chain
        }
    }

    fn add_node(&mut self, p: (usize, usize)) -> usize {
        let id = self.nodes.len();
        let i = self.idx(p);
        self.node_id[i] = Some(id);
        self.nodes.push(p);
        id
    }

    fn neighbour(&self, p: (usize, usize), k: usize) -> Option<(usize, usize)> {
        let (dx, dy) = RING[k];
        let (x, y) = (p.0 as i64 + dx, p.1 as i64 + dy);
        self.mask
            .get_signed(x, y)
            .then_some((x as usize, y as usize))
    }

    /// Next pixel after `cur` when arriving from `prev`. Pixels in the same
    /// neighbour run as `prev` are skipped so the walk does not fold back.
    fn step(&self, prev: (usize, usize), cur: (usize, usize), start: (usize, usize), len: usize) -> Step {
        let r = ring(self.mask, cur.0, cur.1);
        let prev_k = (0..8)
            .find(|&k| self.neighbour(cur, k) == Some(prev))
            .expect("walk always moves between 8-neighbours");
        let mut blocked = [false; 8];
        blocked[prev_k] = true;
        for dir in [1usize, 7] {
            let mut k = (prev_k + dir) % 8;
            while r[k] && k != prev_k {
                blocked[k] = true;
                k = (k + dir) % 8;
            }
        }
        let mut best: Option<((usize, usize), u8)> = None;
        for k in 0..8 {
            if blocked[k] {
                continue;
            }
            let Some(q) = self.neighbour(cur, k) else {
                continue;
            };
            // Returning to the start node right away would make a zero-area loop.
            if q == start && len < 3 {
                continue;
            }
            let rank = match self.kind(q) {
                PixelKind::Node => 0,
                PixelKind::Chain if !self.visited[self.idx(q)] => {
                    if k % 2 == 0 {
                        1
                    } else {
                        2
                    }
                }
                _ => continue,
            };
            if best.is_none_or(|(_, r)| rank < r) {
                best = Some((q, rank));
            }
        }
        match best {
            Some((q, 0)) => Step::Node(q),
            Some((q, _)) => Step::Pixel(q),
            None => Step::DeadEnd,
        }
    }

    fn trace_from(&mut self, start_id: usize, first: (usize, usize)) {
        let start = self.nodes[start_id];
        let first_idx = self.idx(first);
        self.visited[first_idx] = true;
        let mut pixels = vec![start, first];
        let (mut prev, mut cur) = (start, first);
        let end_id = loop {
            match self.step(prev, cur, start, pixels.len()) {
                Step::Node(q) => {
                    pixels.push(q);
                    break self.node_id[self.idx(q)].expect("node pixel has an id");
                }
                Step::Pixel(q) => {
                    let qi = self.idx(q);
                    self.visited[qi] = true;
                    pixels.push(q);
                    prev = cur;
                    cur = q;
                }
                Step::DeadEnd => {
                    // Promote the last pixel so the chain ends on a node.
                    let ci = self.idx(cur);
                    self.visited[ci] = false;
                    break self.add_node(cur);
                }
            }
        };
        self.chains.push(PixelChain {
            start_node: start_id,
            end_node: end_id,
            pixels,
        });
    }

    fn expand_node(&mut self, id: usize) {
        let p = self.nodes[id];
        for k in 0..8 {
            let Some(q) = self.neighbour(p, k) else {
                continue;
            };
            match self.kind(q) {
                PixelKind::Node => {
                    let qid = self.node_id[self.idx(q)].expect("node pixel has an id");
                    if id < qid {
                        self.chains.push(PixelChain {
                            start_node: id,
                            end_node: qid,
                            pixels: vec![p, q],
                        });
                    }
                }
                PixelKind::Chain if !self.visited[self.idx(q)] => self.trace_from(id, q),
                _ => {}
            }
        }
    }
}

/// Classifies skeleton pixels into nodes and traces every chain between them.
///
/// Nodes are junctions (three or more neighbour runs), endpoints (a single
/// neighbour run), isolated pixels, and one anchor per pure cycle.
pub fn trace_skeleton(skel: &Skeleton) -> SkeletonTrace {
    let mask = skel.mask();
    let (w, h) = mask.dims();
    let mut tracer = Tracer {
        mask,
        node_id: vec![None; w * h],
        visited: vec![false; w * h],
        nodes: Vec::new(),
        chains: Vec::new(),
    };
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let r = ring(mask, x, y);
            let t = transitions(&r);
            if neighbours(&r) == 0 || t != 2 {
                tracer.add_node((x, y));
            }
        }
    }
    let mut next = 0;
    let mut scan = 0;
    loop {
        while next < tracer.nodes.len() {
            tracer.expand_node(next);
            next += 1;
        }
        // Leftover chain pixels belong to pure cycles; anchor each at its first pixel.
        while scan < w * h && !(mask.bits()[scan] != 0 && tracer.node_id[scan].is_none() && !tracer.visited[scan]) {
            scan += 1;
        }
        if scan == w * h {
            break;
        }
        tracer.add_node((scan % w, scan / w));
    }

    // Renumber nodes in row-major pixel order.
    let mut order: Vec<usize> = (0..tracer.nodes.len()).collect();
    order.sort_by_key(|&i| (tracer.nodes[i].1, tracer.nodes[i].0));
    let mut remap = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let nodes = order.iter().map(|&i| tracer.nodes[i]).collect();
    let chains = tracer
        .chains
        .into_iter()
        .map(|c| PixelChain {
            start_node: remap[c.start_node],
            end_node: remap[c.end_node],
            pixels: c.pixels,
        })
        .collect();
    SkeletonTrace { nodes, chains }
}

fn to_point(p: (usize, usize)) -> Point {
    Point::new(p.0 as f64, p.1 as f64)
}

/// Traces `skel` into a graph in pixel coordinates; each chain becomes one
/// edge whose geometry is its pixel polyline.
pub fn extract_graph(skel: &Skeleton) -> RoadGraph {
    let trace = trace_skeleton(skel);
    let mut g = RoadGraph::new(Units::Pixels);
    for &p in &trace.nodes {
        g.add_node(to_point(p));
    }
    for chain in &trace.chains {
        let geometry = chain.pixels.iter().map(|&p| to_point(p)).collect();
        g.add_edge(chain.start_node, chain.end_node, geometry)
            .expect("traced chains connect their node pixels");
    }
    g
}

/// Ramer-Douglas-Peucker simplification. Keeps both endpoints and returns a
/// subsequence of `polyline` with every dropped point within `epsilon` of
/// the simplified line.
pub fn simplify_rdp(polyline: &[Point], epsilon: f64) -> Result<Vec<Point>> {
    if polyline.len() < 2 {
        return Err(Error::invalid("polyline needs at least 2 points"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut keep = vec![false; polyline.len()];
    keep[0] = true;
    keep[polyline.len() - 1] = true;
    let mut stack = vec![(0, polyline.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (polyline[lo], polyline[hi]);
        let (idx, dmax) = (lo + 1..hi)
            .map(|i| (i, point_segment_distance(polyline[i], a, b)))
            .fold((lo, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if dmax > epsilon {
            keep[idx] = true;
            stack.push((lo, idx));
            stack.push((idx, hi));
        }
    }
    Ok(polyline
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&p, _)| p)
        .collect())
}

/// Applies [`simplify_rdp`] to every edge geometry of `g`.
pub fn simplify_graph(g: &RoadGraph, epsilon: f64) -> Result<RoadGraph> {
    let mut out = RoadGraph::new(g.units());
    for &p in g.nodes() {
        out.add_node(p);
    }
    for e in g.edges() {
        let geometry = simplify_rdp(&e.geometry, epsilon)?;
        // A closed loop needs an interior vertex to keep positive length.
        let geometry = if geometry.len() == 2 && geometry[0] == geometry[1] {
            let far = (1..e.geometry.len() - 1)
                .max_by(|&i, &j| {
                    let di = e.geometry[i].distance(e.geometry[0]);
                    let dj = e.geometry[j].distance(e.geometry[0]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .expect("closed loop has interior points");
            vec![geometry[0], e.geometry[far], geometry[1]]
        } else {
            geometry
        };
        out.add_edge(e.a, e.b, geometry)?;
    }
    Ok(out)
}

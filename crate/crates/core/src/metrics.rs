//! Evaluation metrics: pixel IoU and mean IoU, sub-segment precision/recall,
//! and the shortest-path connectivity report.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::{class_mask, BinaryMask, Class, Mask};
use crate::road_graph::{
    check_units, match_subsegments_within, shortest_path_lengths_from, slice_edges, RoadGraph,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        if pred.dims() != truth.dims() {
            let ((lw, lh), (rw, rh)) = (pred.dims(), truth.dims());
            return Err(Error::DimensionMismatch {
                left_width: lw,
                left_height: lh,
                right_width: rw,
                right_height: rh,
            });
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// `tp / (tp + fp + fn)`, or 1 when there are no positives at all.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn pr(&self) -> PrReport {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        PrReport::new(ratio(self.tp, self.tp + self.fp), ratio(self.tp, self.tp + self.fn_))
    }
}

pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, truth)?.iou())
}

/// Mean of the per-class IoU over `classes`, which must be building and/or road.
pub fn mean_iou(pred: &Mask, truth: &Mask, classes: &[Class]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::invalid("mean IoU needs at least one target class"));
    }
    let mut sum = 0.0;
    for &c in classes {
        if c == Class::Background {
            return Err(Error::invalid("background is not a target class"));
        }
        sum += iou(&class_mask(pred, c.code())?, &class_mask(truth, c.code())?)?;
    }
    Ok(sum / classes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl PrReport {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f_score,
        }
    }
}

/// Sub-segment precision/recall with the default radius `l / 2`.
pub fn subsegment_pr(pred: &RoadGraph, truth: &RoadGraph, l: f64) -> Result<PrReport> {
    Ok(subsegment_counts(pred, truth, l, l / 2.0)?.pr())
}

/// Slices both graphs with `l` and counts matched pairs as true positives.
pub fn subsegment_counts(pred: &RoadGraph, truth: &RoadGraph, l: f64, radius: f64) -> Result<ConfusionCounts> {
    check_units(pred.units(), truth.units())?;
    let sp = slice_edges(pred, l)?;
    let st = slice_edges(truth, l)?;
    let c = match_subsegments_within(&sp, &st, radius)?;
    Ok(ConfusionCounts {
        tp: c.pairs.len() as u64,
        fp: c.unmatched_a.len() as u64,
        fn_: c.unmatched_b.len() as u64,
    })
}

/// Precision/recall of a predicted index set against a true index set.
pub fn index_set_pr(predicted: &[usize], truth: &[usize]) -> PrReport {
    let p: BTreeSet<usize> = predicted.iter().copied().collect();
    let t: BTreeSet<usize> = truth.iter().copied().collect();
    let tp = p.intersection(&t).count() as u64;
    ConfusionCounts {
        tp,
        fp: p.len() as u64 - tp,
        fn_: t.len() as u64 - tp,
    }
    .pr()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectivityParams {
    pub n_pairs: usize,
    pub seed: u64,
    pub rel_tol: f64,
    pub snap_radius: f64,
}

/// Percentages of sampled pairs in each category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub correct: f64,
    pub too_long: f64,
    pub too_short: f64,
    pub no_connection: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOutcome {
    Correct,
    TooLong,
    TooShort,
    NoConnection,
}

pub fn classify_path(truth_length: f64, pred_length: Option<f64>, rel_tol: f64) -> PathOutcome {
    match pred_length {
        None => PathOutcome::NoConnection,
        Some(dp) if (dp - truth_length).abs() <= rel_tol * truth_length => PathOutcome::Correct,
        Some(dp) if dp < truth_length => PathOutcome::TooShort,
        Some(_) => PathOutcome::TooLong,
    }
}

fn components(g: &RoadGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in g.edges() {
        let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Nearest node within `radius`, ties to the lower index.
fn snap(g: &RoadGraph, p: Point, radius: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &q) in g.nodes().iter().enumerate() {
        let d = p.distance(q);
        if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Draws `n` node pairs uniformly from all pairs of distinct, connected
/// truth nodes.
pub fn sample_connected_pairs(truth: &RoadGraph, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let comps: Vec<Vec<usize>> = components(truth).into_iter().filter(|c| c.len() >= 2).collect();
    if comps.is_empty() {
        return Err(Error::invalid("truth graph has fewer than 2 connected nodes"));
    }
    let weights: Vec<u64> = comps
        .iter()
        .map(|c| (c.len() as u64) * (c.len() as u64 - 1) / 2)
        .collect();
    let total: u64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut r = rng.gen_range(0..total);
        let mut ci = 0;
        while r >= weights[ci] {
            r -= weights[ci];
            ci += 1;
        }
        let c = &comps[ci];
        let i = rng.gen_range(0..c.len());
        let mut j = rng.gen_range(0..c.len() - 1);
        if j >= i {
            j += 1;
        }
        pairs.push((c[i], c[j]));
    }
    Ok(pairs)
}

struct PathCache<'a> {
    g: &'a RoadGraph,
    from: HashMap<usize, HashMap<usize, f64>>,
}

impl<'a> PathCache<'a> {
    fn new(g: &'a RoadGraph) -> Self {
        Self { g, from: HashMap::new() }
    }

    fn length(&mut self, src: usize, dst: usize) -> Result<Option<f64>> {
        if !self.from.contains_key(&src) {
            let d = shortest_path_lengths_from(self.g, src)?;
            self.from.insert(src, d);
        }
        Ok(self.from[&src].get(&dst).copied())
    }
}

/// Compares shortest-path lengths between seeded random truth node pairs and
/// their snapped counterparts in `pred`.
pub fn connectivity(pred: &RoadGraph, truth: &RoadGraph, params: ConnectivityParams) -> Result<ConnectivityReport> {
    if params.n_pairs == 0 {
        return Err(Error::invalid("connectivity needs at least one pair"));
    }
    if !(params.rel_tol > 0.0 && params.rel_tol < 1.0) {
        return Err(Error::invalid(format!("rel_tol must be in (0, 1), got {}", params.rel_tol)));
    }
    if !(params.snap_radius >= 0.0) {
        return Err(Error::invalid("snap radius must be >= 0"));
    }
    check_units(pred.units(), truth.units())?;
    let pairs = sample_connected_pairs(truth, params.n_pairs, params.seed)?;
    let mut truth_paths = PathCache::new(truth);
    let mut pred_paths = PathCache::new(pred);
    let mut counts = [0usize; 4];
    for (s, t) in pairs {
        let dt = truth_paths
            .length(s, t)?
            .ok_or_else(|| Error::Invariant("sampled truth pair is not connected".into()))?;
        let dp = match (
            snap(pred, truth.nodes()[s], params.snap_radius),
            snap(pred, truth.nodes()[t], params.snap_radius),
        ) {
            (Some(ps), Some(pt)) => pred_paths.length(ps, pt)?,
            _ => None,
        };
        let slot = match classify_path(dt, dp, params.rel_tol) {
            PathOutcome::Correct => 0,
            PathOutcome::TooLong => 1,
            PathOutcome::TooShort => 2,
            PathOutcome::NoConnection => 3,
        };
        counts[slot] += 1;
    }
    let pct = |k: usize| 100.0 * counts[k] as f64 / params.n_pairs as f64;
    Ok(ConnectivityReport {
        correct: pct(0),
        too_long: pct(1),
        too_short: pct(2),
        no_connection: pct(3),
    })
}

/// Flat `key=value` lines.
pub trait KeyValue {
    fn key_values(&self) -> Vec<(&'static str, f64)>;

    fn to_text(&self) -> String {
        self.key_values()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

impl KeyValue for PrReport {
    fn key_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("precision", self.precision),
            ("recall", self.recall),
            ("f_score", self.f_score),
        ]
    }
}

impl KeyValue for ConnectivityReport {
    fn key_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("correct", self.correct),
            ("too_long", self.too_long),
            ("too_short", self.too_short),
            ("no_connection", self.no_connection),
        ]
    }
}

impl fmt::Display for PrReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl fmt::Display for ConnectivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

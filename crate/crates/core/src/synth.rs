//! Seeded synthetic disaster scenarios: a perturbed-grid road network with
//! rectangular buildings, rasterized pre/post masks with damaged sub-segments
//! and buildings removed, and optional random gaps in the post mask.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo_io::{
    fill_polygon_pixels, layer_to_geojson, rasterize, stroke_polyline_pixels, write_raster, Building,
    GeoTransform, RasterizeOptions, Road, VectorLayer,
};
use crate::geom::Point;
use crate::raster::{BinaryMask, Class, Mask};
use crate::road_graph::{graph_to_geojson, remove_subsegments, slice_edges, RoadGraph, SlicedGraph, Units};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    /// Side of the square scene in pixels.
    pub extent: usize,
    /// Number of roads per axis.
    pub road_density: usize,
    pub building_count: usize,
    pub slice_length: f64,
    /// Road stroke radius in meters.
    pub road_buffer: f64,
    /// Meters per pixel.
    pub gsd: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            extent: 512,
            road_density: 4,
            building_count: 40,
            slice_length: 40.0,
            road_buffer: 2.0,
            gsd: 0.5,
        }
    }
}

impl ScenarioParams {
    fn road_radius(&self) -> f64 {
        self.road_buffer / self.gsd
    }
}

/// A generated scene in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ScenarioParams,
    pub seed: u64,
    pub truth_graph: RoadGraph,
    /// Closed rectangular rings.
    pub buildings: Vec<Vec<Point>>,
    /// Indices into `slice_edges(truth_graph, slice_length)`, sorted.
    pub damaged_subsegments: Vec<usize>,
    /// Indices into `buildings`, sorted.
    pub damaged_buildings: Vec<usize>,
}

const BORDER: f64 = 8.0;
const BUILDING_CLEARANCE: usize = 3;
const PLACEMENT_ATTEMPTS: usize = 200;

fn perturbed_grid(rng: &mut ChaCha8Rng, extent: f64, n: usize) -> Result<RoadGraph> {
    let mut g = RoadGraph::new(Units::Pixels);
    if n == 0 {
        return Ok(g);
    }
    let spacing = (extent - 2.0 * BORDER) / (n as f64 + 1.0);
    let jitter = spacing / 6.0;
    let jit = |rng: &mut ChaCha8Rng| rng.gen_range(-jitter..=jitter);
    let pos = |i: usize| BORDER + spacing * (i as f64 + 1.0);
    let last = extent - 1.0 - BORDER;

    // ids[r][c] over an (n + 2) x (n + 2) lattice; corners stay unused.
    let mut ids = vec![vec![usize::MAX; n + 2]; n + 2];
    for (r, row) in ids.iter_mut().enumerate() {
        for (c, id) in row.iter_mut().enumerate() {
            let edge_r = r == 0 || r == n + 1;
            let edge_c = c == 0 || c == n + 1;
            if edge_r && edge_c {
                continue;
            }
            let x = match c {
                0 => BORDER,
                c if c == n + 1 => last,
                c => pos(c - 1) + jit(rng),
            };
            let y = match r {
                0 => BORDER,
                r if r == n + 1 => last,
                r => pos(r - 1) + jit(rng),
            };
            *id = g.add_node(Point::new(x, y));
        }
    }
    for r in 0..n + 2 {
        for c in 0..n + 2 {
            let a = ids[r][c];
            if a == usize::MAX {
                continue;
            }
            let interior_row = (1..=n).contains(&r);
            let interior_col = (1..=n).contains(&c);
            if interior_row && c + 1 < n + 2 {
                let b = ids[r][c + 1];
                let (pa, pb) = (g.nodes()[a], g.nodes()[b]);
                g.add_edge(a, b, vec![pa, pb])?;
            }
            if interior_col && r + 1 < n + 2 {
                let b = ids[r + 1][c];
                let (pa, pb) = (g.nodes()[a], g.nodes()[b]);
                g.add_edge(a, b, vec![pa, pb])?;
            }
        }
    }
    Ok(g)
}

fn rectangle(x0: f64, y0: f64, w: f64, h: f64) -> Vec<Point> {
    vec![
        Point::new(x0, y0),
        Point::new(x0 + w, y0),
        Point::new(x0 + w, y0 + h),
        Point::new(x0, y0 + h),
        Point::new(x0, y0),
    ]
}

fn rect_pixels(ring: &[Point], extent: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    fill_polygon_pixels(&[ring.to_vec()], extent, extent, |x, y| px.push((x, y)));
    px
}

fn mark_around(blocked: &mut BinaryMask, pixels: &[(usize, usize)], margin: usize) {
    let (w, h) = blocked.dims();
    for &(x, y) in pixels {
        for yy in y.saturating_sub(margin)..(y + margin + 1).min(h) {
            for xx in x.saturating_sub(margin)..(x + margin + 1).min(w) {
                blocked.set(xx, yy, true);
            }
        }
    }
}

/// Builds a seeded scene. The road network is connected whenever
/// `road_density >= 1`.
pub fn generate(seed: u64, params: ScenarioParams) -> Result<Scenario> {
    if params.extent < 64 {
        return Err(Error::invalid(format!("extent must be >= 64 px, got {}", params.extent)));
    }
    if !(params.slice_length > 0.0) || !(params.gsd > 0.0) || !(params.road_buffer >= 0.0) {
        return Err(Error::invalid("slice length and gsd must be > 0, road buffer >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = params.extent;
    let truth_graph = perturbed_grid(&mut rng, extent as f64, params.road_density)?;

    let mut blocked = BinaryMask::zeros(extent, extent)?;
    let mut road_px = Vec::new();
    for e in truth_graph.edges() {
        stroke_polyline_pixels(&e.geometry, params.road_radius(), extent, extent, |x, y| road_px.push((x, y)));
    }
    mark_around(&mut blocked, &road_px, BUILDING_CLEARANCE);

    let mut buildings = Vec::with_capacity(params.building_count);
    let mut attempts = 0;
    while buildings.len() < params.building_count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS * params.building_count.max(1) {
            return Err(Error::Generation(format!(
                "placed only {} of {} buildings",
                buildings.len(),
                params.building_count
            )));
        }
        let w = rng.gen_range(8..=20) as f64;
        let h = rng.gen_range(8..=20) as f64;
        let x0 = rng.gen_range(2..extent - 2 - w as usize) as f64;
        let y0 = rng.gen_range(2..extent - 2 - h as usize) as f64;
        let ring = rectangle(x0, y0, w, h);
        let px = rect_pixels(&ring, extent);
        if px.iter().any(|&(x, y)| blocked.get(x, y)) {
            continue;
        }
        mark_around(&mut blocked, &px, BUILDING_CLEARANCE);
        buildings.push(ring);
    }

    Ok(Scenario {
        params,
        seed,
        truth_graph,
        buildings,
        damaged_subsegments: Vec::new(),
        damaged_buildings: Vec::new(),
    })
}

impl Scenario {
    pub fn sliced(&self) -> Result<SlicedGraph> {
        slice_edges(&self.truth_graph, self.params.slice_length)
    }

    /// Roads (tagged residential) and buildings as a vector layer.
    pub fn layer(&self) -> VectorLayer {
        VectorLayer {
            units: Units::Pixels,
            roads: self
                .truth_graph
                .edges()
                .iter()
                .map(|e| Road {
                    highway: "residential".into(),
                    points: e.geometry.clone(),
                })
                .collect(),
            buildings: self
                .buildings
                .iter()
                .map(|r| Building {
                    building: "yes".into(),
                    rings: vec![r.clone()],
                })
                .collect(),
        }
    }

    fn raster_options(&self) -> RasterizeOptions {
        RasterizeOptions {
            width: self.params.extent,
            height: self.params.extent,
            road_buffer: self.params.road_buffer,
            gsd: self.params.gsd,
        }
    }

    pub fn pre_mask(&self) -> Result<Mask> {
        Ok(rasterize(&self.layer(), &GeoTransform::identity(), self.raster_options())?.mask)
    }

    /// Truth graph with the damaged sub-segments removed.
    pub fn post_truth_graph(&self) -> Result<RoadGraph> {
        remove_subsegments(&self.truth_graph, &self.sliced()?, &self.damaged_subsegments)
    }

    /// Pre mask with the damaged geometry cleared: road pixels within the
    /// stroke radius of a damaged sub-segment and pixels of damaged buildings.
    pub fn post_mask(&self) -> Result<Mask> {
        let mut post = self.pre_mask()?;
        let n = self.params.extent;
        let sliced = self.sliced()?;
        for &i in &self.damaged_subsegments {
            stroke_polyline_pixels(&sliced.sub_segments[i].path, self.params.road_radius(), n, n, |x, y| {
                if post.get(x, y) == Class::Road {
                    post.set(x, y, Class::Background);
                }
            });
        }
        for &b in &self.damaged_buildings {
            fill_polygon_pixels(&[self.buildings[b].clone()], n, n, |x, y| {
                if post.get(x, y) == Class::Building {
                    post.set(x, y, Class::Background);
                }
            });
        }
        Ok(post)
    }
}

/// Marks `round(fraction * n)` sub-segments and the same share of buildings
/// as damaged and returns the pre and post masks. Full-length sub-segments
/// are preferred over shorter edge remainders.
pub fn apply_damage(s: &mut Scenario, fraction: f64, seed: u64) -> Result<(Mask, Mask)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("damage fraction must be in [0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sliced = s.sliced()?;
    let l = s.params.slice_length;
    let (mut full, mut short): (Vec<usize>, Vec<usize>) =
        (0..sliced.len()).partition(|&i| sliced.sub_segments[i].length >= l * (1.0 - 1e-9));
    full.shuffle(&mut rng);
    short.shuffle(&mut rng);
    let n_seg = (fraction * sliced.len() as f64).round() as usize;
    let mut damaged: Vec<usize> = full.into_iter().chain(short).take(n_seg).collect();
    damaged.sort_unstable();

    let mut order: Vec<usize> = (0..s.buildings.len()).collect();
    order.shuffle(&mut rng);
    let n_b = (fraction * s.buildings.len() as f64).round() as usize;
    let mut damaged_b: Vec<usize> = order.into_iter().take(n_b).collect();
    damaged_b.sort_unstable();

    s.damaged_subsegments = damaged;
    s.damaged_buildings = damaged_b;
    Ok((s.pre_mask()?, s.post_mask()?))
}

/// Clears discs of road pixels (radius `radius.0..=radius.1` px, centred on
/// random road pixels) until at least `fraction` of the road pixels are gone.
pub fn inject_gaps(mask: &Mask, fraction: f64, radius: (usize, usize), seed: u64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("gap fraction must be in [0, 1], got {fraction}")));
    }
    if radius.0 == 0 || radius.0 > radius.1 {
        return Err(Error::invalid("gap radius range must satisfy 1 <= min <= max"));
    }
    let mut out = mask.clone();
    let (w, h) = mask.dims();
    let road: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y) == Class::Road)
        .collect();
    let target = (fraction * road.len() as f64).ceil() as usize;
    let mut erased = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while erased < target {
        let (cx, cy) = road[rng.gen_range(0..road.len())];
        let r = rng.gen_range(radius.0..=radius.1) as f64;
        let centre = [Point::new(cx as f64, cy as f64)];
        stroke_polyline_pixels(&centre, r, w, h, |x, y| {
            if out.get(x, y) == Class::Road {
                out.set(x, y, Class::Background);
                erased += 1;
            }
        });
    }
    Ok(out)
}

/// Plain-text damage manifest.
pub fn damage_manifest(s: &Scenario) -> String {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    format!(
        "seed {}\nslice_length {}\nsubsegments {}\ndamaged_subsegments {}\ndamaged_buildings {}\n",
        s.seed,
        s.params.slice_length,
        s.sliced().map(|x| x.len()).unwrap_or(0),
        join(&s.damaged_subsegments),
        join(&s.damaged_buildings),
    )
}

/// Reads the `damaged_subsegments` line of a damage manifest.
pub fn parse_damage_manifest(text: &str) -> Result<Vec<usize>> {
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("damaged_subsegments") {
            return rest
                .split_whitespace()
                .map(|v| {
                    v.parse().map_err(|_| Error::Parse {
                        line: n + 1,
                        column: 1,
                        message: format!("{v:?} is not an index"),
                    })
                })
                .collect();
        }
    }
    Err(Error::invalid("manifest has no damaged_subsegments line"))
}

/// Writes `truth_graph.geojson`, `post_truth_graph.geojson`, `osm.geojson`,
/// `pre.png`, `post.png` (with world files) and `damage.txt` into `dir`.
pub fn export(s: &Scenario, pre: &Mask, post: &Mask, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::file(&p, e))
    };
    write("truth_graph.geojson", graph_to_geojson(&s.truth_graph))?;
    write("post_truth_graph.geojson", graph_to_geojson(&s.post_truth_graph()?))?;
    write("osm.geojson", layer_to_geojson(&s.layer()))?;
    write("damage.txt", damage_manifest(s))?;
    let gt = GeoTransform::identity();
    write_raster(pre, &gt, &dir.join("pre.png"))?;
    write_raster(post, &gt, &dir.join("post.png"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{compute_change_mask, dilate, StructuringElement};

    fn small() -> ScenarioParams {
        ScenarioParams {
            extent: 256,
            road_density: 3,
            building_count: 15,
            ..ScenarioParams::default()
        }
    }

    #[test]
    fn empty_parameters_give_empty_scene() {
        let p = ScenarioParams {
            road_density: 0,
            building_count: 0,
            ..small()
        };
        let s = generate(3, p).unwrap();
        assert!(s.truth_graph.is_empty() && s.buildings.is_empty());
        assert!(generate(3, ScenarioParams { extent: 32, ..p }).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(1, small()).unwrap();
        assert_eq!(a, generate(1, small()).unwrap());
        let b = generate(2, small()).unwrap();
        assert_ne!(graph_to_geojson(&a.truth_graph), graph_to_geojson(&b.truth_graph));
    }

    #[test]
    fn network_is_connected_and_buildings_are_off_road() {
        let s = generate(5, small()).unwrap();
        let g = &s.truth_graph;
        // 3 crossing lines per axis, each split into 4 edges.
        assert_eq!(g.edge_count(), 24);
        let dists = crate::road_graph::shortest_path_lengths_from(g, 0).unwrap();
        assert_eq!(dists.len(), g.node_count());

        let pre = s.pre_mask().unwrap();
        assert_eq!(s.buildings.len(), 15);
        for ring in &s.buildings {
            for (x, y) in rect_pixels(ring, 256) {
                assert_eq!(pre.get(x, y), Class::Building);
            }
        }
    }

    #[test]
    fn too_many_buildings_fail() {
        let p = ScenarioParams {
            extent: 64,
            building_count: 500,
            ..small()
        };
        assert!(matches!(generate(1, p), Err(Error::Generation(_))));
    }

    #[test]
    fn damage_counts_and_extremes() {
        let mut s = generate(7, ScenarioParams { extent: 640, road_density: 5, ..small() }).unwrap();
        let n = s.sliced().unwrap().len();
        let (pre, post) = apply_damage(&mut s, 0.05, 1).unwrap();
        assert_eq!(s.damaged_subsegments.len(), (0.05 * n as f64).round() as usize);
        assert_ne!(pre, post);

        let (pre, post) = apply_damage(&mut s, 0.0, 1).unwrap();
        assert_eq!(pre, post);

        let (_, post) = apply_damage(&mut s, 1.0, 1).unwrap();
        assert_eq!(post.count(Class::Road) + post.count(Class::Building), 0);
        assert!(s.post_truth_graph().unwrap().is_empty());
    }

    #[test]
    fn change_lies_within_damaged_geometry() {
        let mut s = generate(11, small()).unwrap();
        let (pre, post) = apply_damage(&mut s, 0.2, 3).unwrap();
        let change = compute_change_mask(&pre, &post).unwrap();
        let sliced = s.sliced().unwrap();
        let mut damaged = BinaryMask::zeros(256, 256).unwrap();
        for &i in &s.damaged_subsegments {
            stroke_polyline_pixels(&sliced.sub_segments[i].path, 4.0, 256, 256, |x, y| damaged.set(x, y, true));
        }
        for &b in &s.damaged_buildings {
            for (x, y) in rect_pixels(&s.buildings[b], 256) {
                damaged.set(x, y, true);
            }
        }
        let grown = dilate(&damaged, StructuringElement::square(3).unwrap(), 1);
        assert!(!change.is_empty());
        assert!(change.is_subset_of(&grown));
    }

    #[test]
    fn gaps_erase_requested_share() {
        let s = generate(2, small()).unwrap();
        let pre = s.pre_mask().unwrap();
        let gapped = inject_gaps(&pre, 0.1, (6, 9), 4).unwrap();
        let before = pre.count(Class::Road) as f64;
        let after = gapped.count(Class::Road) as f64;
        assert!(after <= 0.9 * before);
        assert!(after > 0.8 * before);
        assert_eq!(gapped.count(Class::Building), pre.count(Class::Building));
        assert_eq!(gapped, inject_gaps(&pre, 0.1, (6, 9), 4).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let mut s = generate(9, small()).unwrap();
        apply_damage(&mut s, 0.1, 2).unwrap();
        let text = damage_manifest(&s);
        assert_eq!(parse_damage_manifest(&text).unwrap(), s.damaged_subsegments);
    }
}

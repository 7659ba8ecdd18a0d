//! Acceptance suite. Runs each criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use damagemap::geo_io::{
    layer_to_geojson, parse_geojson, read_binary_raster, read_raster, write_binary_raster, write_raster, Building,
    GeoTransform, Road, VectorLayer,
};
use damagemap::geom::Point;
use damagemap::loss::{finite_difference_grad, seg_loss_grad, LossInstance, LossParams};
use damagemap::metrics::{connectivity, index_set_pr, subsegment_pr, ConnectivityParams};
use damagemap::pipeline::{run, PipelineParams};
use damagemap::raster::{compute_change_mask, dilate, open, BinaryMask, Class, Mask, StructuringElement};
use damagemap::road_graph::{slice_edges, RoadGraph, Units};
use damagemap::skeleton::{simplify_rdp, thin};
use damagemap::synth::{apply_damage, generate, inject_gaps, ScenarioParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask {
    Mask::new(w, h, (0..w * h).map(|_| rng.gen_range(0..3u8)).collect()).unwrap()
}

fn random_binary(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p)).unwrap()
}

fn change_mask_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for case in 0..1000 {
        let pre = random_mask(&mut rng, 32, 32);
        let post = random_mask(&mut rng, 32, 32);
        let got = compute_change_mask(&pre, &post).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expected = pre.get(x, y) != Class::Background && post.get(x, y) == Class::Background;
                check(got.get(x, y) == expected, || format!("case {case}: pixel ({x},{y}) differs"))?;
            }
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("1000 pairs exact in {:.2} s", start.elapsed().as_secs_f64()))
}

fn loss_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let pixels = rng.gen_range(1..=16);
        let classes = rng.gen_range(2..=3);
        let alpha = [0.0, 0.3, 1.0][case % 3];
        let scores = (0..pixels * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let targets = (0..pixels).map(|_| rng.gen_range(0..classes)).collect();
        let weights = (0..classes).map(|_| rng.gen_range(0.2..2.0)).collect();
        let inst = LossInstance::new(classes, scores, targets).unwrap();
        let params = LossParams::new(alpha, weights);
        let analytic = seg_loss_grad(&inst, &params).unwrap();
        let numeric = finite_difference_grad(&inst, &params, 1e-5).unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-3));
        }
    }
    check(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!("max relative error {worst:.2e} in {:.2} s", start.elapsed().as_secs_f64()))
}

fn point_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.x + t * dx, a.y + t * dy);
    ((p.x - qx).powi(2) + (p.y - qy).powi(2)).sqrt()
}

fn morphology_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 200;
    for case in 0..cases {
        let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let se = StructuringElement::square([1, 3, 5][case % 3]).unwrap();
        let a = random_binary(&mut rng, w, h, 0.2);
        let extra = random_binary(&mut rng, w, h, 0.1);
        let b = a.or(&extra).unwrap();
        let (da, db) = (dilate(&a, se, 1), dilate(&b, se, 1));
        check(a.is_subset_of(&da) && da.is_subset_of(&db), || format!("case {case}: dilation not monotone"))?;

        let o = open(&a, se);
        check(open(&o, se) == o, || format!("case {case}: opening not idempotent"))?;

        let blobs = dilate(&random_binary(&mut rng, w, h, 0.05), StructuringElement::square(3).unwrap(), 1);
        let once = thin(&blobs).into_mask();
        check(thin(&once).into_mask() == once, || format!("case {case}: thinning not idempotent"))?;

        let n = rng.gen_range(2..30);
        let line: Vec<Point> = (0..n)
            .map(|i| Point::new(i as f64 * rng.gen_range(0.5..4.0), rng.gen_range(-10.0..10.0)))
            .collect();
        let eps = rng.gen_range(0.1..5.0);
        let simple = simplify_rdp(&line, eps).unwrap();
        for p in &line {
            let d = simple
                .windows(2)
                .map(|s| point_segment(*p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            check(d <= eps + 1e-9, || format!("case {case}: RDP deviation {d} > {eps}"))?;
        }
    }
    Ok(format!("{cases} cases each for dilation, opening, thinning and RDP"))
}

fn slicing_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let lines: Vec<Vec<Point>> = (0..rng.gen_range(1..6))
            .map(|_| {
                (0..rng.gen_range(2..8))
                    .map(|_| Point::new(rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0)))
                    .collect()
            })
            .collect();
        let g = RoadGraph::from_polylines(Units::Pixels, &lines).unwrap();
        let l = rng.gen_range(5.0..120.0);
        let sliced = slice_edges(&g, l).unwrap();
        for (e, edge) in g.edges().iter().enumerate() {
            let arc: f64 = edge.geometry.windows(2).map(|s| s[0].distance(s[1])).sum();
            let pieces = &sliced.sub_segments[sliced.edge_ranges[e].clone()];
            let sum: f64 = pieces.iter().map(|s| s.length).sum();
            check((sum - arc).abs() <= 1e-9 * arc.max(1.0), || {
                format!("case {case} edge {e}: pieces sum to {sum}, arc {arc}")
            })?;
            let expected = (arc / l).ceil() as usize;
            check(pieces.len() == expected, || {
                format!("case {case} edge {e}: {} pieces, expected {expected}", pieces.len())
            })?;
        }
    }
    Ok("100 random graphs conserve length and piece count".into())
}

fn scenario_params() -> ScenarioParams {
    ScenarioParams {
        extent: 640,
        road_density: 5,
        building_count: 40,
        ..ScenarioParams::default()
    }
}

fn clean_recovery() -> Outcome {
    let start = Instant::now();
    let seed = 7;
    let mut s = generate(seed, scenario_params()).unwrap();
    let (pre, post) = apply_damage(&mut s, 0.05, seed).unwrap();
    let out = run(&pre, &post, &s.truth_graph, &PipelineParams::default()).unwrap();
    let subsegments = s.sliced().unwrap().len();
    let id = index_set_pr(&out.diff.removed, &s.damaged_subsegments);
    let truth_post = s.post_truth_graph().unwrap();
    let conn = connectivity(
        &out.diff.graph,
        &truth_post,
        ConnectivityParams {
            n_pairs: 500,
            seed,
            rel_tol: 0.05,
            snap_radius: 20.0,
        },
    )
    .unwrap();
    let summary = format!(
        "{subsegments} sub-segments, {} damaged, F={:.3}, Correct={:.1}%",
        s.damaged_subsegments.len(),
        id.f_score,
        conn.correct
    );
    check(id.f_score >= 0.95, || format!("identification F below 0.95: {summary}"))?;
    check(conn.correct >= 95.0, || format!("Correct below 95%: {summary}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("{summary} in {:.1} s", start.elapsed().as_secs_f64()))
}

fn gap_trend() -> Outcome {
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let mut s = generate(seed, scenario_params()).unwrap();
        let (pre, post) = apply_damage(&mut s, 0.05, seed).unwrap();
        let gapped = inject_gaps(&post, 0.10, (6, 9), seed + 1000).unwrap();
        let out = run(&pre, &gapped, &s.truth_graph, &PipelineParams::default()).unwrap();
        let truth = s.post_truth_graph().unwrap();
        let params = ConnectivityParams {
            n_pairs: 500,
            seed,
            rel_tol: 0.05,
            snap_radius: 20.0,
        };
        let diff_f = subsegment_pr(&out.diff.graph, &truth, 40.0).unwrap().f_score;
        let post_f = subsegment_pr(&out.post_graph, &truth, 40.0).unwrap().f_score;
        let diff_nc = connectivity(&out.diff.graph, &truth, params).unwrap().no_connection;
        let post_nc = connectivity(&out.post_graph, &truth, params).unwrap().no_connection;
        let line = format!("seed {seed}: F {diff_f:.3} vs {post_f:.3}, NoConn {diff_nc:.1}% vs {post_nc:.1}%");
        check(diff_f > post_f, || format!("Diff F not above Post F, {line}"))?;
        check(diff_nc <= 0.5 * post_nc, || format!("Diff NoConn above half of Post, {line}"))?;
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_damagemap"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    fs::write(
        root.join("loss.txt"),
        "classes 3\nalpha 0.3\nweights 1 2 3\npixel 0 0.1 -0.4 1.2\npixel 2 -1 0.5 0.3\n",
    )
    .unwrap();
    let commands: Vec<Vec<String>> = vec![
        vec!["synth", "--out-dir", &p("synth"), "--seed", "3", "--extent", "256", "--road-density", "3",
             "--building-count", "10", "--gap-fraction", "0.1"],
        vec!["rasterize", "--input", &p("synth/osm.geojson"), "--out", &p("osm.png"), "--width", "256",
             "--height", "256"],
        vec!["diff", "--pre", &p("synth/pre.png"), "--post", &p("synth/post_gapped.png"), "--out-dir",
             &p("diff"), "--debug"],
        vec!["extract-graph", "--mask", &p("diff/road_change.png"), "--out", &p("change.geojson")],
        vec!["extract-graph", "--mask", &p("synth/post_gapped.png"), "--out", &p("post.geojson")],
        vec!["register", "--osm", &p("synth/osm.geojson"), "--change", &p("change.geojson"), "--out",
             &p("diff.geojson"), "--removed", &p("removed.txt")],
        vec!["register", "--osm", &p("synth/truth_graph.geojson"), "--change", &p("diff/road_change.png"),
             "--out", &p("diff_from_mask.geojson")],
        vec!["evaluate", "--mode", "iou", "--pred", &p("synth/post_gapped.png"), "--truth", &p("synth/post.png"),
             "--out-dir", &p("eval_iou")],
        vec!["evaluate", "--mode", "pr", "--pred", &p("diff.geojson"), "--truth",
             &p("synth/post_truth_graph.geojson"), "--out-dir", &p("eval_pr")],
        vec!["evaluate", "--mode", "connectivity", "--pred", &p("post.geojson"), "--truth",
             &p("synth/post_truth_graph.geojson"), "--n-pairs", "100", "--seed", "9", "--out-dir", &p("eval_conn")],
        vec!["loss", "--instance", &p("loss.txt"), "--check"],
        vec!["pipeline", "--pre", &p("synth/pre.png"), "--post", &p("synth/post_gapped.png"), "--osm",
             &p("synth/osm.geojson"), "--truth", &p("synth/post_truth_graph.geojson"), "--out-dir", &p("pipe"),
             "--n-pairs", "100", "--debug"],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    for cmd in &commands {
        let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        let stdout1 = cli(&args)?;
        let files1 = snapshot(root);
        let stdout2 = cli(&args)?;
        let files2 = snapshot(root);
        check(stdout1 == stdout2, || format!("{} stdout differs", cmd[0]))?;
        check(files1 == files2, || format!("{} outputs differ between runs", cmd[0]))?;
    }
    // A fresh directory reproduces the whole chain byte for byte.
    let again = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(again.path().join("loss.txt"), fs::read(root.join("loss.txt")).unwrap()).unwrap();
    let first = snapshot(root);
    for cmd in &commands {
        let args: Vec<String> = cmd
            .iter()
            .map(|a| a.replace(&*root.to_string_lossy(), &again.path().to_string_lossy()))
            .collect();
        cli(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    let second = snapshot(again.path());
    check(first.len() == second.len(), || "file sets differ between directories".into())?;
    for ((pa, a), (_, b)) in first.iter().zip(&second) {
        let manifest = pa.to_string_lossy().contains("manifest");
        check(manifest || a == b, || format!("{} differs between directories", pa.display()))?;
    }
    Ok(format!("{} commands byte-identical on re-run, {} files", commands.len(), first.len()))
}

fn random_layer(rng: &mut ChaCha8Rng) -> VectorLayer {
    let units = [Units::Pixels, Units::Meters, Units::Degrees][rng.gen_range(0..3)];
    let mut layer = VectorLayer::new(units);
    let coord = |rng: &mut ChaCha8Rng| Point::new(rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..90.0));
    for _ in 0..rng.gen_range(0..5) {
        let highway = ["primary", "residential", "tertiary_link"][rng.gen_range(0..3)].to_string();
        let points = (0..rng.gen_range(2..6)).map(|_| coord(rng)).collect();
        layer.roads.push(Road { highway, points });
    }
    for _ in 0..rng.gen_range(0..4) {
        let rings = (0..rng.gen_range(1..3))
            .map(|_| {
                let mut ring: Vec<Point> = (0..rng.gen_range(3..7)).map(|_| coord(rng)).collect();
                ring.push(ring[0]);
                ring
            })
            .collect();
        layer.buildings.push(Building {
            building: ["yes", "house"][rng.gen_range(0..2)].to_string(),
            rings,
        });
    }
    layer
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in 0..50 {
        let (w, h) = (rng.gen_range(1..48), rng.gen_range(1..48));
        let gt = GeoTransform::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.1..2.0),
            0.0,
            rng.gen_range(-1.0..1.0),
            0.0,
            -rng.gen_range(0.1..2.0),
        )
        .unwrap();
        let ext = if case % 2 == 0 { "png" } else { "pgm" };
        let mask = random_mask(&mut rng, w, h);
        let path = tmp.path().join(format!("m{case}.{ext}"));
        write_raster(&mask, &gt, &path).unwrap();
        let back = read_raster(&path).unwrap();
        check(back.raster == mask && back.transform == gt && back.transform_found, || {
            format!("case {case}: class raster round trip")
        })?;
        let bin = random_binary(&mut rng, w, h, 0.4);
        let path = tmp.path().join(format!("b{case}.{ext}"));
        write_binary_raster(&bin, &gt, &path).unwrap();
        check(read_binary_raster(&path).unwrap().raster == bin, || format!("case {case}: binary raster round trip"))?;
    }
    for case in 0..200 {
        let layer = random_layer(&mut rng);
        let text = layer_to_geojson(&layer);
        let (parsed, _) = parse_geojson(&text).unwrap();
        check(parsed == layer, || format!("case {case}: layer changed on parse"))?;
        check(layer_to_geojson(&parsed) == text, || format!("case {case}: serialization not a fixed point"))?;
    }
    Ok("50 raster pairs and 200 vector layers round-trip exactly".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("change mask matches per-pixel oracle", change_mask_matches_oracle),
        ("loss gradient matches finite differences", loss_gradient_check),
        ("morphology and skeleton properties", morphology_properties),
        ("slicing conserves length and count", slicing_conservation),
        ("clean end-to-end recovery", clean_recovery),
        ("Diff beats Post under random gaps", gap_trend),
        ("CLI determinism", cli_determinism),
        ("format round trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}

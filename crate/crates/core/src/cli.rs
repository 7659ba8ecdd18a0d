//! The `damagemap` command line front end.
//!
//! Every command is deterministic given its flags and inputs. Options can
//! also come from a `--config` file of `key=value` lines whose keys are the
//! long flag names; flags given on the command line take precedence. Each
//! command writes a `manifest.txt` (or `<output>.manifest.txt`) recording the
//! effective arguments and the SHA-256 of every input file.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 when an internal
//! invariant is violated.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo_io::{
    parse_geojson, rasterize, read_binary_raster, read_raster, write_binary_raster, write_raster, GeoTransform,
    LoadedRaster, RasterizeOptions,
};
use crate::geom::Point;
use crate::loss::{finite_difference_grad, max_relative_error, parse_loss_problem, seg_loss, seg_loss_grad};
use crate::metrics::{connectivity, iou, mean_iou, subsegment_counts, ConnectivityParams, KeyValue};
use crate::pipeline::{detect_changes, extract_road_graph, road_mask, ChangeDetection, ChangeParams, GraphParams};
use crate::raster::{class_mask, BinaryMask, ChangeHeatmap, Class, Mask};
use crate::road_graph::{graph_from_geojson, graph_to_geojson, register_diff_within, RoadGraph, Units};
use crate::synth::{apply_damage, damage_manifest, export, generate, inject_gaps, ScenarioParams};

#[derive(Debug, Parser)]
#[command(name = "damagemap", version, about = "Disaster damage mapping from segmentation masks and road graphs")]
pub struct Cli {
    /// File of key=value lines supplying defaults for the command's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize OSM roads and buildings to a class mask.
    Rasterize(RasterizeArgs),
    /// Detect changes between pre- and post-event masks.
    Diff(DiffArgs),
    /// Trace a road mask into a graph.
    ExtractGraph(ExtractArgs),
    /// Remove changed sub-segments from a reference road graph.
    Register(RegisterArgs),
    /// Compute IoU, sub-segment precision/recall or connectivity.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic damage scenario.
    Synth(SynthArgs),
    /// Evaluate the segmentation loss and its gradient on an instance file.
    Loss(LossArgs),
    /// Run rasterize, diff, extract-graph, register and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TransformArgs {
    /// Affine pixel-to-world transform `a,b,c,d,e,f`.
    #[arg(long, allow_hyphen_values = true, value_name = "A,B,C,D,E,F")]
    pub transform: Option<String>,
    /// World file holding the transform.
    #[arg(long, value_name = "FILE", conflicts_with = "transform")]
    pub world_file: Option<PathBuf>,
}

impl TransformArgs {
    fn resolve(&self) -> Result<Option<GeoTransform>> {
        if let Some(t) = &self.transform {
            return GeoTransform::from_csv(t).map(Some);
        }
        if let Some(p) = &self.world_file {
            let text = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            return GeoTransform::from_world_file(&text).map(Some);
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChangeArgs {
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 6)]
    pub dilate_iterations: usize,
    #[arg(long, default_value_t = 5)]
    pub open_kernel: usize,
    #[arg(long, default_value_t = 64)]
    pub min_blob_area: usize,
    #[arg(long, default_value_t = 64)]
    pub heatmap_cell: usize,
}

impl ChangeArgs {
    fn params(&self) -> ChangeParams {
        ChangeParams {
            kernel: self.kernel,
            dilate_iterations: self.dilate_iterations,
            open_kernel: self.open_kernel,
            min_blob_area: self.min_blob_area,
            heatmap_cell: self.heatmap_cell,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    #[arg(long, default_value_t = 5)]
    pub graph_kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub graph_dilate_iterations: usize,
    #[arg(long, default_value_t = 3.0)]
    pub rdp_epsilon: f64,
}

impl GraphArgs {
    fn params(&self) -> GraphParams {
        GraphParams {
            kernel: self.graph_kernel,
            dilate_iterations: self.graph_dilate_iterations,
            rdp_epsilon: self.rdp_epsilon,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// Sub-segment length `l` in the units of the matching frame.
    #[arg(long, default_value_t = 40.0)]
    pub slice_length: f64,
    /// Correspondence radius; defaults to half the slice length.
    #[arg(long)]
    pub match_radius: Option<f64>,
}

impl MatchArgs {
    fn radius(&self) -> f64 {
        self.match_radius.unwrap_or(self.slice_length / 2.0)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConnectivityArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub rel_tol: f64,
    /// Snap radius; defaults to half the slice length.
    #[arg(long)]
    pub snap_radius: Option<f64>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct RasterizeArgs {
    /// OSM-derived GeoJSON FeatureCollection.
    #[arg(long)]
    pub input: PathBuf,
    /// Output mask (.png or .pgm); a world file is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// Road stroke radius in meters.
    #[arg(long, default_value_t = 2.0)]
    pub road_buffer: f64,
    /// Ground sampling distance in meters per pixel.
    #[arg(long, default_value_t = 0.5)]
    pub gsd: f64,
    #[command(flatten)]
    pub transform: TransformArgs,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct DiffArgs {
    #[arg(long)]
    pub pre: PathBuf,
    #[arg(long)]
    pub post: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the intermediate masks.
    #[arg(long)]
    pub debug: bool,
    #[command(flatten)]
    pub change: ChangeArgs,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct ExtractArgs {
    /// Class mask (roads are code 2) or binary mask (0/255).
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct RegisterArgs {
    /// Reference road graph or OSM GeoJSON.
    #[arg(long)]
    pub osm: PathBuf,
    /// Change graph (.geojson) or change mask (.png/.pgm).
    #[arg(long)]
    pub change: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional file listing the removed sub-segment indices.
    #[arg(long)]
    pub removed: Option<PathBuf>,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub transform: TransformArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Iou,
    Pr,
    Connectivity,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// Predicted mask (iou) or graph (pr, connectivity).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory for report.txt and report.json; stdout only if omitted.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub connectivity: ConnectivityArgs,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub extent: usize,
    #[arg(long, default_value_t = 4)]
    pub road_density: usize,
    #[arg(long, default_value_t = 40)]
    pub building_count: usize,
    #[arg(long, default_value_t = 40.0)]
    pub slice_length: f64,
    #[arg(long, default_value_t = 2.0)]
    pub road_buffer: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gsd: f64,
    #[arg(long, default_value_t = 0.05)]
    pub damage_fraction: f64,
    /// Seed of the damage sampler; defaults to `--seed`.
    #[arg(long)]
    pub damage_seed: Option<u64>,
    /// Share of post-event road pixels erased by random gaps.
    #[arg(long, default_value_t = 0.0)]
    pub gap_fraction: f64,
    #[arg(long, default_value_t = 6)]
    pub gap_min_radius: usize,
    #[arg(long, default_value_t = 9)]
    pub gap_max_radius: usize,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct LossArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Compare against central finite differences.
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct PipelineArgs {
    #[arg(long)]
    pub pre: PathBuf,
    #[arg(long)]
    pub post: PathBuf,
    /// Reference road network (OSM GeoJSON or graph GeoJSON).
    #[arg(long)]
    pub osm: PathBuf,
    /// Optional truth graph for the evaluation step.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub debug: bool,
    #[arg(long, default_value_t = 2.0)]
    pub road_buffer: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gsd: f64,
    #[command(flatten)]
    pub change: ChangeArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub connectivity: ConnectivityArgs,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let expanded = match expand_config(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let record = Invocation::new(&expanded);
    match execute(&cli.command, &record) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

/// Replaces `--config FILE` with the file's settings, placed right after the
/// subcommand so that explicit flags override them.
fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::invalid("--config needs a file"))?
                .clone();
            path = Some(PathBuf::from(value));
            args.drain(i..i + 2);
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
            args.remove(i);
            continue;
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    let mut extra = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            column: 1,
            message: format!("{}: expected key=value", path.display()),
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => extra.push(OsString::from(flag)),
            "false" => {}
            v => {
                extra.push(OsString::from(flag));
                extra.push(OsString::from(v));
            }
        }
    }
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(args.len());
    args.splice(sub..sub, extra);
    Ok(args)
}

/// Effective arguments and input hashes, written as a run manifest.
struct Invocation {
    args: Vec<String>,
}

impl Invocation {
    fn new(args: &[OsString]) -> Self {
        Self {
            args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        }
    }

    fn write(&self, path: &Path, inputs: &[&Path]) -> Result<()> {
        let mut out = format!(
            "tool damagemap {}\nargs {}\n",
            env!("CARGO_PKG_VERSION"),
            self.args.join(" ")
        );
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| Error::file(p, e))?;
            out.push_str(&format!("input {} sha256={}\n", p.display(), hex::encode(Sha256::digest(&bytes))));
            let side = crate::geo_io::world_file_path(p);
            if is_raster_path(p) && side.exists() {
                let bytes = fs::read(&side).map_err(|e| Error::file(&side, e))?;
                out.push_str(&format!("input {} sha256={}\n", side.display(), hex::encode(Sha256::digest(&bytes))));
            }
        }
        write_text(path, &out)
    }
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.txt");
    out.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn is_raster_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm")
    )
}

fn execute(cmd: &Command, inv: &Invocation) -> Result<()> {
    match cmd {
        Command::Rasterize(a) => cmd_rasterize(a, inv),
        Command::Diff(a) => cmd_diff(a, inv),
        Command::ExtractGraph(a) => cmd_extract_graph(a, inv),
        Command::Register(a) => cmd_register(a, inv),
        Command::Evaluate(a) => cmd_evaluate(a, inv),
        Command::Synth(a) => cmd_synth(a, inv),
        Command::Loss(a) => cmd_loss(a, inv),
        Command::Pipeline(a) => cmd_pipeline(a, inv),
    }
}

fn rasterize_file(input: &Path, gt: &GeoTransform, opts: RasterizeOptions) -> Result<Mask> {
    let (layer, report) = parse_geojson(&read_text(input)?).map_err(|e| Error::file(input, e))?;
    if report.skipped > 0 {
        info!("{}: {} features skipped", input.display(), report.skipped);
    }
    let out = rasterize(&layer, gt, opts)?;
    Ok(out.mask)
}

fn cmd_rasterize(a: &RasterizeArgs, inv: &Invocation) -> Result<()> {
    let gt = a.transform.resolve()?.unwrap_or_else(GeoTransform::identity);
    let opts = RasterizeOptions {
        width: a.width,
        height: a.height,
        road_buffer: a.road_buffer,
        gsd: a.gsd,
    };
    let mask = rasterize_file(&a.input, &gt, opts)?;
    ensure_parent(&a.out)?;
    write_raster(&mask, &gt, &a.out)?;
    inv.write(&manifest_beside(&a.out), &[&a.input])
}

fn heatmap_text(h: &ChangeHeatmap) -> String {
    let mut out = String::new();
    for row in 0..h.rows {
        let cells: Vec<String> = (0..h.cols).map(|c| h.get(c, row).to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn write_detection(d: &ChangeDetection, gt: &GeoTransform, dir: &Path, debug: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write_binary_raster(&d.change, gt, &dir.join("change.png"))?;
    write_binary_raster(&d.road_change, gt, &dir.join("road_change.png"))?;
    let json = serde_json::to_string_pretty(&d.heatmap).expect("heatmap serializes");
    write_text(&dir.join("heatmap.json"), &json)?;
    write_text(&dir.join("heatmap.txt"), &heatmap_text(&d.heatmap))?;
    if debug {
        write_raster(&d.pre_dilated, gt, &dir.join("pre_dilated.png"))?;
        write_raster(&d.post_dilated, gt, &dir.join("post_dilated.png"))?;
        write_binary_raster(&d.raw, gt, &dir.join("raw_change.png"))?;
        write_binary_raster(&d.opened, gt, &dir.join("opened_change.png"))?;
    }
    Ok(())
}

fn load_pair(pre: &Path, post: &Path) -> Result<(LoadedRaster<Mask>, LoadedRaster<Mask>)> {
    let pre = read_raster(pre)?;
    let post_l = read_raster(post)?;
    if pre.transform_found && post_l.transform_found && pre.transform != post_l.transform {
        warn!("{}: geotransform differs from the pre-event mask", post.display());
    }
    Ok((pre, post_l))
}

fn cmd_diff(a: &DiffArgs, inv: &Invocation) -> Result<()> {
    let (pre, post) = load_pair(&a.pre, &a.post)?;
    let d = detect_changes(&pre.raster, &post.raster, &a.change.params())?;
    write_detection(&d, &pre.transform, &a.out_dir, a.debug)?;
    inv.write(&a.out_dir.join("manifest.txt"), &[&a.pre, &a.post])
}

/// Reads a road mask: class rasters give their road pixels, 0/255 rasters
/// are taken as they are.
fn read_road_mask(path: &Path) -> Result<(BinaryMask, GeoTransform)> {
    match read_raster(path) {
        Ok(l) => Ok((road_mask(&l.raster), l.transform)),
        Err(class_err) => match read_binary_raster(path) {
            Ok(l) => Ok((l.raster, l.transform)),
            Err(_) => Err(class_err),
        },
    }
}

fn cmd_extract_graph(a: &ExtractArgs, inv: &Invocation) -> Result<()> {
    let (roads, _) = read_road_mask(&a.mask)?;
    let g = extract_road_graph(&roads, &a.graph.params())?;
    write_text(&a.out, &graph_to_geojson(&g))?;
    inv.write(&manifest_beside(&a.out), &[&a.mask])
}

fn load_graph(path: &Path) -> Result<RoadGraph> {
    graph_from_geojson(&read_text(path)?).map_err(|e| match e {
        Error::File { .. } => e,
        other => Error::file(path, other),
    })
}

/// Converts a world-frame graph to pixels, remembering the original
/// coordinates so untouched geometry can be restored exactly.
struct PixelFrame {
    gt: GeoTransform,
    units: Units,
    original: HashMap<(u64, u64), Point>,
}

fn key(p: Point) -> (u64, u64) {
    (p.x.to_bits(), p.y.to_bits())
}

impl PixelFrame {
    fn to_pixels(g: &RoadGraph, gt: GeoTransform) -> Result<(RoadGraph, PixelFrame)> {
        let mut original = HashMap::new();
        let px = g.map_coords(Units::Pixels, |p| {
            let q = gt.world_to_pixel(p);
            original.insert(key(q), p);
            q
        })?;
        Ok((
            px,
            PixelFrame {
                gt,
                units: g.units(),
                original,
            },
        ))
    }

    fn back(&self, g: &RoadGraph) -> Result<RoadGraph> {
        g.map_coords(self.units, |q| {
            self.original
                .get(&key(q))
                .copied()
                .unwrap_or_else(|| self.gt.pixel_to_world(q))
        })
    }
}

struct Registered {
    graph: RoadGraph,
    removed: Vec<usize>,
}

fn register_graphs(osm: &RoadGraph, change: &RoadGraph, gt: Option<GeoTransform>, m: &MatchArgs) -> Result<Registered> {
    let pixel_change = change.units() == Units::Pixels;
    if osm.units() == change.units() {
        let r = register_diff_within(osm, change, m.slice_length, m.radius())?;
        return Ok(Registered {
            graph: r.graph,
            removed: r.removed,
        });
    }
    let (Some(gt), true) = (gt, pixel_change) else {
        return Err(Error::UnitsMismatch(osm.units().to_string(), change.units().to_string()));
    };
    let (osm_px, frame) = PixelFrame::to_pixels(osm, gt)?;
    let r = register_diff_within(&osm_px, change, m.slice_length, m.radius())?;
    Ok(Registered {
        graph: frame.back(&r.graph)?,
        removed: r.removed,
    })
}

fn removed_text(removed: &[usize]) -> String {
    removed.iter().map(|i| format!("{i}\n")).collect()
}

fn cmd_register(a: &RegisterArgs, inv: &Invocation) -> Result<()> {
    let osm = load_graph(&a.osm)?;
    let explicit = a.transform.resolve()?;
    let (change, mask_gt) = if is_raster_path(&a.change) {
        let (roads, gt) = read_road_mask(&a.change)?;
        (extract_road_graph(&roads, &a.graph.params())?, Some(gt))
    } else {
        (load_graph(&a.change)?, None)
    };
    let reg = register_graphs(&osm, &change, explicit.or(mask_gt), &a.matching)?;
    write_text(&a.out, &graph_to_geojson(&reg.graph))?;
    if let Some(p) = &a.removed {
        write_text(p, &removed_text(&reg.removed))?;
    }
    inv.write(&manifest_beside(&a.out), &[&a.osm, &a.change])
}

fn iou_report(pred: &Mask, truth: &Mask) -> Result<(String, serde_json::Value)> {
    let b = iou(&class_mask(pred, 1)?, &class_mask(truth, 1)?)?;
    let r = iou(&class_mask(pred, 2)?, &class_mask(truth, 2)?)?;
    let m = mean_iou(pred, truth, &[Class::Building, Class::Road])?;
    let text = format!("iou_building={b}\niou_road={r}\nmean_iou={m}\n");
    let json = json!({ "iou": { "building": b, "road": r }, "mean_iou": m });
    Ok((text, json))
}

fn connectivity_params(c: &ConnectivityArgs, m: &MatchArgs) -> ConnectivityParams {
    ConnectivityParams {
        n_pairs: c.n_pairs,
        seed: c.seed,
        rel_tol: c.rel_tol,
        snap_radius: c.snap_radius.unwrap_or(m.slice_length / 2.0),
    }
}

fn graph_report(
    mode: EvalMode,
    pred: &RoadGraph,
    truth: &RoadGraph,
    m: &MatchArgs,
    c: &ConnectivityArgs,
) -> Result<(String, serde_json::Value)> {
    match mode {
        EvalMode::Pr => {
            let counts = subsegment_counts(pred, truth, m.slice_length, m.radius())?;
            let r = counts.pr();
            Ok((r.to_text(), serde_json::to_value(r).expect("report serializes")))
        }
        EvalMode::Connectivity => {
            let r = connectivity(pred, truth, connectivity_params(c, m))?;
            Ok((r.to_text(), serde_json::to_value(r).expect("report serializes")))
        }
        EvalMode::Iou => Err(Error::invalid("iou mode compares masks, not graphs")),
    }
}

fn emit_report(text: &str, json: &serde_json::Value, dir: Option<&Path>) -> Result<()> {
    print!("{text}");
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        write_text(&dir.join("report.txt"), text)?;
        let body = serde_json::to_string_pretty(json).expect("report serializes");
        write_text(&dir.join("report.json"), &body)?;
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, inv: &Invocation) -> Result<()> {
    let (text, json) = match a.mode {
        EvalMode::Iou => {
            let pred = read_raster(&a.pred)?;
            let truth = read_raster(&a.truth)?;
            iou_report(&pred.raster, &truth.raster)?
        }
        mode => {
            let pred = load_graph(&a.pred)?;
            let truth = load_graph(&a.truth)?;
            graph_report(mode, &pred, &truth, &a.matching, &a.connectivity)?
        }
    };
    emit_report(&text, &json, a.out_dir.as_deref())?;
    if let Some(dir) = &a.out_dir {
        inv.write(&dir.join("manifest.txt"), &[&a.pred, &a.truth])?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, inv: &Invocation) -> Result<()> {
    let params = ScenarioParams {
        extent: a.extent,
        road_density: a.road_density,
        building_count: a.building_count,
        slice_length: a.slice_length,
        road_buffer: a.road_buffer,
        gsd: a.gsd,
    };
    let mut s = generate(a.seed, params)?;
    let (pre, post) = apply_damage(&mut s, a.damage_fraction, a.damage_seed.unwrap_or(a.seed))?;
    export(&s, &pre, &post, &a.out_dir)?;
    if a.gap_fraction > 0.0 {
        let gapped = inject_gaps(&post, a.gap_fraction, (a.gap_min_radius, a.gap_max_radius), a.seed)?;
        write_raster(&gapped, &GeoTransform::identity(), &a.out_dir.join("post_gapped.png"))?;
    }
    info!("{}", damage_manifest(&s).trim_end());
    inv.write(&a.out_dir.join("manifest.txt"), &[])
}

fn cmd_loss(a: &LossArgs, _inv: &Invocation) -> Result<()> {
    let problem = parse_loss_problem(&read_text(&a.instance)?).map_err(|e| Error::file(&a.instance, e))?;
    let (inst, params) = (&problem.instance, &problem.params);
    let loss = seg_loss(inst, params)?;
    let grad = seg_loss_grad(inst, params)?;
    let mut out = format!("loss={loss}\n");
    for (i, row) in grad.chunks(inst.classes()).enumerate() {
        let cells: Vec<String> = row.iter().map(|g| g.to_string()).collect();
        out.push_str(&format!("grad[{i}]={}\n", cells.join(" ")));
    }
    if a.check {
        let numeric = finite_difference_grad(inst, params, a.step)?;
        out.push_str(&format!("max_relative_error={}\n", max_relative_error(&grad, &numeric, 1e-3)));
    }
    print!("{out}");
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs, inv: &Invocation) -> Result<()> {
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let (pre, post) = load_pair(&a.pre, &a.post)?;
    let gt = pre.transform;
    let (w, h) = pre.raster.dims();

    // rasterize
    let osm_mask = rasterize_file(
        &a.osm,
        &gt,
        RasterizeOptions {
            width: w,
            height: h,
            road_buffer: a.road_buffer,
            gsd: a.gsd,
        },
    )?;
    write_raster(&osm_mask, &gt, &dir.join("osm_mask.png"))?;

    // diff
    let d = detect_changes(&pre.raster, &post.raster, &a.change.params())?;
    write_detection(&d, &gt, dir, a.debug)?;

    // extract-graph
    let gp = a.graph.params();
    let change_graph = extract_road_graph(&d.road_change, &gp)?;
    let post_graph = extract_road_graph(&road_mask(&post.raster), &gp)?;
    write_text(&dir.join("change_graph.geojson"), &graph_to_geojson(&change_graph))?;
    write_text(&dir.join("post_graph.geojson"), &graph_to_geojson(&post_graph))?;

    // register
    let osm = load_graph(&a.osm)?;
    let reg = register_graphs(&osm, &change_graph, Some(gt), &a.matching)?;
    write_text(&dir.join("diff_graph.geojson"), &graph_to_geojson(&reg.graph))?;
    write_text(&dir.join("removed_subsegments.txt"), &removed_text(&reg.removed))?;

    // evaluate
    let mut inputs: Vec<&Path> = vec![&a.pre, &a.post, &a.osm];
    if let Some(truth_path) = &a.truth {
        inputs.push(truth_path);
        let truth = load_graph(truth_path)?;
        let post_world = if truth.units() == Units::Pixels {
            post_graph.clone()
        } else {
            post_graph.map_coords(truth.units(), |p| gt.pixel_to_world(p))?
        };
        let mut text = String::new();
        let mut json = serde_json::Map::new();
        for (name, g) in [("diff", &reg.graph), ("post", &post_world)] {
            for (mode, label) in [(EvalMode::Pr, "pr"), (EvalMode::Connectivity, "connectivity")] {
                let (t, j) = graph_report(mode, g, &truth, &a.matching, &a.connectivity)?;
                for line in t.lines() {
                    text.push_str(&format!("{name}.{label}.{line}\n"));
                }
                json.insert(format!("{name}_{label}"), j);
            }
        }
        emit_report(&text, &serde_json::Value::Object(json), Some(dir))?;
    }
    inv.write(&dir.join("manifest.txt"), &inputs)
}

//! The composed processing chain: change detection on pre/post masks,
//! road-graph extraction from masks, and registration of the change graph
//! against the reference road graph.

use crate::error::{Error, Result};
use crate::raster::{
    class_mask, compute_change_mask, damage_heatmap, dilate, open, remove_small_blobs, BinaryMask, ChangeHeatmap,
    Class, Mask, StructuringElement,
};
use crate::road_graph::{register_diff_within, Registration, RoadGraph, Units};
use crate::skeleton::{extract_graph, simplify_graph, thin};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeParams {
    /// Side of the square kernel used to dilate the class masks.
    pub kernel: usize,
    pub dilate_iterations: usize,
    /// Side of the square kernel used to open the change mask.
    pub open_kernel: usize,
    pub min_blob_area: usize,
    pub heatmap_cell: usize,
}

impl Default for ChangeParams {
    fn default() -> Self {
        Self {
            kernel: 5,
            dilate_iterations: 6,
            open_kernel: 5,
            min_blob_area: 64,
            heatmap_cell: 64,
        }
    }
}

/// Intermediate and final products of change detection.
#[derive(Debug, Clone)]
pub struct ChangeDetection {
    pub pre_dilated: Mask,
    pub post_dilated: Mask,
    /// Change mask of the dilated masks before cleaning.
    pub raw: BinaryMask,
    pub opened: BinaryMask,
    /// Cleaned change mask.
    pub change: BinaryMask,
    /// Road pixels removed between the undilated masks that lie within the
    /// dilation radius of the cleaned change.
    pub road_change: BinaryMask,
    pub heatmap: ChangeHeatmap,
}

/// Dilates the building and road masks separately and recombines them;
/// road wins where both grow into the same pixel.
pub fn dilate_classes(mask: &Mask, se: StructuringElement, iterations: usize) -> Result<Mask> {
    let buildings = dilate(&class_mask(mask, Class::Building.code())?, se, iterations);
    let roads = dilate(&class_mask(mask, Class::Road.code())?, se, iterations);
    let labels = buildings
        .bits()
        .iter()
        .zip(roads.bits())
        .map(|(&b, &r)| if r != 0 { 2 } else { b })
        .collect();
    Mask::new(mask.width(), mask.height(), labels)
}

pub fn detect_changes(pre: &Mask, post: &Mask, params: &ChangeParams) -> Result<ChangeDetection> {
    if pre.dims() != post.dims() {
        let ((lw, lh), (rw, rh)) = (pre.dims(), post.dims());
        return Err(Error::DimensionMismatch {
            left_width: lw,
            left_height: lh,
            right_width: rw,
            right_height: rh,
        });
    }
    let se = StructuringElement::square(params.kernel)?;
    let open_se = StructuringElement::square(params.open_kernel)?;
    let pre_dilated = dilate_classes(pre, se, params.dilate_iterations)?;
    let post_dilated = dilate_classes(post, se, params.dilate_iterations)?;
    let raw = compute_change_mask(&pre_dilated, &post_dilated)?;
    let opened = open(&raw, open_se);
    let change = remove_small_blobs(&opened, params.min_blob_area);
    // Grow the cleaned change back by the dilation radius, limited to road
    // pixels that changed in the undilated masks.
    let raw_road = compute_change_mask(pre, post)?.and(&road_mask(pre))?;
    let road_change = dilate(&change, se, params.dilate_iterations).and(&raw_road)?;
    let heatmap = damage_heatmap(&change, params.heatmap_cell)?;
    Ok(ChangeDetection {
        pre_dilated,
        post_dilated,
        raw,
        opened,
        change,
        road_change,
        heatmap,
    })
}

pub fn road_mask(mask: &Mask) -> BinaryMask {
    class_mask(mask, Class::Road.code()).expect("road is a valid class")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub kernel: usize,
    /// Dilation applied before thinning to close small gaps.
    pub dilate_iterations: usize,
    pub rdp_epsilon: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            kernel: 5,
            dilate_iterations: 2,
            rdp_epsilon: 3.0,
        }
    }
}

/// Dilates, thins, traces and simplifies a binary road mask into a graph in
/// pixel coordinates.
pub fn extract_road_graph(roads: &BinaryMask, params: &GraphParams) -> Result<RoadGraph> {
    let se = StructuringElement::square(params.kernel)?;
    let dilated = dilate(roads, se, params.dilate_iterations);
    let skel = thin(&dilated);
    simplify_graph(&extract_graph(&skel), params.rdp_epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub change: ChangeParams,
    pub graph: GraphParams,
    pub slice_length: f64,
    /// Correspondence radius; `None` means half the slice length.
    pub match_radius: Option<f64>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            change: ChangeParams::default(),
            graph: GraphParams::default(),
            slice_length: 40.0,
            match_radius: None,
        }
    }
}

impl PipelineParams {
    pub fn radius(&self) -> f64 {
        self.match_radius.unwrap_or(self.slice_length / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub detection: ChangeDetection,
    /// Graph traced from the road part of the change mask.
    pub change_graph: RoadGraph,
    /// Graph traced directly from the post-event road mask.
    pub post_graph: RoadGraph,
    /// Reference graph with the changed sub-segments removed.
    pub diff: Registration,
}

/// Runs change detection, graph extraction and registration. `reference`
/// must be in pixel coordinates of the masks.
pub fn run(pre: &Mask, post: &Mask, reference: &RoadGraph, params: &PipelineParams) -> Result<PipelineOutput> {
    if reference.units() != Units::Pixels {
        return Err(Error::UnitsMismatch(reference.units().to_string(), Units::Pixels.to_string()));
    }
    let detection = detect_changes(pre, post, &params.change)?;
    let change_graph = extract_road_graph(&detection.road_change, &params.graph)?;
    let post_graph = extract_road_graph(&road_mask(post), &params.graph)?;
    let diff = register_diff_within(reference, &change_graph, params.slice_length, params.radius())?;
    Ok(PipelineOutput {
        detection,
        change_graph,
        post_graph,
        diff,
    })
}

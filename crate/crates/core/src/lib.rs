//! Disaster impact mapping from pre/post segmentation masks and OpenStreetMap
//! road data.
//!
//! The crate covers the whole chain from class-labelled rasters to an updated
//! road graph:
//!
//! - [`raster`]: label and binary grids, square-kernel morphology, connected
//!   components, the pre/post change mask and the damage heatmap.
//! - [`skeleton`]: thinning, skeleton-to-graph tracing and polyline
//!   simplification.
//! - [`road_graph`]: spatial road graphs, sub-segment slicing, correspondence
//!   matching, change registration and shortest paths.
//! - [`metrics`]: IoU, sub-segment precision/recall and path connectivity.
//! - [`loss`]: weighted cross-entropy + soft Jaccard loss with its gradient.
//! - [`geo_io`]: GeoJSON vectors, geotransforms, rasterization and raster files.
//! - [`synth`]: seeded synthetic disaster scenarios.
//! - [`pipeline`]: the composed change-detection and graph-extraction steps.
//! - [`cli`]: the `damagemap` command line front end.

pub mod cli;
pub mod error;
pub mod geo_io;
pub mod geom;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod road_graph;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};

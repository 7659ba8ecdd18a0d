//! GeoJSON vector layers, affine geotransforms, rasterization of vectors to
//! class masks, and raster files with world-file sidecars.

mod raster_file;
mod rasterize;
mod transform;
mod vector;

pub use raster_file::{
    read_binary_raster, read_raster, world_file_path, write_binary_raster, write_raster, LoadedRaster,
};
pub use rasterize::{fill_polygon_pixels, rasterize, stroke_polyline_pixels, RasterizeOptions, Rasterized};
pub use transform::GeoTransform;
pub use vector::{
    is_road_class, layer_to_geojson, parse_geojson, Building, ParseReport, Road, VectorLayer, ROAD_CLASSES,
};

//! Object-scale analysis and preprocessing for oriented-box remote-sensing
//! detection: annotation corpora, axis morphometry, receptive-field
//! analysis, feature-pyramid level advice, normalization kernels and
//! sliding-window tiling.

pub mod annotations;
pub mod geometry;
pub mod gradcheck;
pub mod morphometry;
pub mod nn_kernels;
pub mod pyramid_advisor;
pub mod raster;
pub mod rf_engine;
pub mod tiler;

pub use annotations::{
    load_corpus, load_datasets, parse_dota_obb, serialize_dota_obb, AnnotationError, Corpus, Manifest, OrientedBox,
    SceneAnnotation,
};
pub use geometry::{min_area_rect, Point, RotatedRect};
pub use morphometry::{axis_histogram, axis_lengths, axis_stats, Axis, AxisPair, AxisStats, MorphometryError};
pub use pyramid_advisor::{occupancy_ratio, recommend_levels, simulate_dilution, PyramidReport};
pub use raster::Raster;
pub use rf_engine::{erf_estimate, gradient_support, trf_and_stride, ArchSpec, ErfConfig, RFResult, RfError};
pub use tiler::{stitch_validate, tile_origins, tile_scene, Patch, TileConfig, TileError};

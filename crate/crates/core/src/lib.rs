//! Geometry, optimal assignment, tracking metrics and dataset I/O shared by
//! the tracker and its tools.

pub mod assignment;
pub mod geometry;
pub mod io;
pub mod metrics;

pub use assignment::{hungarian, AssignmentError, CostMatrix, MatchResult};
pub use geometry::{giou, iou, BoundingBox, BoxFormat, GeometryError, LabeledBox, PixelBox};
pub use io::DataError;
pub use metrics::MetricError;

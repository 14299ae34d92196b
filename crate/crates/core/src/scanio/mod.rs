//! Scan representations, projection, the synthetic world and file formats.

pub mod format;
mod negatives;
mod projection;
mod types;
mod world;

pub use format::{poses_of, read_scan, read_sequence, write_scan, write_sequence, ScanReadOptions};
pub use negatives::{negative_offsets, sample_hard_negatives, HardNegatives};
pub use projection::{project, unproject, unproject_indexed};
pub use types::{PointCloud, RangeImage, ScanPair, SegMask, SensorConfig};
pub use world::{difference_mask, synth_sequence, World, WorldSpec};

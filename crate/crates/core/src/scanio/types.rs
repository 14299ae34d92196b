use std::f64::consts::TAU;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a spinning LiDAR: beam count, azimuth resolution, vertical
/// field of view and range limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub beams: usize,
    pub azimuth_bins: usize,
    /// Lowest beam elevation, radians.
    pub elevation_min: f64,
    /// Highest beam elevation, radians.
    pub elevation_max: f64,
    pub min_range: f32,
    pub max_range: f32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            beams: 16,
            azimuth_bins: 256,
            elevation_min: (-15.0f64).to_radians(),
            elevation_max: 15.0f64.to_radians(),
            min_range: 0.5,
            max_range: 50.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beams < 1 {
            return Err(Error::InvalidConfig("beams must be >= 1".into()));
        }
        if self.azimuth_bins < 4 {
            return Err(Error::InvalidConfig("azimuth_bins must be >= 4".into()));
        }
        if !(self.min_range >= 0.0 && self.min_range < self.max_range && self.max_range.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "range limits must satisfy 0 <= min < max, got [{}, {}]",
                self.min_range, self.max_range
            )));
        }
        if !(self.elevation_min < self.elevation_max) {
            return Err(Error::InvalidConfig("vertical fov must have min < max".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.beams * self.azimuth_bins
    }

    pub fn azimuth_width(&self) -> f64 {
        TAU / self.azimuth_bins as f64
    }

    /// Angular spacing between adjacent beams (the full fov for a single beam).
    pub fn beam_spacing(&self) -> f64 {
        let fov = self.elevation_max - self.elevation_min;
        if self.beams == 1 {
            fov
        } else {
            fov / (self.beams - 1) as f64
        }
    }

    /// Elevation of `row`; row 0 is the top beam.
    pub fn beam_elevation(&self, row: usize) -> f64 {
        if self.beams == 1 {
            0.5 * (self.elevation_min + self.elevation_max)
        } else {
            self.elevation_max - row as f64 * self.beam_spacing()
        }
    }

    /// Azimuth of the centre of column `col`, in `[0, 2pi)`.
    pub fn column_azimuth(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.azimuth_width()
    }

    /// Unit ray direction through the centre of a cell, sensor frame
    /// (x forward, y left, z up).
    pub fn ray_direction(&self, row: usize, col: usize) -> Vector3<f64> {
        let (e, a) = (self.beam_elevation(row), self.column_azimuth(col));
        Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
    }

    /// Cell that a direction falls into, or `None` outside the fov.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        let az = p.y.atan2(p.x).rem_euclid(TAU);
        let col = ((az / self.azimuth_width()).floor() as usize).min(self.azimuth_bins - 1);
        let elev = p.z.atan2(p.x.hypot(p.y));
        let step = self.beam_spacing();
        let row = if self.beams == 1 {
            let mid = self.beam_elevation(0);
            if (elev - mid).abs() > 0.5 * step {
                return None;
            }
            0
        } else {
            let fr = (self.elevation_max - elev) / step;
            if fr < -0.5 || fr > (self.beams - 1) as f64 + 0.5 {
                return None;
            }
            (fr.round().max(0.0) as usize).min(self.beams - 1)
        };
        Some((row, col))
    }
}

/// Row-major boolean grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMask {
    rows: usize,
    cols: usize,
    labels: Vec<bool>,
}

impl SegMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, labels: vec![false; rows * cols] }
    }

    pub fn from_labels(rows: usize, cols: usize, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "mask of {rows}x{cols} needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.labels[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.labels[r * self.cols + c] = v;
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// B x A polar grid of ranges. Invalid cells carry range 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeImage {
    config: SensorConfig,
    ranges: Vec<f32>,
    valid: Vec<bool>,
}

impl RangeImage {
    pub fn empty(config: SensorConfig) -> Self {
        let n = config.cells();
        Self { config, ranges: vec![0.0; n], valid: vec![false; n] }
    }

    /// Builds an image from raw grids, checking the range invariant.
    pub fn from_parts(config: SensorConfig, ranges: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = config.cells();
        if ranges.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} cells, got {} ranges / {} flags",
                ranges.len(),
                valid.len()
            )));
        }
        for (i, (&r, &v)) in ranges.iter().zip(&valid).enumerate() {
            if v && !(r >= config.min_range && r <= config.max_range) {
                return Err(Error::OutOfRange(format!("cell {i}: range {r} outside sensor limits")));
            }
            if !v && r != 0.0 {
                return Err(Error::OutOfRange(format!("cell {i}: invalid cell with nonzero range {r}")));
            }
        }
        Ok(Self { config, ranges, valid })
    }

    /// Builds an image from ranges alone; cells within the sensor limits
    /// become valid, everything else is invalidated.
    pub fn from_ranges(config: SensorConfig, ranges: &[f64]) -> Result<Self> {
        if ranges.len() != config.cells() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} ranges, got {}",
                config.cells(),
                ranges.len()
            )));
        }
        let mut img = Self::empty(config);
        for (i, &r) in ranges.iter().enumerate() {
            img.set_index(i, r as f32);
        }
        Ok(img)
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.beams
    }

    pub fn cols(&self) -> usize {
        self.config.azimuth_bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn ranges(&self) -> &[f32] {
        &self.ranges
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn range(&self, r: usize, c: usize) -> f32 {
        self.ranges[r * self.cols() + c]
    }

    pub fn is_valid(&self, r: usize, c: usize) -> bool {
        self.valid[r * self.cols() + c]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f32> {
        let i = r * self.cols() + c;
        self.valid[i].then_some(self.ranges[i])
    }

    /// Stores `range` if it lies within the sensor limits, otherwise
    /// invalidates the cell.
    pub fn set(&mut self, r: usize, c: usize, range: f32) {
        let i = r * self.cols() + c;
        self.set_index(i, range);
    }

    pub(crate) fn set_index(&mut self, i: usize, range: f32) {
        if range.is_finite() && range >= self.config.min_range && range <= self.config.max_range {
            self.ranges[i] = range;
            self.valid[i] = true;
        } else {
            self.ranges[i] = 0.0;
            self.valid[i] = false;
        }
    }

    pub fn invalidate(&mut self, r: usize, c: usize) {
        let i = r * self.cols() + c;
        self.ranges[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &RangeImage) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_mask(&self, mask: &SegMask) -> Result<()> {
        if mask.shape() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs range image {:?}",
                mask.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// Ranges scaled by `1 / max_range`, invalid cells 0.
    pub fn normalized(&self) -> Vec<f64> {
        let s = 1.0 / self.config.max_range as f64;
        self.ranges.iter().map(|&r| r as f64 * s).collect()
    }

    pub fn valid_f64(&self) -> Vec<f64> {
        self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}

/// Point cloud in the sensor frame, metres.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn transformed(&self, t: &Isometry3<f64>) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| t * p).collect() }
    }
}

/// Static/dynamic scans captured at one pose, with their segmentation masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPair {
    pub dynamic: RangeImage,
    pub static_scan: RangeImage,
    pub dynamic_mask: SegMask,
    pub static_mask: SegMask,
    pub sequence_id: u32,
    pub frame_index: usize,
    /// Sensor pose in the world frame.
    pub gt_pose: Isometry3<f64>,
    pub timestamp: f64,
}

impl ScanPair {
    pub fn check(&self) -> Result<()> {
        let s = self.dynamic.shape();
        if self.static_scan.shape() != s || self.dynamic_mask.shape() != s || self.static_mask.shape() != s {
            return Err(Error::ShapeMismatch("scan pair grids disagree".into()));
        }
        if self.static_mask.count() != 0 {
            return Err(Error::Precondition("static mask has dynamic cells".into()));
        }
        let rot = self.gt_pose.rotation.to_rotation_matrix();
        let m = rot.matrix();
        if ((m * m.transpose()) - nalgebra::Matrix3::identity()).norm() > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition("gt pose is not a proper rigid transform".into()));
        }
        Ok(())
    }
}

use nalgebra::Point3;

use super::{PointCloud, RangeImage, SensorConfig};
use crate::error::Result;

/// Spherical projection of a cloud onto the sensor grid. When several
/// points land in one cell the nearest one wins.
pub fn project(pc: &PointCloud, cfg: &SensorConfig) -> Result<RangeImage> {
    cfg.validate()?;
    let mut img = RangeImage::empty(*cfg);
    for p in &pc.points {
        let v = p.coords;
        let r = v.norm();
        if !r.is_finite() {
            continue;
        }
        let r32 = r as f32;
        if r32 < cfg.min_range || r32 > cfg.max_range {
            continue;
        }
        let Some((row, col)) = cfg.cell_of(&v) else { continue };
        match img.get(row, col) {
            Some(existing) if existing <= r32 => {}
            _ => img.set(row, col, r32),
        }
    }
    Ok(img)
}

/// One point per valid cell along the cell-centre ray.
pub fn unproject(ri: &RangeImage) -> PointCloud {
    let cfg = ri.config();
    let mut points = Vec::with_capacity(ri.valid_count());
    for row in 0..ri.rows() {
        for col in 0..ri.cols() {
            if let Some(r) = ri.get(row, col) {
                points.push(Point3::from(cfg.ray_direction(row, col) * r as f64));
            }
        }
    }
    PointCloud::new(points)
}

/// Like [`unproject`] but also reports the source cell of each point.
pub fn unproject_indexed(ri: &RangeImage) -> (PointCloud, Vec<(usize, usize)>) {
    let cfg = ri.config();
    let mut points = Vec::with_capacity(ri.valid_count());
    let mut cells = Vec::with_capacity(ri.valid_count());
    for row in 0..ri.rows() {
        for col in 0..ri.cols() {
            if let Some(r) = ri.get(row, col) {
                points.push(Point3::from(cfg.ray_direction(row, col) * r as f64));
                cells.push((row, col));
            }
        }
    }
    (PointCloud::new(points), cells)
}

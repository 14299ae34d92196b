//! Deterministic synthetic LiDAR world: an axis-aligned corridor with box
//! and cylinder obstacles, constant-velocity box actors, and a sensor that
//! follows a waypoint path. Every pose is raycast twice, with and without
//! the actors, which yields exact static/dynamic correspondence.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{RangeImage, ScanPair, SegMask, SensorConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub sequence_id: u32,
    pub corridor_length: f64,
    pub corridor_width: f64,
    pub wall_height: f64,
    /// Facades are wall segments set back from the corridor boundary by a
    /// random depth in `[0, facade_depth_max]`.
    pub facade_depth_max: f64,
    pub facade_segment_min: f64,
    pub facade_segment_max: f64,
    pub static_obstacles: usize,
    pub obstacle_size_min: f64,
    pub obstacle_size_max: f64,
    pub dynamic_actors: usize,
    pub actor_speed_min: f64,
    pub actor_speed_max: f64,
    /// Sensor path in the corridor's ground plane, metres.
    pub waypoints: Vec<[f64; 2]>,
    pub ego_speed: f64,
    pub sensor_height: f64,
    pub frame_count: usize,
    pub frame_rate: f64,
    /// Standard deviation of per-cell range noise, metres. The static and
    /// dynamic casts of a frame share one noise draw per cell.
    pub range_noise: f64,
    pub seed: u64,
    pub sensor: SensorConfig,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            sequence_id: 0,
            corridor_length: 90.0,
            corridor_width: 16.0,
            wall_height: 4.0,
            facade_depth_max: 1.5,
            facade_segment_min: 2.0,
            facade_segment_max: 6.0,
            static_obstacles: 14,
            obstacle_size_min: 0.6,
            obstacle_size_max: 2.0,
            dynamic_actors: 6,
            actor_speed_min: 1.0,
            actor_speed_max: 6.0,
            waypoints: vec![[10.0, -2.0], [35.0, -1.5], [60.0, -2.5], [80.0, -2.0]],
            ego_speed: 3.0,
            sensor_height: 1.8,
            frame_count: 200,
            frame_rate: 10.0,
            range_noise: 0.02,
            seed: 0,
            sensor: SensorConfig::default(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.frame_count < 2 {
            return bad("frame_count must be >= 2");
        }
        if !(self.range_noise >= 0.0 && self.range_noise.is_finite()) {
            return bad("range_noise must be finite and >= 0");
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad("frame_rate must be positive");
        }
        if !(self.corridor_length > 0.0 && self.corridor_width > 0.0 && self.wall_height > 0.0) {
            return bad("corridor dimensions must be positive");
        }
        if !(self.facade_depth_max >= 0.0 && self.facade_depth_max + 3.0 < self.corridor_width / 2.0) {
            return bad("facade_depth_max must leave room for the driving lanes");
        }
        if !(self.facade_segment_min > 0.0 && self.facade_segment_min <= self.facade_segment_max) {
            return bad("facade segment range must satisfy 0 < min <= max");
        }
        if !(self.obstacle_size_min > 0.0 && self.obstacle_size_min <= self.obstacle_size_max) {
            return bad("obstacle size range must satisfy 0 < min <= max");
        }
        if !(self.actor_speed_min.is_finite()
            && self.actor_speed_max.is_finite()
            && self.actor_speed_min <= self.actor_speed_max)
        {
            return bad("actor speed range must be finite with min <= max");
        }
        if self.waypoints.is_empty() || self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return bad("need at least one finite waypoint");
        }
        if !(self.ego_speed >= 0.0 && self.ego_speed.is_finite()) {
            return bad("ego_speed must be finite and >= 0");
        }
        if !(self.sensor_height > 0.0 && self.sensor_height < self.wall_height) {
            return bad("sensor_height must lie between floor and wall top");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k] < self.min[k] || o[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[k];
            let (mut a, mut b) = ((self.min[k] - o[k]) * inv, (self.max[k] - o[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        if t0 > 0.0 {
            Some(t0)
        } else if t1 > 0.0 {
            Some(t1)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Cylinder {
    cx: f64,
    cy: f64,
    radius: f64,
    height: f64,
}

impl Cylinder {
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut keep = |t: f64| {
            if t > 0.0 && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        let (ox, oy) = (o.x - self.cx, o.y - self.cy);
        let a = d.x * d.x + d.y * d.y;
        if a > 1e-15 {
            let b = 2.0 * (ox * d.x + oy * d.y);
            let c = ox * ox + oy * oy - self.radius * self.radius;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    let z = o.z + t * d.z;
                    if (0.0..=self.height).contains(&z) {
                        keep(t);
                    }
                }
            }
        }
        if d.z.abs() > 1e-15 {
            let t = (self.height - o.z) / d.z;
            let (x, y) = (ox + t * d.x, oy + t * d.y);
            if x * x + y * y <= self.radius * self.radius {
                keep(t);
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug)]
struct Actor {
    x0: f64,
    y: f64,
    half: Vector3<f64>,
    speed: f64,
}

/// Scene geometry instantiated from a [`WorldSpec`].
#[derive(Clone, Debug)]
pub struct World {
    spec: WorldSpec,
    boxes: Vec<Aabb>,
    cylinders: Vec<Cylinder>,
    actors: Vec<Actor>,
}

impl World {
    pub fn build(spec: &WorldSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (len, half_w) = (spec.corridor_length, spec.corridor_width / 2.0);
        let mut boxes = Vec::new();
        let mut cylinders = Vec::new();
        for side in [1.0, -1.0] {
            let mut x = 0.0;
            while x < len {
                let seg = rng.gen_range(spec.facade_segment_min..=spec.facade_segment_max).min(len - x);
                let depth = rng.gen_range(0.0..=spec.facade_depth_max);
                let (inner, outer) = (side * (half_w - depth), side * half_w);
                boxes.push(Aabb {
                    min: Vector3::new(x, inner.min(outer), 0.0),
                    max: Vector3::new(x + seg, inner.max(outer), spec.wall_height),
                });
                x += seg;
            }
        }
        let inner_w = half_w - spec.facade_depth_max;
        for _ in 0..spec.static_obstacles {
            let size = rng.gen_range(spec.obstacle_size_min..=spec.obstacle_size_max);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            // obstacles hug the walls, clear of the driving lanes
            let (lo, hi) = ((inner_w - 2.5).max(0.0), (inner_w - size / 2.0).max(0.0));
            let y = side * rng.gen_range(lo.min(hi)..=hi.max(lo));
            let x = rng.gen_range(0.0..len);
            let height = rng.gen_range(0.8..=spec.wall_height * 0.8);
            if rng.gen_bool(0.5) {
                let h = size / 2.0;
                boxes.push(Aabb { min: Vector3::new(x - h, y - h, 0.0), max: Vector3::new(x + h, y + h, height) });
            } else {
                cylinders.push(Cylinder { cx: x, cy: y, radius: size / 2.0, height });
            }
        }
        let mut actors = Vec::new();
        for _ in 0..spec.dynamic_actors {
            let car = rng.gen_bool(0.6);
            let half = if car { Vector3::new(2.0, 0.9, 0.75) } else { Vector3::new(0.3, 0.3, 0.9) };
            let lane_lo = 1.0 + half.y;
            let lane_hi = (inner_w - 2.6 - half.y).max(lane_lo);
            let y = rng.gen_range(lane_lo..=lane_hi);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let speed = dir * rng.gen_range(spec.actor_speed_min..=spec.actor_speed_max);
            actors.push(Actor { x0: rng.gen_range(0.0..len), y, half, speed });
        }
        Ok(Self { spec: spec.clone(), boxes, cylinders, actors })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    fn path_length(&self) -> f64 {
        self.spec.waypoints.windows(2).map(|w| dist2(w[0], w[1])).sum()
    }

    fn path_point(&self, s: f64) -> [f64; 2] {
        let wp = &self.spec.waypoints;
        let mut s = s.max(0.0);
        for w in wp.windows(2) {
            let l = dist2(w[0], w[1]);
            if s <= l && l > 0.0 {
                let f = s / l;
                return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
            }
            s -= l;
        }
        *wp.last().expect("validated nonempty")
    }

    /// Ground-truth sensor pose at time `t`.
    pub fn pose_at(&self, t: f64) -> Isometry3<f64> {
        let total = self.path_length();
        let s = (self.spec.ego_speed * t).min(total);
        let p = self.path_point(s);
        let yaw = if total > 0.0 {
            let (a, b) = (self.path_point((s - 0.75).max(0.0)), self.path_point((s + 0.75).min(total)));
            (b[1] - a[1]).atan2(b[0] - a[0])
        } else {
            0.0
        };
        Isometry3::from_parts(
            Translation3::new(p[0], p[1], self.spec.sensor_height),
            UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        )
    }

    fn actor_boxes(&self, t: f64) -> Vec<Aabb> {
        let len = self.spec.corridor_length;
        self.actors
            .iter()
            .map(|a| {
                let x = (a.x0 + a.speed * t).rem_euclid(len);
                let c = Vector3::new(x, a.y, a.half.z);
                Aabb { min: c - a.half, max: c + a.half }
            })
            .collect()
    }

    fn static_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (len, half_w, wh) = (self.spec.corridor_length, self.spec.corridor_width / 2.0, self.spec.wall_height);
        let mut best: Option<f64> = None;
        let mut keep = |t: Option<f64>| {
            if let Some(t) = t {
                if t > 0.0 && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        };
        if d.z < 0.0 {
            keep(Some(-o.z / d.z));
        }
        if d.y.abs() > 1e-15 {
            for wall in [half_w, -half_w] {
                let t = (wall - o.y) / d.y;
                let z = o.z + t * d.z;
                if (0.0..=wh).contains(&z) {
                    keep(Some(t));
                }
            }
        }
        if d.x.abs() > 1e-15 {
            for end in [0.0, len] {
                let t = (end - o.x) / d.x;
                let (y, z) = (o.y + t * d.y, o.z + t * d.z);
                if (0.0..=wh).contains(&z) && y.abs() <= half_w {
                    keep(Some(t));
                }
            }
        }
        for b in &self.boxes {
            keep(b.hit(o, d));
        }
        for c in &self.cylinders {
            keep(c.hit(o, d));
        }
        best
    }

    /// Raycasts one frame, returning `(static, dynamic)` range images.
    /// `frame` selects the range-noise draw.
    pub fn cast(&self, pose: &Isometry3<f64>, t: f64, frame: usize) -> (RangeImage, RangeImage) {
        let cfg = self.spec.sensor;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x9e37_79b9_7f4a_7c15 ^ (frame as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
        let noise = Normal::new(0.0, self.spec.range_noise).expect("validated noise level");
        let actors = self.actor_boxes(t);
        let o = pose.translation.vector;
        let mut stat = RangeImage::empty(cfg);
        let mut dynm = RangeImage::empty(cfg);
        let min_r = cfg.min_range as f64;
        for row in 0..cfg.beams {
            for col in 0..cfg.azimuth_bins {
                let d = pose.rotation * cfg.ray_direction(row, col);
                let eps: f64 = noise.sample(&mut noise_rng);
                let ts = self.static_hit(&o, &d);
                // actors inside the sensor's blind zone are not observed
                let ta = actors
                    .iter()
                    .filter_map(|b| b.hit(&o, &d))
                    .filter(|&t| t >= min_r)
                    .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
                if let Some(ts) = ts {
                    stat.set(row, col, (ts + eps) as f32);
                }
                let td = match (ts, ta) {
                    (Some(s), Some(a)) => Some(s.min(a)),
                    (s, a) => s.or(a),
                };
                if let Some(td) = td {
                    dynm.set(row, col, (td + eps) as f32);
                }
            }
        }
        (stat, dynm)
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Cells where the two casts disagree.
pub fn difference_mask(stat: &RangeImage, dynm: &RangeImage) -> SegMask {
    let (rows, cols) = stat.shape();
    let labels = stat
        .ranges()
        .iter()
        .zip(dynm.ranges())
        .zip(stat.valid().iter().zip(dynm.valid()))
        .map(|((a, b), (va, vb))| a.to_bits() != b.to_bits() || va != vb)
        .collect();
    SegMask::from_labels(rows, cols, labels).expect("same shape")
}

/// Generates `spec.frame_count` corresponding static/dynamic frames.
pub fn synth_sequence(spec: &WorldSpec) -> Result<Vec<ScanPair>> {
    let world = World::build(spec)?;
    let cfg = spec.sensor;
    (0..spec.frame_count)
        .map(|i| {
            let t = i as f64 / spec.frame_rate;
            let pose = world.pose_at(t);
            let (stat, dynm) = world.cast(&pose, t, i);
            if stat.valid_count() == 0 {
                return Err(Error::DegenerateWorld(format!("frame {i} sees no static geometry within range")));
            }
            Ok(ScanPair {
                dynamic_mask: difference_mask(&stat, &dynm),
                static_mask: SegMask::empty(cfg.beams, cfg.azimuth_bins),
                dynamic: dynm,
                static_scan: stat,
                sequence_id: spec.sequence_id,
                frame_index: i,
                gt_pose: pose,
                timestamp: t,
            })
        })
        .collect()
}

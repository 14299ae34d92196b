use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

const QUAT_TOL: f64 = 1e-9;

/// Timestamped rigid pose. The rotation is a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity(timestamp: f64) -> Self {
        Self { timestamp, translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    /// Builds a pose from raw quaternion components `(qx, qy, qz, qw)`;
    /// the norm must be 1 within 1e-9.
    pub fn from_components(timestamp: f64, t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        if !timestamp.is_finite() || t.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite pose component".into()));
        }
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let n = quat.norm();
        if (n - 1.0).abs() > QUAT_TOL {
            return Err(Error::OutOfRange(format!("quaternion norm {n} is not 1")));
        }
        Ok(Self {
            timestamp,
            translation: Vector3::from(t),
            rotation: UnitQuaternion::new_unchecked(quat),
        })
    }

    pub fn from_isometry(timestamp: f64, iso: &Isometry3<f64>) -> Self {
        Self { timestamp, translation: iso.translation.vector, rotation: iso.rotation }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }
}

/// Ordered pose sequence with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::Precondition(format!("trajectory needs >= 2 poses, got {}", poses.len())));
        }
        for w in poses.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Precondition(format!(
                    "timestamps not increasing: {} then {}",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        Ok(Self { poses })
    }

    pub fn from_isometries(timestamps: &[f64], isos: &[Isometry3<f64>]) -> Result<Self> {
        if timestamps.len() != isos.len() {
            return Err(Error::ShapeMismatch("timestamps vs poses".into()));
        }
        Self::new(timestamps.iter().zip(isos).map(|(&t, i)| Pose::from_isometry(t, i)).collect())
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.timestamp).collect()
    }

    pub fn isometries(&self) -> Vec<Isometry3<f64>> {
        self.poses.iter().map(Pose::to_isometry).collect()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &Isometry3<f64>) -> Self {
        let poses = self.poses.iter().map(|p| Pose::from_isometry(p.timestamp, &(t * p.to_isometry()))).collect();
        Self { poses }
    }

    /// Sum of consecutive translation steps.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum()
    }

    /// One line per pose: `timestamp tx ty tz qx qy qz qw`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.poses {
            let q = p.rotation.quaternion();
            let t = p.translation;
            writeln!(s, "{} {} {} {} {} {} {} {}", p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w).expect("string write");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {f:?}: {e}", n + 1))))
                .collect::<Result<_>>()?;
            if v.len() != 8 {
                return Err(Error::Parse(format!("line {}: expected 8 fields, got {}", n + 1, v.len())));
            }
            poses.push(
                Pose::from_components(v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])
                    .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?,
            );
        }
        Self::new(poses)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = Isometry3<f64>> {
        (prop::array::uniform3(-100.0f64..100.0), prop::array::uniform3(-3.0f64..3.0))
            .prop_map(|(t, r)| Isometry3::new(Vector3::from(t), Vector3::from(r)))
    }

    proptest! {
        #[test]
        fn text_round_trip_is_lossless(isos in prop::collection::vec(arb_pose(), 2..12)) {
            let ts: Vec<f64> = (0..isos.len()).map(|i| 0.1 * i as f64 + 1e-3).collect();
            let traj = Trajectory::from_isometries(&ts, &isos).unwrap();
            let back = Trajectory::parse(&traj.to_text()).unwrap();
            prop_assert_eq!(back, traj);
        }
    }

    #[test]
    fn rejects_bad_quaternion_and_order() {
        assert!(Trajectory::parse("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1.1\n").is_err());
        assert!(Trajectory::parse("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n").is_err());
        assert!(Trajectory::parse("0 0 0 0 0 0 0 1\n").is_err());
        assert!(Trajectory::parse("0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n").is_err());
        let ok = Trajectory::parse("# header\n0 1 2 3 0 0 0 1\n0.5 1 2 3 0 0 0 -1\n").unwrap();
        assert_eq!(ok.len(), 2);
    }
}

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::Trajectory;
use crate::error::{Error, Result};

/// Least-squares rigid transform `T` minimising `sum |dst_i - T src_i|^2`
/// (Kabsch with the determinant fix). Rank-deficient inputs still yield a
/// proper rotation that attains the minimum.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Isometry3<f64> {
    assert_eq!(src.len(), dst.len(), "kabsch needs paired points");
    assert!(!src.is_empty(), "kabsch needs at least one pair");
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Isometry3::from_parts(Translation3::from(t), rot)
}

fn positions(t: &Trajectory) -> Vec<Point3<f64>> {
    t.poses().iter().map(|p| Point3::from(p.translation)).collect()
}

/// Second singular value of the centred position set relative to the first.
fn spread_ratio(p: &[Point3<f64>]) -> f64 {
    let n = p.len() as f64;
    let c = p.iter().fold(Vector3::zeros(), |a, q| a + q.coords) / n;
    let mut cov = Matrix3::zeros();
    for q in p {
        let d = q.coords - c;
        cov += d * d.transpose();
    }
    let mut sv: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 1e-12 {
        0.0
    } else {
        sv[1] / sv[0]
    }
}

fn check_pair(est: &Trajectory, gt: &Trajectory) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("trajectory lengths {} vs {}", est.len(), gt.len())));
    }
    Ok(())
}

/// Rigid alignment (scale fixed at 1) of `est` onto `gt`. Requires at least
/// three poses whose positions are neither coincident nor collinear.
pub fn umeyama_align(est: &Trajectory, gt: &Trajectory) -> Result<Isometry3<f64>> {
    check_pair(est, gt)?;
    if est.len() < 3 {
        return Err(Error::Precondition(format!("alignment needs >= 3 poses, got {}", est.len())));
    }
    let (pe, pg) = (positions(est), positions(gt));
    for (name, p) in [("estimate", &pe), ("ground truth", &pg)] {
        if spread_ratio(p) < 1e-9 {
            return Err(Error::DegenerateGeometry(format!("{name} positions are collinear or coincident")));
        }
    }
    Ok(kabsch(&pe, &pg))
}

/// RMSE of translational residuals after rigid alignment. Straight-line
/// trajectories, where the alignment is not unique, use the minimum-norm
/// least-squares solution.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_pair(est, gt)?;
    let (pe, pg) = (positions(est), positions(gt));
    let t = kabsch(&pe, &pg);
    let sse: f64 = pe.iter().zip(&pg).map(|(e, g)| (g - t * e).norm_squared()).sum();
    Ok((sse / pe.len() as f64).sqrt())
}

/// Rotation angle of a unit quaternion in radians, `2 atan2(|v|, |w|)`,
/// which stays accurate near the identity.
pub fn geodesic_angle(q: &UnitQuaternion<f64>) -> f64 {
    2.0 * q.imag().norm().atan2(q.scalar().abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rpe {
    /// Translation RMSE, metres.
    pub trans: f64,
    /// Rotation RMSE, degrees.
    pub rot_deg: f64,
}

/// Relative pose error over a frame interval `delta`.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<Rpe> {
    check_pair(est, gt)?;
    if delta < 1 || delta >= est.len() {
        return Err(Error::Precondition(format!("rpe interval {delta} outside [1, {})", est.len())));
    }
    let (e, g) = (est.isometries(), gt.isometries());
    let mut st = 0.0;
    let mut sr = 0.0;
    let n = e.len() - delta;
    for i in 0..n {
        let rel_g = g[i].inverse() * g[i + delta];
        let rel_e = e[i].inverse() * e[i + delta];
        if rel_e == rel_g {
            continue;
        }
        let err = rel_g.inverse() * rel_e;
        st += err.translation.vector.norm_squared();
        sr += geodesic_angle(&err.rotation).to_degrees().powi(2);
    }
    Ok(Rpe { trans: (st / n as f64).sqrt(), rot_deg: (sr / n as f64).sqrt() })
}

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Isometry3, Matrix3, Matrix6, Point3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::align::kabsch;
use super::{Pose, Trajectory};
use crate::error::{Error, Result};
use crate::scanio::{unproject, PointCloud, RangeImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcpMetric {
    PointToPoint,
    /// Residuals projected on destination normals estimated within the gate.
    PointToPlane,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub metric: IcpMetric,
    pub max_iterations: usize,
    /// Correspondences farther apart than this are ignored, metres.
    pub gate: f64,
    /// Stop once the incremental update moves less than this.
    pub convergence: f64,
    /// Voxel edge for downsampling before registration; 0 disables.
    pub voxel: f64,
    /// Minimum inlier fraction of the source cloud.
    pub min_fitness: f64,
    /// Registrations that move further than this from the constant-velocity
    /// prediction are rejected as degenerate, metres.
    pub max_correction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            metric: IcpMetric::PointToPlane,
            max_iterations: 30,
            gate: 1.0,
            convergence: 1e-6,
            voxel: 0.2,
            min_fitness: 0.3,
            max_correction: 0.5,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations >= 1
            && self.gate > 0.0
            && self.convergence >= 0.0
            && self.voxel >= 0.0
            && self.max_correction > 0.0
            && (0.0..=1.0).contains(&self.min_fitness);
        if !ok {
            return Err(Error::InvalidConfig(format!("bad ICP config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Maps source points into the destination frame.
    pub transform: Isometry3<f64>,
    /// RMS distance over inlier correspondences.
    pub rms: f64,
    /// Inlier fraction of the source cloud.
    pub fitness: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

type Key = (i64, i64, i64);

fn key(p: &Point3<f64>, cell: f64) -> Key {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
}

/// Uniform hash grid for fixed-radius nearest-neighbour queries.
struct Grid<'a> {
    cell: f64,
    points: &'a [Point3<f64>],
    buckets: HashMap<Key, Vec<u32>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        let mut buckets: HashMap<Key, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, points, buckets }
    }

    fn for_each_near(&self, q: &Point3<f64>, mut f: impl FnMut(usize, f64)) {
        let (kx, ky, kz) = key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in b {
                            f(i as usize, (self.points[i as usize] - q).norm_squared());
                        }
                    }
                }
            }
        }
    }

    /// Nearest point within `cell`; ties go to the lower index.
    fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.for_each_near(q, |i, d2| {
            let better = match best {
                None => true,
                Some((j, bd)) => d2 < bd || (d2 == bd && i < j),
            };
            if better {
                best = Some((i, d2));
            }
        });
        best.filter(|&(_, d2)| d2 <= self.cell * self.cell)
    }

    /// Surface normal from the neighbourhood covariance; `None` when the
    /// neighbourhood is too small or close to a line.
    fn normal_at(&self, i: usize) -> Option<Vector3<f64>> {
        let q = self.points[i];
        let r2 = self.cell * self.cell;
        let mut n = 0usize;
        let mut sum = Vector3::zeros();
        let mut outer = Matrix3::zeros();
        self.for_each_near(&q, |j, d2| {
            if d2 <= r2 {
                let v = self.points[j].coords;
                n += 1;
                sum += v;
                outer += v * v.transpose();
            }
        });
        if n < 4 {
            return None;
        }
        let mean = sum / n as f64;
        let cov = outer / n as f64 - mean * mean.transpose();
        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if l1 < 0.05 * l2 || l1 < 1e-4 {
            return None;
        }
        Some(eig.eigenvectors.column(order[0]).into_owned())
    }
}

/// One Gauss-Newton step of the linearised point-to-plane objective. A
/// small damping term leaves unconstrained directions (e.g. sliding along a
/// wall) at their current value.
fn plane_step(src: &[Point3<f64>], idx: &[usize], dst: &[Point3<f64>], normals: &[Option<Vector3<f64>>]) -> Option<Isometry3<f64>> {
    let mut a = Matrix6::zeros();
    let mut b = Vector6::zeros();
    let mut used = 0usize;
    for (p, &j) in src.iter().zip(idx) {
        let Some(n) = normals[j] else { continue };
        let c = p.coords.cross(&n);
        let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        let r = (p - dst[j]).dot(&n);
        a += row * row.transpose();
        b -= row * r;
        used += 1;
    }
    if used < 6 {
        return None;
    }
    let damping = 1e-6 * a.trace().max(1e-12);
    for i in 0..6 {
        a[(i, i)] += damping;
    }
    let x = a.cholesky()?.solve(&b);
    Some(Isometry3::new(Vector3::new(x[3], x[4], x[5]), Vector3::new(x[0], x[1], x[2])))
}

/// Voxel-grid downsampling that keeps, per occupied voxel, the input point
/// closest to the voxel centroid. Output is ordered by voxel key.
pub fn voxel_downsample(pc: &PointCloud, voxel: f64) -> PointCloud {
    if voxel <= 0.0 {
        return pc.clone();
    }
    let mut cells: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (i, p) in pc.points.iter().enumerate() {
        cells.entry(key(p, voxel)).or_default().push(i);
    }
    let points = cells
        .values()
        .map(|idx| {
            let c = idx.iter().map(|&i| pc.points[i].coords).sum::<Vector3<f64>>() / idx.len() as f64;
            let best = idx
                .iter()
                .copied()
                .min_by(|&a, &b| (pc.points[a].coords - c).norm_squared().total_cmp(&(pc.points[b].coords - c).norm_squared()))
                .expect("nonempty voxel");
            pc.points[best]
        })
        .collect();
    PointCloud::new(points)
}

/// ICP of `src` onto `dst` starting from `init`. Point-to-plane
/// registration estimates destination normals from neighbourhoods within
/// the gate radius.
pub fn icp_register(src: &PointCloud, dst: &PointCloud, init: &Isometry3<f64>, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    if src.is_empty() || dst.is_empty() {
        return Err(Error::Empty("icp input cloud"));
    }
    let grid = Grid::new(&dst.points, cfg.gate);
    let normals: Vec<Option<Vector3<f64>>> = match cfg.metric {
        IcpMetric::PointToPoint => Vec::new(),
        IcpMetric::PointToPlane => (0..dst.len()).map(|i| grid.normal_at(i)).collect(),
    };
    register(src, dst, &grid, &normals, init, cfg)
}

fn register(
    src: &PointCloud,
    dst: &PointCloud,
    grid: &Grid,
    normals: &[Option<Vector3<f64>>],
    init: &Isometry3<f64>,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    let mut t = *init;
    let mut iterations = 0;
    let mut ps = Vec::with_capacity(src.len());
    let mut pd = Vec::with_capacity(src.len());
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        ps.clear();
        pd.clear();
        for p in &src.points {
            let q = t * p;
            if let Some((j, _)) = grid.nearest(&q) {
                ps.push(q);
                pd.push(j);
            }
        }
        let step = match cfg.metric {
            IcpMetric::PointToPoint => {
                if ps.len() < 3 {
                    break;
                }
                let targets: Vec<Point3<f64>> = pd.iter().map(|&j| dst.points[j]).collect();
                kabsch(&ps, &targets)
            }
            IcpMetric::PointToPlane => match plane_step(&ps, &pd, &dst.points, normals) {
                Some(s) => s,
                None => break,
            },
        };
        t = step * t;
        let moved = step.translation.vector.norm() + step.rotation.angle();
        if moved < cfg.convergence {
            break;
        }
    }
    // final correspondence pass for the reported statistics
    let mut inliers = 0usize;
    let mut final_sse = 0.0;
    for p in &src.points {
        if let Some((_, d2)) = grid.nearest(&(t * p)) {
            inliers += 1;
            final_sse += d2;
        }
    }
    let fitness = inliers as f64 / src.len() as f64;
    let rms = if inliers > 0 { (final_sse / inliers as f64).sqrt() } else { f64::INFINITY };
    Ok(IcpResult { transform: t, rms, fitness, iterations, degenerate: inliers < 3 || fitness < cfg.min_fitness })
}

#[derive(Clone, Debug)]
pub struct Odometry {
    pub trajectory: Trajectory,
    /// Per registration step (length = scans - 1).
    pub degenerate: Vec<bool>,
}

impl Odometry {
    pub fn degenerate_steps(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Normal of each valid cell from a PCA fit over its 3x3 image
/// neighbourhood, skipping neighbours across depth discontinuities.
pub fn image_normals(ri: &RangeImage) -> Vec<Option<Vector3<f64>>> {
    let cfg = ri.config();
    let (rows, cols) = ri.shape();
    let point = |r: usize, c: usize| ri.get(r, c).map(|v| cfg.ray_direction(r, c) * v as f64);
    let mut out = Vec::with_capacity(ri.valid_count());
    for r in 0..rows {
        for c in 0..cols {
            let Some(range) = ri.get(r, c) else { continue };
            let mut pts = Vec::with_capacity(9);
            for dr in -1isize..=1 {
                let rr = r as isize + dr;
                if rr < 0 || rr >= rows as isize {
                    continue;
                }
                for dc in -1isize..=1 {
                    let cc = (c as isize + dc).rem_euclid(cols as isize) as usize;
                    if let (Some(p), Some(nr)) = (point(rr as usize, cc), ri.get(rr as usize, cc)) {
                        if (nr - range).abs() <= 0.35 * range {
                            pts.push(p);
                        }
                    }
                }
            }
            out.push(fit_normal(&pts));
        }
    }
    out
}

fn fit_normal(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if pts.len() < 4 {
        return None;
    }
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = (cov / n).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if l1 < 0.01 * l2 || l1 <= 0.0 {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).into_owned())
}

struct Frame {
    /// Downsampled registration source.
    source: PointCloud,
    /// Full-resolution target with per-point normals.
    target: PointCloud,
    normals: Vec<Option<Vector3<f64>>>,
}

fn prepare(ri: &RangeImage, cfg: &IcpConfig) -> Frame {
    let target = unproject(ri);
    let normals = match cfg.metric {
        IcpMetric::PointToPoint => Vec::new(),
        IcpMetric::PointToPlane => image_normals(ri),
    };
    Frame { source: voxel_downsample(&target, cfg.voxel), target, normals }
}

/// Scan-to-scan ICP odometry with a constant-velocity initial guess. The
/// first pose is the identity. Degenerate steps fall back to the guess.
pub fn odometry(scans: &[RangeImage], timestamps: &[f64], cfg: &IcpConfig) -> Result<Odometry> {
    cfg.validate()?;
    if scans.len() < 2 {
        return Err(Error::Precondition(format!("odometry needs >= 2 scans, got {}", scans.len())));
    }
    if timestamps.len() != scans.len() {
        return Err(Error::ShapeMismatch("one timestamp per scan required".into()));
    }
    let frames: Vec<Frame> = scans.iter().map(|s| prepare(s, cfg)).collect();
    let mut poses = vec![Isometry3::identity()];
    let mut velocity = Isometry3::identity();
    let mut degenerate = Vec::with_capacity(scans.len() - 1);
    for k in 1..scans.len() {
        let (src, dst) = (&frames[k].source, &frames[k - 1]);
        let step = if src.is_empty() || dst.target.is_empty() {
            None
        } else {
            let grid = Grid::new(&dst.target.points, cfg.gate);
            let r = register(src, &dst.target, &grid, &dst.normals, &velocity, cfg)?;
            let jump = (r.transform.translation.vector - velocity.translation.vector).norm();
            (!r.degenerate && jump <= cfg.max_correction).then_some(r.transform)
        };
        degenerate.push(step.is_none());
        let rel = step.unwrap_or(velocity);
        velocity = rel;
        poses.push(poses[k - 1] * rel);
    }
    let traj = Trajectory::new(poses.iter().zip(timestamps).map(|(p, &t)| Pose::from_isometry(t, p)).collect())?;
    Ok(Odometry { trajectory: traj, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanio::{synth_sequence, WorldSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sparse_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-3.0..3.0)))
                .collect(),
        )
    }

    #[test]
    fn identical_clouds_register_to_identity() {
        let pc = sparse_cloud(1, 300);
        let r = icp_register(&pc, &pc, &Isometry3::identity(), &IcpConfig::default()).unwrap();
        assert!(r.transform.translation.vector.norm() < 1e-9);
        assert!(r.transform.rotation.angle() < 1e-9);
        assert!(r.rms < 1e-9 && !r.degenerate);
    }

    fn random_motion(rng: &mut ChaCha8Rng) -> Isometry3<f64> {
        let mut unit = || Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
        let (axis, dir) = (unit(), unit());
        Isometry3::new(dir * rng.gen_range(0.0..0.2), axis * rng.gen_range(0.0..5f64.to_radians()))
    }

    fn check_recovery(src: &PointCloud, cfg: &IcpConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..8 {
            let truth = random_motion(&mut rng);
            let dst = src.transformed(&truth);
            let r = icp_register(src, &dst, &Isometry3::identity(), cfg).unwrap();
            assert!((r.transform.translation.vector - truth.translation.vector).norm() < 1e-3, "{cfg:?}");
            assert!(r.transform.rotation.angle_to(&truth.rotation).to_degrees() < 0.1, "{cfg:?}");
        }
    }

    #[test]
    fn recovers_small_known_motion_point_to_point() {
        let cfg = IcpConfig { metric: IcpMetric::PointToPoint, ..IcpConfig::default() };
        check_recovery(&sparse_cloud(2, 400), &cfg, 5);
    }

    #[test]
    fn recovers_small_known_motion_point_to_plane() {
        let spec = WorldSpec { frame_count: 2, ..WorldSpec::default() };
        let scan = &synth_sequence(&spec).unwrap()[0].static_scan;
        check_recovery(&unproject(scan), &IcpConfig { max_iterations: 60, ..IcpConfig::default() }, 6);
    }

    #[test]
    fn odometry_on_repeated_scan_is_identity() {
        let spec = WorldSpec { frame_count: 2, ..WorldSpec::default() };
        let scan = synth_sequence(&spec).unwrap().remove(0).static_scan;
        let scans = vec![scan; 4];
        let odo = odometry(&scans, &[0.0, 0.1, 0.2, 0.3], &IcpConfig::default()).unwrap();
        for p in odo.trajectory.poses() {
            assert!(p.translation.norm() < 1e-6 && p.rotation.angle() < 1e-6);
        }
        assert_eq!(odo.degenerate_steps(), 0);
    }

    #[test]
    fn image_normals_of_floor_point_up() {
        // analytic range image of an infinite floor 1.8 m below the sensor
        let cfg = crate::scanio::SensorConfig::default();
        let ranges: Vec<f64> = (0..cfg.beams)
            .flat_map(|r| {
                let e = cfg.beam_elevation(r);
                (0..cfg.azimuth_bins).map(move |_| if e < 0.0 { 1.8 / (-e).sin() } else { 0.0 })
            })
            .collect();
        let scan = RangeImage::from_ranges(cfg, &ranges).unwrap();
        let normals = image_normals(&scan);
        assert_eq!(normals.len(), scan.valid_count());
        let found: Vec<_> = normals.iter().flatten().collect();
        // rows next to the range cut-off lack a second ring within the depth-jump limit
        assert!(found.len() * 5 >= normals.len() * 4);
        assert!(found.iter().all(|n| n.z.abs() > 1.0 - 1e-9));
    }
}

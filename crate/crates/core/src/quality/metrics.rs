use nalgebra::Point3;

use crate::attack::choose;
use crate::error::{Error, Result};
use crate::scanio::PointCloud;

/// Sum of squared nearest-neighbour distances in both directions.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let one_way = |a: &[Point3<f64>], b: &[Point3<f64>]| -> f64 {
        a.iter().map(|x| b.iter().map(|y| (x - y).norm_squared()).fold(f64::INFINITY, f64::min)).sum()
    };
    Ok(one_way(&p.points, &q.points) + one_way(&q.points, &p.points))
}

/// Minimum total Euclidean distance over bijections, solved exactly.
pub fn emd(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!("EMD needs equal sizes, got {} and {}", p.len(), q.len())));
    }
    let n = p.len();
    let cost: Vec<f64> = p.points.iter().flat_map(|x| q.points.iter().map(move |y| (x - y).norm())).collect();
    let assign = hungarian(n, &cost);
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum())
}

/// [`emd`] after seeded uniform subsampling of both clouds to
/// `min(|P|, |Q|, max_points)` points.
pub fn emd_subsampled(p: &PointCloud, q: &PointCloud, max_points: usize, seed: u64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let n = p.len().min(q.len()).min(max_points.max(1));
    let pick = |c: &PointCloud, s: u64| PointCloud::new(choose(c.len(), n, s).into_iter().map(|i| c.points[i]).collect());
    emd(&pick(p, seed), &pick(q, seed ^ 0x5151))
}

/// Optimal assignment for a square `n x n` row-major cost matrix, returning
/// the column assigned to each row. Shortest augmenting paths with
/// potentials, O(n^3).
pub fn hungarian(n: usize, cost: &[f64]) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::ShapeMismatch(format!("spearman needs two equal series of length >= 2, got {} and {}", x.len(), y.len())));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let (a, b) = (rx[i] - mx, ry[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateGeometry("constant series has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0))).collect())
    }

    fn pc(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    #[test]
    fn hand_cases() {
        let a = pc(&[[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &pc(&[[1.0, 0.0, 0.0]])).unwrap(), 2.0);
        assert_eq!(emd(&a, &pc(&[[3.0, 4.0, 0.0]])).unwrap(), 5.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &PointCloud::default()).is_err());
        assert!(emd(&a, &pc(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn hungarian_on_known_matrix() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(3, &c);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    fn brute_emd(p: &PointCloud, q: &PointCloud) -> f64 {
        fn go(i: usize, used: &mut Vec<bool>, p: &PointCloud, q: &PointCloud, acc: f64, best: &mut f64) {
            if i == p.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..q.len() {
                if !used[j] {
                    used[j] = true;
                    go(i + 1, used, p, q, acc + (p.points[i] - q.points[j]).norm(), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(0, &mut vec![false; q.len()], p, q, 0.0, &mut best);
        best
    }

    #[test]
    fn emd_matches_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..60 {
            let n = rng.gen_range(1..=6);
            let (p, q) = (cloud(&mut rng, n), cloud(&mut rng, n));
            assert!((emd(&p, &q).unwrap() - brute_emd(&p, &q)).abs() < 1e-9);
        }
    }

    #[test]
    fn subsampled_emd_equal_sizes_is_exact_on_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cloud(&mut rng, 30);
        let mut q = p.clone();
        q.points.reverse();
        assert!(emd_subsampled(&p, &q, 100, 3).unwrap() >= 0.0);
        assert!(emd(&p, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 90.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): r = 4.5 / sqrt(4.5 * 5)
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_zero_on_multiset_equality(seed in 0u64..5000, n in 1usize..7, m in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, q) = (cloud(&mut rng, n), cloud(&mut rng, m));
            let c = chamfer(&p, &q).unwrap();
            prop_assert!(c > 0.0 && c.is_finite());
            prop_assert_eq!(c, chamfer(&q, &p).unwrap());
            let mut shuffled = p.clone();
            shuffled.points.rotate_left(seed as usize % n);
            prop_assert_eq!(chamfer(&p, &shuffled).unwrap(), 0.0);
            prop_assert!(emd(&p, &shuffled).unwrap().abs() < 1e-12);
            let q2 = cloud(&mut rng, n);
            let e = emd(&p, &q2).unwrap();
            prop_assert!(e > 0.0);
            prop_assert!((e - emd(&q2, &p).unwrap()).abs() < 1e-9);
        }
    }
}

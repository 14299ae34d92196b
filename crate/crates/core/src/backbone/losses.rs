use super::LatentCode;
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};
use crate::scanio::{RangeImage, SegMask};

pub const DICE_EPS: f64 = 1e-6;

/// Mean squared range error (metres²) over the valid cells of `x`.
pub fn loss_recon(x: &RangeImage, x_bar: &RangeImage) -> Result<f64> {
    if !x.same_shape(x_bar) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), x_bar.shape())));
    }
    let n = x.valid_count();
    if n == 0 {
        return Err(Error::Empty("reconstruction target has no valid cells"));
    }
    let s: f64 = x
        .ranges()
        .iter()
        .zip(x_bar.ranges())
        .zip(x.valid())
        .filter(|(_, &v)| v)
        .map(|((&a, &b), _)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(s / n as f64)
}

pub fn loss_dice(mask_pred: &[f64], mask_gt: &SegMask) -> Result<f64> {
    if mask_pred.len() != mask_gt.labels().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} mask cells",
            mask_pred.len(),
            mask_gt.labels().len()
        )));
    }
    if let Some(p) = mask_pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::OutOfRange(format!("mask probability {p} outside [0, 1]")));
    }
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &g) in mask_pred.iter().zip(mask_gt.labels()) {
        let g = if g { 1.0 } else { 0.0 };
        inter += p * g;
        sp += p;
        sg += g;
    }
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (sp + sg + DICE_EPS))
}

fn same_len(codes: &[&LatentCode]) -> Result<()> {
    let n = codes[0].len();
    match codes.iter().find(|c| c.len() != n) {
        Some(c) => Err(Error::ShapeMismatch(format!("latent lengths {n} and {}", c.len()))),
        None => Ok(()),
    }
}

/// `max(0, |a-p|² - |a-n|² + m)`
pub fn loss_triplet(z_a: &LatentCode, z_p: &LatentCode, z_n: &LatentCode, margin: f64) -> Result<f64> {
    same_len(&[z_a, z_p, z_n])?;
    if !(margin >= 0.0) {
        return Err(Error::OutOfRange(format!("margin {margin} must be >= 0")));
    }
    Ok((z_a.dist2(z_p) - z_a.dist2(z_n) + margin).max(0.0))
}

/// `log(1 + Σ exp(a·n_i - a·p))`, evaluated stably.
pub fn loss_npair(z_a: &LatentCode, z_p: &LatentCode, z_ns: &[LatentCode]) -> Result<f64> {
    if z_ns.is_empty() {
        return Err(Error::Empty("n-pair loss needs at least one negative"));
    }
    let mut all = vec![z_a, z_p];
    all.extend(z_ns.iter());
    same_len(&all)?;
    let ap = z_a.dot(z_p);
    let gaps: Vec<f64> = z_ns.iter().map(|n| z_a.dot(n) - ap).collect();
    let m = gaps.iter().cloned().fold(0.0, f64::max);
    Ok(m + ((-m).exp() + gaps.iter().map(|s| (s - m).exp()).sum::<f64>()).ln())
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(p: f64, label: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Differentiable counterparts of the losses above.
pub mod graph {
    use super::*;

    /// Masked MSE between `pred` and a constant target, divided by `n_valid`.
    pub fn recon(g: &mut Graph, pred: Var, target: &Tensor, valid: &Tensor, n_valid: usize) -> Var {
        let t = g.input(target.clone());
        let d = g.sub(pred, t);
        let dm = g.mul_const(d, valid.clone());
        let sq = g.mul(dm, dm);
        let s = g.sum(sq);
        g.scale(s, 1.0 / n_valid.max(1) as f64)
    }

    pub fn dice(g: &mut Graph, pred: Var, gt: &Tensor) -> Var {
        let sg: f64 = gt.data().iter().sum();
        let inter = g.mul_const(pred, gt.clone());
        let inter = g.sum(inter);
        let num = g.scale(inter, 2.0);
        let num = g.add_const(num, DICE_EPS);
        let sp = g.sum(pred);
        let den = g.add_const(sp, sg + DICE_EPS);
        // num / den as exp(log num - log den)
        let ln = g.log(num);
        let ld = g.log(den);
        let diff = g.sub(ln, ld);
        let ratio = g.exp(diff);
        let neg = g.scale(ratio, -1.0);
        g.add_const(neg, 1.0)
    }

    /// `z / sqrt(|z|² + 1e-12)`
    pub fn normalize(g: &mut Graph, z: Var) -> Var {
        let n2 = g.dot(z, z);
        let n2 = g.add_const(n2, 1e-12);
        let ln = g.log(n2);
        let half = g.scale(ln, -0.5);
        let inv = g.exp(half);
        g.scale_by(z, inv)
    }

    fn dist2(g: &mut Graph, a: Var, b: Var) -> Var {
        let d = g.sub(a, b);
        g.dot(d, d)
    }

    pub fn triplet(g: &mut Graph, a: Var, p: Var, n: Var, margin: f64) -> Var {
        let dp = dist2(g, a, p);
        let dn = dist2(g, a, n);
        let gap = g.sub(dp, dn);
        let gap = g.add_const(gap, margin);
        g.clamp(gap, 0.0, f64::INFINITY)
    }

    pub fn npair(g: &mut Graph, a: Var, p: Var, ns: &[Var]) -> Var {
        let ap = g.dot(a, p);
        let mut acc: Option<Var> = None;
        for &n in ns {
            let an = g.dot(a, n);
            let s = g.sub(an, ap);
            let e = g.exp(s);
            acc = Some(match acc {
                Some(prev) => g.add(prev, e),
                None => e,
            });
        }
        let sum = acc.expect("at least one negative");
        let one_plus = g.add_const(sum, 1.0);
        g.log(one_plus)
    }

    /// BCE of a probability node against a fixed label, probability clamped.
    pub fn bce(g: &mut Graph, p: Var, label: f64) -> Var {
        let pc = g.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP);
        let term = if label >= 0.5 {
            g.log(pc)
        } else {
            let neg = g.scale(pc, -1.0);
            let q = g.add_const(neg, 1.0);
            g.log(q)
        };
        g.scale(term, -1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::scanio::SensorConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SensorConfig {
        SensorConfig { beams: 4, azimuth_bins: 8, ..SensorConfig::default() }
    }

    fn code(v: &[f64]) -> LatentCode {
        LatentCode(v.to_vec())
    }

    fn rand_code(rng: &mut impl Rng, n: usize) -> LatentCode {
        LatentCode((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn recon_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = RangeImage::from_ranges(cfg(), &vec![1.0; 32]).unwrap();
        let y = RangeImage::from_ranges(cfg(), &vec![2.0; 32]).unwrap();
        assert_eq!(loss_recon(&x, &x).unwrap(), 0.0);
        assert_eq!(loss_recon(&x, &y).unwrap(), 1.0);
        assert!(loss_recon(&RangeImage::empty(cfg()), &y).is_err());

        let a: Vec<f64> = (0..32).map(|_| if rng.gen_bool(0.7) { rng.gen_range(1.0..40.0) } else { 0.0 }).collect();
        let b: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..45.0)).collect();
        let (x, xb) = (RangeImage::from_ranges(cfg(), &a).unwrap(), RangeImage::from_ranges(cfg(), &b).unwrap());
        let (mut s, mut n) = (0.0, 0);
        for r in 0..4 {
            for c in 0..8 {
                if x.is_valid(r, c) {
                    s += (x.range(r, c) as f64 - xb.range(r, c) as f64).powi(2);
                    n += 1;
                }
            }
        }
        assert!((loss_recon(&x, &xb).unwrap() - s / n as f64).abs() < 1e-9);
    }

    #[test]
    fn dice_cases() {
        let mut gt = SegMask::empty(2, 4);
        gt.set(0, 0, true);
        gt.set(0, 1, true);
        assert!(loss_dice(&gt.as_f64(), &gt).unwrap() < 1e-6);
        let disjoint = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((loss_dice(&disjoint, &gt).unwrap() - 1.0).abs() < 1e-6);
        let half = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((loss_dice(&half, &gt).unwrap() - 0.5).abs() < 1e-6);
        assert!(loss_dice(&[1.5; 8], &gt).is_err());
        assert!(loss_dice(&[0.5; 7], &gt).is_err());
    }

    #[test]
    fn triplet_cases() {
        let a = code(&[0.0, 0.0]);
        assert_eq!(loss_triplet(&a, &a, &code(&[0.5, 0.0]), 0.25).unwrap(), 0.0);
        assert_eq!(loss_triplet(&a, &code(&[1.0, 0.0]), &a, 1.0).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (a, p, n) = (rand_code(&mut rng, 5), rand_code(&mut rng, 5), rand_code(&mut rng, 5));
            let m = rng.gen_range(0.0..2.0);
            let dp: f64 = (0..5).map(|i| (a.0[i] - p.0[i]).powi(2)).sum();
            let dn: f64 = (0..5).map(|i| (a.0[i] - n.0[i]).powi(2)).sum();
            let expect = if dp - dn + m > 0.0 { dp - dn + m } else { 0.0 };
            assert!((loss_triplet(&a, &p, &n, m).unwrap() - expect).abs() < 1e-12);
        }
        assert!(loss_triplet(&a, &code(&[1.0]), &a, 1.0).is_err());
    }

    #[test]
    fn npair_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, p) = (rand_code(&mut rng, 4), rand_code(&mut rng, 4));
        let k = 5;
        let got = loss_npair(&a, &p, &vec![p.clone(); k]).unwrap();
        assert!((got - (1.0 + k as f64).ln()).abs() < 1e-12);

        let (a, p, n) = (code(&[1.0, 0.0]), code(&[0.5, 2.0]), code(&[0.5, -3.0]));
        assert!((loss_npair(&a, &p, &[n]).unwrap() - 2f64.ln()).abs() < 1e-12);

        for _ in 0..50 {
            let (a, p) = (rand_code(&mut rng, 6), rand_code(&mut rng, 6));
            let ns: Vec<LatentCode> = (0..rng.gen_range(1..6)).map(|_| rand_code(&mut rng, 6)).collect();
            let mut s = 0.0;
            for n in &ns {
                let an: f64 = (0..6).map(|i| a.0[i] * n.0[i]).sum();
                let ap: f64 = (0..6).map(|i| a.0[i] * p.0[i]).sum();
                s += (an - ap).exp();
            }
            assert!((loss_npair(&a, &p, &ns).unwrap() - (1.0 + s).ln()).abs() < 1e-9);
        }
        assert!(loss_npair(&a, &p, &[]).is_err());
    }

    #[test]
    fn graph_losses_match_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let empty = ParamSet::new();
        for _ in 0..20 {
            let (a, p) = (rand_code(&mut rng, 6), rand_code(&mut rng, 6));
            let ns: Vec<LatentCode> = (0..3).map(|_| rand_code(&mut rng, 6)).collect();
            let mut g = Graph::new(&empty);
            let v = |g: &mut Graph, c: &LatentCode| g.input(Tensor::from_vec(&[c.len()], c.0.clone()));
            let (av, pv) = (v(&mut g, &a), v(&mut g, &p));
            let nv: Vec<Var> = ns.iter().map(|n| v(&mut g, n)).collect();
            let np = graph::npair(&mut g, av, pv, &nv);
            assert!((g.value(np).item() - loss_npair(&a, &p, &ns).unwrap()).abs() < 1e-9);
            let tr = graph::triplet(&mut g, av, pv, nv[0], 0.3);
            assert!((g.value(tr).item() - loss_triplet(&a, &p, &ns[0], 0.3).unwrap()).abs() < 1e-12);
            let un = graph::normalize(&mut g, av);
            let expect = a.normalized();
            for (x, y) in g.value(un).data().iter().zip(&expect.0) {
                assert!((x - y).abs() < 1e-9);
            }

            let probs: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut gt = SegMask::empty(2, 4);
            for i in 0..8 {
                gt.set(i / 4, i % 4, rng.gen_bool(0.4));
            }
            let pv = g.input(Tensor::from_vec(&[1, 2, 4], probs.clone()));
            let d = graph::dice(&mut g, pv, &Tensor::from_vec(&[1, 2, 4], gt.as_f64()));
            assert!((g.value(d).item() - loss_dice(&probs, &gt).unwrap()).abs() < 1e-9);

            let q = rng.gen_range(0.0..1.0);
            let qv = g.input(Tensor::scalar(q));
            for label in [0.0, 1.0] {
                let b = graph::bce(&mut g, qv, label);
                assert!((g.value(b).item() - bce(q, label)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_is_finite_at_extremes() {
        for p in [0.0, 1.0] {
            for l in [0.0, 1.0] {
                assert!(bce(p, l).is_finite());
            }
        }
        assert!((bce(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
    }
}

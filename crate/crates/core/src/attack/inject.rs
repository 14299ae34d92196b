use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::{choose, corrupt_mask_for, MaskCorruptionSpec};
use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::scanio::{RangeImage, SegMask};

/// Default `count_pij` threshold, metres.
pub const PIJ_EPS: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct AttackedScan {
    pub original: RangeImage,
    pub attacked: RangeImage,
    pub injected_cells: Vec<(usize, usize)>,
    pub pij_fraction: f64,
}

impl AttackedScan {
    /// Wraps a finished attack, counting changes with `eps`.
    pub fn from_pair(original: RangeImage, attacked: RangeImage, eps: f64) -> Result<Self> {
        let injected_cells = changed_cells(&original, &attacked, eps)?;
        let pij_fraction = injected_cells.len() as f64 / original.valid_count().max(1) as f64;
        Ok(Self { original, attacked, injected_cells, pij_fraction })
    }

    pub fn k(&self) -> usize {
        self.injected_cells.len()
    }

    /// Signed range change of every injected cell that is valid in both scans.
    pub fn deltas(&self) -> Vec<f64> {
        self.injected_cells
            .iter()
            .filter_map(|&(r, c)| match (self.original.get(r, c), self.attacked.get(r, c)) {
                (Some(a), Some(b)) => Some(b as f64 - a as f64),
                _ => None,
            })
            .collect()
    }
}

/// Cells whose validity differs or whose valid ranges differ by more than `eps`.
pub fn changed_cells(orig: &RangeImage, attacked: &RangeImage, eps: f64) -> Result<Vec<(usize, usize)>> {
    if !orig.same_shape(attacked) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", orig.shape(), attacked.shape())));
    }
    let mut out = Vec::new();
    for r in 0..orig.rows() {
        for c in 0..orig.cols() {
            let changed = match (orig.get(r, c), attacked.get(r, c)) {
                (Some(a), Some(b)) => (a as f64 - b as f64).abs() > eps,
                (None, None) => false,
                _ => true,
            };
            if changed {
                out.push((r, c));
            }
        }
    }
    Ok(out)
}

/// `(k, k / valid count of orig)`.
pub fn count_pij(orig: &RangeImage, attacked: &RangeImage, eps: f64) -> Result<(usize, f64)> {
    let k = changed_cells(orig, attacked, eps)?.len();
    let n = orig.valid_count();
    Ok((k, if n == 0 { 0.0 } else { k as f64 / n as f64 }))
}

/// Injects closer returns where the corrupted mask marks new dynamic cells.
///
/// The backbone reconstructs the scan twice, once under its own mask and
/// once under the corrupted mask; a cell is rewritten only when it is newly
/// marked dynamic and the corrupted reconstruction is nearer by more than
/// [`PIJ_EPS`]. The rewrite adds that difference to the original range, so
/// the reconstruction error of the backbone itself never leaks into the scan.
pub fn attack_scan(s: &RangeImage, s_mask: &SegMask, spec: &MaskCorruptionSpec, bp_attack: &BackboneParams) -> Result<AttackedScan> {
    let corrupted = corrupt_mask_for(s, s_mask, spec)?;
    let reference = bp_attack.decode_ranges(&bp_attack.encode(s, s_mask)?)?;
    let attacked_rec = bp_attack.decode_ranges(&bp_attack.encode(s, &corrupted)?)?;
    let mut out = s.clone();
    for r in 0..s.rows() {
        for c in 0..s.cols() {
            let i = r * s.cols() + c;
            let Some(orig) = s.get(r, c) else { continue };
            if !corrupted.get(r, c) || s_mask.get(r, c) {
                continue;
            }
            let delta = attacked_rec[i] - reference[i];
            if delta < -PIJ_EPS {
                let cfg = s.config();
                let v = (orig as f64 + delta).max(cfg.min_range as f64);
                out.set(r, c, v as f32);
            }
        }
    }
    AttackedScan::from_pair(s.clone(), out, PIJ_EPS)
}

/// Random removal: every valid cell is dropped independently with
/// probability `fraction`.
pub fn baseline_rr(s: &RangeImage, fraction: f64, seed: u64) -> Result<AttackedScan> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::OutOfRange(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s.clone();
    for r in 0..s.rows() {
        for c in 0..s.cols() {
            if s.is_valid(r, c) && rng.gen_bool(fraction) {
                out.invalidate(r, c);
            }
        }
    }
    AttackedScan::from_pair(s.clone(), out, PIJ_EPS)
}

/// Random removal of exactly `k` valid cells, i.e. the Bernoulli baseline
/// conditioned on its count. Used where budgets must match exactly.
pub fn baseline_rr_count(s: &RangeImage, k: usize, seed: u64) -> Result<AttackedScan> {
    let cells = valid_cells(s);
    if k > cells.len() {
        return Err(Error::Precondition(format!("k = {k} exceeds {} valid cells", cells.len())));
    }
    let mut out = s.clone();
    for i in choose(cells.len(), k, seed) {
        out.invalidate(cells[i].0, cells[i].1);
    }
    AttackedScan::from_pair(s.clone(), out, PIJ_EPS)
}

/// Random noise on `k` cells with magnitudes drawn from another attack.
pub fn baseline_rn(s: &RangeImage, k: usize, magnitude_source: &AttackedScan, seed: u64) -> Result<AttackedScan> {
    let mags: Vec<f64> = magnitude_source.deltas().iter().map(|d| d.abs()).collect();
    baseline_rn_with(s, k, &mags, seed)
}

/// [`baseline_rn`] with an explicit pool of magnitudes (metres). Each of
/// the `k` cells moves by a resampled magnitude with a random sign; the
/// sign flips when the move would leave the sensor limits.
pub fn baseline_rn_with(s: &RangeImage, k: usize, magnitudes: &[f64], seed: u64) -> Result<AttackedScan> {
    let cells = valid_cells(s);
    if k > cells.len() {
        return Err(Error::Precondition(format!("k = {k} exceeds {} valid cells", cells.len())));
    }
    if k > 0 && magnitudes.is_empty() {
        return Err(Error::Empty("magnitude source has no injected cells"));
    }
    let cfg = *s.config();
    let (lo, hi) = (cfg.min_range as f64, cfg.max_range as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e);
    let mut out = s.clone();
    for i in choose(cells.len(), k, seed) {
        let (r, c) = cells[i];
        let orig = s.range(r, c) as f64;
        let m = magnitudes[rng.gen_range(0..magnitudes.len())];
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let mut v = orig + sign * m;
        if !(lo..=hi).contains(&v) {
            v = orig - sign * m;
        }
        out.set(r, c, v.clamp(lo, hi) as f32);
    }
    AttackedScan::from_pair(s.clone(), out, PIJ_EPS)
}

fn valid_cells(s: &RangeImage) -> Vec<(usize, usize)> {
    (0..s.rows()).flat_map(|r| (0..s.cols()).map(move |c| (r, c))).filter(|&(r, c)| s.is_valid(r, c)).collect()
}

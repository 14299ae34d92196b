use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scanio::{RangeImage, SegMask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    #[default]
    SetDynamic,
    Clear,
}

/// A band of rows in which a seeded fraction of columns is rewritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskCorruptionSpec {
    pub row_start: usize,
    /// Inclusive.
    pub row_end: usize,
    pub column_fraction: f64,
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl Default for MaskCorruptionSpec {
    fn default() -> Self {
        Self { row_start: 8, row_end: 13, column_fraction: 0.15, mode: CorruptionMode::SetDynamic, seed: 0 }
    }
}

impl MaskCorruptionSpec {
    /// Same band and fraction, different column draw.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.row_start > self.row_end || self.row_end >= rows {
            return Err(Error::OutOfRange(format!(
                "row band {}..={} outside {rows} rows",
                self.row_start, self.row_end
            )));
        }
        if !(0.0..=1.0).contains(&self.column_fraction) {
            return Err(Error::OutOfRange(format!("column fraction {} outside [0, 1]", self.column_fraction)));
        }
        Ok(())
    }

    /// The affected columns, ascending. Each column is kept independently
    /// with probability `column_fraction`.
    pub fn columns(&self, cols: usize) -> Vec<usize> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..cols).filter(|_| rng.gen_bool(self.column_fraction)).collect()
    }
}

pub fn corrupt_mask(mask: &SegMask, spec: &MaskCorruptionSpec) -> Result<SegMask> {
    spec.validate(mask.rows())?;
    let mut out = mask.clone();
    let v = spec.mode == CorruptionMode::SetDynamic;
    for c in spec.columns(mask.cols()) {
        for r in spec.row_start..=spec.row_end {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// [`corrupt_mask`] restricted to the valid cells of `scan`, so the result
/// keeps dynamic cells inside the valid set.
pub fn corrupt_mask_for(scan: &RangeImage, mask: &SegMask, spec: &MaskCorruptionSpec) -> Result<SegMask> {
    scan.check_mask(mask)?;
    let mut out = corrupt_mask(mask, spec)?;
    for r in 0..scan.rows() {
        for c in 0..scan.cols() {
            if !scan.is_valid(r, c) {
                out.set(r, c, false);
            }
        }
    }
    Ok(out)
}

/// `k` distinct indices from `0..n`, seeded.
pub(crate) fn choose(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

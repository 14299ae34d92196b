use super::{RangeImage, ScanPair};
use crate::error::{Error, Result};

/// Hard negatives for a static anchor: its own dynamic scan first, then
/// dynamic scans of neighbouring frames, nearest first (behind before ahead).
#[derive(Clone, Debug)]
pub struct HardNegatives<'a> {
    /// Positions in the input sequence, in selection order.
    pub frames: Vec<usize>,
    pub scans: Vec<&'a RangeImage>,
    pub requested: usize,
}

impl HardNegatives<'_> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// True when fewer than `requested` candidates existed.
    pub fn is_short(&self) -> bool {
        self.frames.len() < self.requested
    }
}

/// Frame offsets in selection order: `0, -1, +1, -2, +2, ...`.
pub fn negative_offsets(window: usize) -> impl Iterator<Item = isize> {
    std::iter::once(0).chain((1..=window as isize).flat_map(|d| [-d, d]))
}

pub fn sample_hard_negatives(seq: &[ScanPair], anchor_index: usize, k: usize, window: usize) -> Result<HardNegatives<'_>> {
    if anchor_index >= seq.len() {
        return Err(Error::Precondition(format!(
            "anchor index {anchor_index} outside sequence of {}",
            seq.len()
        )));
    }
    if k == 0 {
        return Err(Error::Precondition("k must be >= 1".into()));
    }
    let frames: Vec<usize> = negative_offsets(window)
        .filter_map(|off| {
            let j = anchor_index as isize + off;
            (j >= 0 && (j as usize) < seq.len()).then_some(j as usize)
        })
        .take(k)
        .collect();
    Ok(HardNegatives { scans: frames.iter().map(|&j| &seq[j].dynamic).collect(), frames, requested: k })
}

//! `.slkr` scan files and the on-disk sequence layout.
//!
//! Scan file, little-endian:
//!
//! ```text
//! magic "SLKR" | version u16 = 1 | flags u16 (bit0: mask present)
//! B u32 | A u32 | min_range f32 | max_range f32
//! ranges  B*A f32, row-major
//! valid   B*A u8
//! mask    B*A u8 (only if flagged)
//! ```
//!
//! Elevation limits are not part of the format; readers supply them
//! through [`ScanReadOptions`] (defaulting to the desk-scale sensor fov).

use std::fs;
use std::path::{Path, PathBuf};

use super::{RangeImage, ScanPair, SegMask, SensorConfig};
use crate::error::{Error, FormatError, Result};
use crate::slameval::{Pose, Trajectory};

pub const MAGIC: &[u8; 4] = b"SLKR";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 4 + 4;

#[derive(Clone, Copy, Debug)]
pub struct ScanReadOptions {
    pub elevation_min: f64,
    pub elevation_max: f64,
}

impl Default for ScanReadOptions {
    fn default() -> Self {
        let d = SensorConfig::default();
        Self { elevation_min: d.elevation_min, elevation_max: d.elevation_max }
    }
}

impl From<&SensorConfig> for ScanReadOptions {
    fn from(c: &SensorConfig) -> Self {
        Self { elevation_min: c.elevation_min, elevation_max: c.elevation_max }
    }
}

pub fn encode_scan(ri: &RangeImage, mask: Option<&SegMask>) -> Result<Vec<u8>> {
    if let Some(m) = mask {
        ri.check_mask(m)?;
    }
    let cfg = ri.config();
    let n = cfg.cells();
    let mut out = Vec::with_capacity(HEADER_LEN + 6 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mask.is_some() as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.beams as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.azimuth_bins as u32).to_le_bytes());
    out.extend_from_slice(&cfg.min_range.to_le_bytes());
    out.extend_from_slice(&cfg.max_range.to_le_bytes());
    for r in ri.ranges() {
        out.extend_from_slice(&r.to_le_bytes());
    }
    out.extend(ri.valid().iter().map(|&v| v as u8));
    if let Some(m) = mask {
        out.extend(m.labels().iter().map(|&v| v as u8));
    }
    Ok(out)
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], FormatError> {
    let end = *at + n;
    if end > buf.len() {
        return Err(FormatError::Truncated { needed: end, found: buf.len() });
    }
    let s = &buf[*at..end];
    *at = end;
    Ok(s)
}

fn flags_from(bytes: &[u8], what: &str) -> Result<Vec<bool>, FormatError> {
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(FormatError::Field(format!("{what} byte {other} is not 0/1"))),
        })
        .collect()
}

pub fn decode_scan(buf: &[u8], opts: ScanReadOptions) -> Result<(RangeImage, Option<SegMask>)> {
    let mut at = 0;
    let magic: [u8; 4] = take(buf, &mut at, 4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let u16_at = |s: &[u8]| u16::from_le_bytes([s[0], s[1]]);
    let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]);
    let f32_at = |s: &[u8]| f32::from_le_bytes([s[0], s[1], s[2], s[3]]);
    let version = u16_at(take(buf, &mut at, 2)?);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let flags = u16_at(take(buf, &mut at, 2)?);
    let beams = u32_at(take(buf, &mut at, 4)?) as usize;
    let bins = u32_at(take(buf, &mut at, 4)?) as usize;
    let min_range = f32_at(take(buf, &mut at, 4)?);
    let max_range = f32_at(take(buf, &mut at, 4)?);
    let cfg = SensorConfig {
        beams,
        azimuth_bins: bins,
        elevation_min: opts.elevation_min,
        elevation_max: opts.elevation_max,
        min_range,
        max_range,
    };
    cfg.validate().map_err(|e| FormatError::Shape(e.to_string()))?;
    let n = beams
        .checked_mul(bins)
        .ok_or_else(|| FormatError::Shape(format!("{beams}x{bins} overflows")))?;
    let has_mask = flags & 1 == 1;
    let expected = HEADER_LEN + 5 * n + if has_mask { n } else { 0 };
    if buf.len() < expected {
        return Err(FormatError::Truncated { needed: expected, found: buf.len() }.into());
    }
    if buf.len() > expected {
        return Err(FormatError::Shape(format!(
            "{} trailing bytes after a {beams}x{bins} grid",
            buf.len() - expected
        ))
        .into());
    }
    let ranges: Vec<f32> = take(buf, &mut at, 4 * n)?.chunks_exact(4).map(f32_at).collect();
    let valid = flags_from(take(buf, &mut at, n)?, "valid")?;
    let ri = RangeImage::from_parts(cfg, ranges, valid).map_err(|e| FormatError::Field(e.to_string()))?;
    let mask = if has_mask {
        let labels = flags_from(take(buf, &mut at, n)?, "mask")?;
        Some(SegMask::from_labels(beams, bins, labels)?)
    } else {
        None
    };
    Ok((ri, mask))
}

pub fn write_scan(path: impl AsRef<Path>, ri: &RangeImage, mask: Option<&SegMask>) -> Result<()> {
    fs::write(path, encode_scan(ri, mask)?)?;
    Ok(())
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<(RangeImage, Option<SegMask>)> {
    read_scan_with(path, ScanReadOptions::default())
}

pub fn read_scan_with(path: impl AsRef<Path>, opts: ScanReadOptions) -> Result<(RangeImage, Option<SegMask>)> {
    decode_scan(&fs::read(path)?, opts)
}

pub fn sequence_dir(root: impl AsRef<Path>, id: u32, suffix: &str) -> PathBuf {
    root.as_ref().join(format!("seq_{id}{suffix}"))
}

pub fn frame_path(dir: impl AsRef<Path>, idx: usize, kind: &str) -> PathBuf {
    dir.as_ref().join(format!("frame_{idx:06}_{kind}.slkr"))
}

pub fn poses_of(seq: &[ScanPair]) -> Result<Trajectory> {
    Trajectory::new(seq.iter().map(|p| Pose::from_isometry(p.timestamp, &p.gt_pose)).collect())
}

/// Writes `seq_<id><suffix>/frame_<idx>_{dyn,stat}.slkr` and `poses.txt`.
pub fn write_sequence(root: impl AsRef<Path>, seq: &[ScanPair], suffix: &str) -> Result<PathBuf> {
    let first = seq.first().ok_or(Error::Empty("sequence"))?;
    let dir = sequence_dir(root, first.sequence_id, suffix);
    fs::create_dir_all(&dir)?;
    for p in seq {
        write_scan(frame_path(&dir, p.frame_index, "dyn"), &p.dynamic, Some(&p.dynamic_mask))?;
        write_scan(frame_path(&dir, p.frame_index, "stat"), &p.static_scan, Some(&p.static_mask))?;
    }
    poses_of(seq)?.write(dir.join("poses.txt"))?;
    Ok(dir)
}

fn frame_indices(dir: &Path, kind: &str) -> Result<Vec<usize>> {
    let suffix = format!("_{kind}.slkr");
    let mut idx = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("frame_").and_then(|r| r.strip_suffix(&suffix)) {
            idx.push(num.parse::<usize>().map_err(|e| Error::Parse(format!("{name}: {e}")))?);
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Reads a sequence directory written by [`write_sequence`]. The sequence
/// id is parsed from the directory name when possible.
pub fn read_sequence(dir: impl AsRef<Path>, opts: ScanReadOptions) -> Result<Vec<ScanPair>> {
    let dir = dir.as_ref();
    let traj = Trajectory::read(dir.join("poses.txt"))?;
    let idx = frame_indices(dir, "stat")?;
    if idx.len() != traj.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames but {} poses in {}",
            idx.len(),
            traj.len(),
            dir.display()
        )));
    }
    let sequence_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("seq_"))
        .and_then(|n| n.split('_').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0);
    idx.iter()
        .zip(traj.poses())
        .map(|(&i, pose)| {
            let (stat, smask) = read_scan_with(frame_path(dir, i, "stat"), opts)?;
            let dyn_path = frame_path(dir, i, "dyn");
            let (dynm, dmask) = if dyn_path.exists() {
                read_scan_with(dyn_path, opts)?
            } else {
                (stat.clone(), None)
            };
            let (rows, cols) = stat.shape();
            Ok(ScanPair {
                dynamic_mask: dmask.unwrap_or_else(|| SegMask::empty(rows, cols)),
                static_mask: smask.unwrap_or_else(|| SegMask::empty(rows, cols)),
                dynamic: dynm,
                static_scan: stat,
                sequence_id,
                frame_index: i,
                gt_pose: pose.to_isometry(),
                timestamp: pose.timestamp,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scan(seed: u64) -> (RangeImage, SegMask) {
        let cfg = SensorConfig { beams: 6, azimuth_bins: 20, ..SensorConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ri = RangeImage::empty(cfg);
        let mut m = SegMask::empty(6, 20);
        for r in 0..6 {
            for c in 0..20 {
                if rng.gen_bool(0.8) {
                    ri.set(r, c, rng.gen_range(0.5..50.0));
                    m.set(r, c, rng.gen_bool(0.2));
                }
            }
        }
        (ri, m)
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (ri, m) = random_scan(1);
        let p = dir.path().join("a.slkr");
        write_scan(&p, &ri, Some(&m)).unwrap();
        let (back, bm) = read_scan(&p).unwrap();
        assert_eq!(back, ri);
        assert_eq!(bm, Some(m));
        write_scan(&p, &ri, None).unwrap();
        assert_eq!(read_scan(&p).unwrap(), (ri, None));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let (ri, _) = random_scan(2);
        let mut bytes = encode_scan(&ri, None).unwrap();
        bytes[0] = b'X';
        let err = decode_scan(&bytes, ScanReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::BadMagic(_))), "{err}");
    }

    #[test]
    fn truncated_grid_is_truncation_error() {
        let (ri, m) = random_scan(3);
        let bytes = encode_scan(&ri, Some(&m)).unwrap();
        for cut in [10, HEADER_LEN + 7, bytes.len() - 1] {
            let err = decode_scan(&bytes[..cut], ScanReadOptions::default()).unwrap_err();
            assert!(matches!(err, Error::Format(FormatError::Truncated { .. })), "{err}");
        }
    }

    #[test]
    fn shape_errors_are_distinct() {
        let (ri, _) = random_scan(4);
        let mut bytes = encode_scan(&ri, None).unwrap();
        bytes.push(0);
        let err = decode_scan(&bytes, ScanReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::Shape(_))), "{err}");
        // azimuth bins below the sensor minimum
        let mut bytes = encode_scan(&ri, None).unwrap();
        bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_scan(&bytes, ScanReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::Shape(_))), "{err}");
        let wrong = SegMask::empty(3, 3);
        assert!(matches!(encode_scan(&ri, Some(&wrong)), Err(Error::ShapeMismatch(_))));
    }
}

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{ate, kabsch, odometry, rpe, IcpConfig, Trajectory};
use crate::attack::{attack_scan, baseline_rn_with, baseline_rr_count, count_pij, AttackedScan, MaskCorruptionSpec, PIJ_EPS};
use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::quality::{dsr, lqi, DsrModel, LqiModel};
use crate::scanio::{RangeImage, ScanPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    None,
    Rr,
    Rn,
    Slack,
}

impl Method {
    /// Table order.
    pub const ALL: [Method; 4] = [Method::None, Method::Rr, Method::Rn, Method::Slack];

    pub fn label(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Rr => "RR",
            Method::Rn => "RN",
            Method::Slack => "SLACK",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.label().eq_ignore_ascii_case(s)).ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

/// One method's outcome on one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub sequence: u32,
    pub method: Method,
    /// Injected cells over the sequence's valid cells.
    pub pij_fraction: f64,
    /// Mean LQI over frames, when a model was supplied.
    pub lqi: Option<f64>,
    /// Mean DSR over frames, when a model was supplied.
    pub dsr: Option<f64>,
    pub ate: f64,
    pub rpe_t: f64,
    pub rpe_r: f64,
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub row: ReportRow,
    /// Total injected cells.
    pub k: usize,
    pub trajectory: Trajectory,
    pub degenerate_steps: usize,
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub sequence: u32,
    pub runs: Vec<MethodRun>,
}

impl AttackReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn run(&self, m: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.row.method == m)
    }

    pub fn ate(&self, m: Method) -> Option<f64> {
        self.run(m).map(|r| r.row.ate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub spec: MaskCorruptionSpec,
    pub icp: IcpConfig,
    pub rpe_delta: usize,
    /// Largest allowed `|k - k_SLACK| / k_SLACK` for the baselines.
    pub parity_tolerance: f64,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { spec: MaskCorruptionSpec::default(), icp: IcpConfig::default(), rpe_delta: 1, parity_tolerance: 0.05, seed: 0 }
    }
}

/// Optional scan-quality models evaluated per method.
#[derive(Clone, Copy, Debug, Default)]
pub struct QualityModels<'a> {
    pub lqi: Option<&'a LqiModel>,
    pub dsr: Option<&'a DsrModel>,
}

fn run_method(
    sequence: u32,
    method: Method,
    scans: &[RangeImage],
    originals: &[RangeImage],
    stamps: &[f64],
    gt: &Trajectory,
    cfg: &CompareConfig,
    models: QualityModels<'_>,
) -> Result<MethodRun> {
    let mut k = 0;
    let mut valid = 0;
    for (o, a) in originals.iter().zip(scans) {
        k += count_pij(o, a, PIJ_EPS)?.0;
        valid += o.valid_count();
    }
    let odo = odometry(scans, stamps, &cfg.icp)?;
    let r = rpe(&odo.trajectory, gt, cfg.rpe_delta)?;
    let mean = |f: &dyn Fn(&RangeImage) -> Result<f64>| -> Result<f64> {
        Ok(scans.iter().map(f).collect::<Result<Vec<_>>>()?.iter().sum::<f64>() / scans.len() as f64)
    };
    let lqi_v = models.lqi.map(|m| mean(&|x| lqi(x, m))).transpose()?;
    let dsr_v = models.dsr.map(|m| mean(&|x| dsr(x, m))).transpose()?;
    Ok(MethodRun {
        row: ReportRow {
            sequence,
            method,
            pij_fraction: k as f64 / valid.max(1) as f64,
            lqi: lqi_v,
            dsr: dsr_v,
            ate: ate(&odo.trajectory, gt)?,
            rpe_t: r.trans,
            rpe_r: r.rot_deg,
        },
        k,
        degenerate_steps: odo.degenerate_steps(),
        trajectory: odo.trajectory,
    })
}

fn check_inputs(seq: &[ScanPair], gt: &Trajectory) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::Precondition(format!("comparison needs >= 2 frames, got {}", seq.len())));
    }
    if gt.len() != seq.len() {
        return Err(Error::ShapeMismatch(format!("{} frames vs {} ground-truth poses", seq.len(), gt.len())));
    }
    Ok(())
}

/// Odometry on the unattacked static scans only.
pub fn evaluate_clean(seq: &[ScanPair], gt: &Trajectory, cfg: &CompareConfig, models: QualityModels<'_>) -> Result<AttackReport> {
    check_inputs(seq, gt)?;
    let scans: Vec<RangeImage> = seq.iter().map(|p| p.static_scan.clone()).collect();
    let stamps: Vec<f64> = seq.iter().map(|p| p.timestamp).collect();
    let id = seq[0].sequence_id;
    let run = run_method(id, Method::None, &scans, &scans, &stamps, gt, cfg, models)?;
    Ok(AttackReport { sequence: id, runs: vec![run] })
}

/// Per-frame attacks of the static scans of `seq`.
pub struct AttackedSequence {
    pub slack: Vec<AttackedScan>,
    pub rr: Vec<AttackedScan>,
    pub rn: Vec<AttackedScan>,
}

/// Builds SLACK, RR and RN copies of every frame with matched per-frame
/// budgets. RN magnitudes are pooled from all SLACK changes of the sequence.
pub fn attack_sequence(seq: &[ScanPair], bp_attack: &BackboneParams, cfg: &CompareConfig) -> Result<AttackedSequence> {
    let slack: Vec<AttackedScan> =
        seq.iter().map(|p| attack_scan(&p.static_scan, &p.static_mask, &cfg.spec, bp_attack)).collect::<Result<_>>()?;
    let mags: Vec<f64> = slack.iter().flat_map(|a| a.deltas()).map(f64::abs).collect();
    let mut rr = Vec::with_capacity(seq.len());
    let mut rn = Vec::with_capacity(seq.len());
    for (f, (p, a)) in seq.iter().zip(&slack).enumerate() {
        let s = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(f as u64);
        rr.push(baseline_rr_count(&p.static_scan, a.k(), s)?);
        rn.push(baseline_rn_with(&p.static_scan, a.k(), &mags, s ^ 0xa5a5)?);
    }
    Ok(AttackedSequence { slack, rr, rn })
}

/// Runs odometry on clean, RR, RN and SLACK copies of the static scans and
/// reports trajectory errors against `gt`.
pub fn compare_attacks(
    seq: &[ScanPair],
    gt: &Trajectory,
    bp_attack: &BackboneParams,
    cfg: &CompareConfig,
    models: QualityModels<'_>,
) -> Result<AttackReport> {
    check_inputs(seq, gt)?;
    let atk = attack_sequence(seq, bp_attack, cfg)?;
    let id = seq[0].sequence_id;
    let stamps: Vec<f64> = seq.iter().map(|p| p.timestamp).collect();
    let clean: Vec<RangeImage> = seq.iter().map(|p| p.static_scan.clone()).collect();
    let pick = |v: &[AttackedScan]| v.iter().map(|a| a.attacked.clone()).collect::<Vec<_>>();
    let mut runs = Vec::with_capacity(4);
    runs.push(run_method(id, Method::None, &clean, &clean, &stamps, gt, cfg, models)?);
    let copies = [(Method::Rr, pick(&atk.rr)), (Method::Rn, pick(&atk.rn)), (Method::Slack, pick(&atk.slack))];
    for (m, scans) in &copies {
        runs.push(run_method(id, *m, scans, &clean, &stamps, gt, cfg, models)?);
    }
    let k_ref = runs[3].k;
    for r in &runs[1..3] {
        let off = (r.k as f64 - k_ref as f64).abs();
        if off > cfg.parity_tolerance * k_ref as f64 {
            return Err(Error::BudgetParity { method: r.row.method.to_string(), k: r.k, reference: k_ref });
        }
    }
    Ok(AttackReport { sequence: id, runs })
}

pub const REPORT_HEADER: &str = "sequence,method,pij_fraction,lqi,dsr,ate,rpe_t,rpe_r";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV lines for `rows`, without header.
pub fn report_csv_rows(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.sequence,
            r.method,
            r.pij_fraction,
            opt(r.lqi),
            opt(r.dsr),
            r.ate,
            r.rpe_t,
            r.rpe_r
        );
    }
    s
}

/// Parses report CSV text; `#` lines and the header are skipped.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == REPORT_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("report line {}: expected 8 fields, got {}", n + 1, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("report line {}: {s:?}: {e}", n + 1)));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(ReportRow {
            sequence: f[0].parse().map_err(|e| Error::Parse(format!("report line {}: {e}", n + 1)))?,
            method: f[1].parse()?,
            pij_fraction: num(f[2])?,
            lqi: maybe(f[3])?,
            dsr: maybe(f[4])?,
            ate: num(f[5])?,
            rpe_t: num(f[6])?,
            rpe_r: num(f[7])?,
        });
    }
    Ok(out)
}

/// Text table with one line per sequence and ATE / RPE / PiJ columns for
/// each method in the order none, RR, RN, SLACK.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut seqs: Vec<u32> = rows.iter().map(|r| r.sequence).collect();
    seqs.sort_unstable();
    seqs.dedup();
    let mut s = String::new();
    let _ = write!(s, "{:>8}", "seq");
    for m in Method::ALL {
        let _ = write!(s, " | {:^26}", m.label());
    }
    s.push('\n');
    let _ = write!(s, "{:>8}", "");
    for _ in Method::ALL {
        let _ = write!(s, " | {:>8} {:>8} {:>8}", "ATE", "RPE", "PiJ(%)");
    }
    s.push('\n');
    for q in seqs {
        let _ = write!(s, "{q:>8}");
        for m in Method::ALL {
            match rows.iter().find(|r| r.sequence == q && r.method == m) {
                Some(r) => {
                    let _ = write!(s, " | {:>8.3} {:>8.3} {:>8.3}", r.ate, r.rpe_t, 100.0 * r.pij_fraction);
                }
                None => {
                    let _ = write!(s, " | {:>8} {:>8} {:>8}", "-", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

const PALETTE: [[u8; 3]; 4] = [[40, 40, 40], [30, 110, 200], [230, 140, 20], [200, 30, 40]];

/// Top-down XY plot of `gt` (dotted black) and each run's estimate
/// (solid, one colour per method), rigidly aligned to `gt`.
pub fn plot_trajectories(path: impl AsRef<std::path::Path>, gt: &Trajectory, runs: &[MethodRun], size: u32) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let size = size.max(64);
    let gt_pts: Vec<nalgebra::Point3<f64>> = gt.poses().iter().map(|p| p.translation.into()).collect();
    let mut curves: Vec<Vec<(f64, f64)>> = Vec::with_capacity(runs.len());
    for r in runs {
        let est: Vec<nalgebra::Point3<f64>> = r.trajectory.poses().iter().map(|p| p.translation.into()).collect();
        if est.len() != gt_pts.len() {
            return Err(Error::ShapeMismatch(format!("{} estimated vs {} ground-truth poses", est.len(), gt_pts.len())));
        }
        let t = kabsch(&est, &gt_pts);
        curves.push(est.iter().map(|p| t * p).map(|p| (p.x, p.y)).collect());
    }
    let gt_xy: Vec<(f64, f64)> = gt_pts.iter().map(|p| (p.x, p.y)).collect();
    let all = gt_xy.iter().chain(curves.iter().flatten());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-6);
    let margin = 0.05 * size as f64;
    let scale = (size as f64 - 2.0 * margin) / span;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let to_px = |(x, y): (f64, f64)| -> (f64, f64) {
        (size as f64 / 2.0 + (x - cx) * scale, size as f64 / 2.0 - (y - cy) * scale)
    };
    let mut img = image::RgbImage::from_pixel(size, size, image::Rgb([255, 255, 255]));
    let mut draw = |pts: &[(f64, f64)], rgb: [u8; 3], dotted: bool| {
        let mut travelled = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (to_px(w[0]), to_px(w[1]));
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let steps = len.ceil().max(1.0) as usize;
            for i in 0..=steps {
                let f = i as f64 / steps as f64;
                let d = travelled + f * len;
                if dotted && (d as u64 / 4) % 2 == 1 {
                    continue;
                }
                let (x, y) = (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
                if x >= 0.0 && y >= 0.0 && (x as u32) < size && (y as u32) < size {
                    img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
                }
            }
            travelled += len;
        }
    };
    for (r, c) in runs.iter().zip(&curves) {
        draw(c, PALETTE[Method::ALL.iter().position(|&m| m == r.row.method).unwrap_or(0)], false);
    }
    draw(&gt_xy, [0, 0, 0], true);
    img.save(path.as_ref()).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seq: u32, m: Method, ate: f64) -> ReportRow {
        ReportRow { sequence: seq, method: m, pij_fraction: 0.001, lqi: Some(0.2), dsr: None, ate, rpe_t: 0.1, rpe_r: 0.5 }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(0, Method::None, 1.0), row(0, Method::Slack, 2.5), row(3, Method::Rn, 0.25)];
        let text = format!("# seed=1\n{REPORT_HEADER}\n{}", report_csv_rows(&rows));
        assert_eq!(parse_report_csv(&text).unwrap(), rows);
        assert!(parse_report_csv("0,none,1").is_err());
        assert!(parse_report_csv("0,XX,0,,,1,1,1").is_err());
    }

    #[test]
    fn table_orders_methods() {
        let rows = vec![row(1, Method::Slack, 4.0), row(1, Method::None, 1.0), row(1, Method::Rn, 3.0), row(1, Method::Rr, 2.0)];
        let t = render_table(&rows);
        let head = t.lines().next().unwrap();
        let pos: Vec<usize> = ["none", "RR", "RN", "SLACK"].iter().map(|m| head.find(m).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let body = t.lines().nth(2).unwrap();
        let ates: Vec<f64> = body.split('|').skip(1).map(|c| c.split_whitespace().next().unwrap().parse().unwrap()).collect();
        assert_eq!(ates, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn plot_writes_png() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let isos: Vec<nalgebra::Isometry3<f64>> =
            (0..10).map(|i| nalgebra::Isometry3::translation(i as f64, (i as f64 * 0.3).sin(), 0.0)).collect();
        let gt = Trajectory::from_isometries(&ts, &isos).unwrap();
        let run = MethodRun { row: row(0, Method::Slack, 0.0), k: 0, trajectory: gt.clone(), degenerate_steps: 0 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        plot_trajectories(&path, &gt, &[run], 200).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (200, 200));
        assert!(img.pixels().any(|p| p.0 == PALETTE[3]));
        assert!(img.pixels().any(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn method_labels_parse() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
    }
}

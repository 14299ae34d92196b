use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::attack::{attack_scan, train_adversarial_with_history, train_mmd_uda_with_history, UdaOutcome};
use crate::backbone::{history_csv, train_backbone, BackboneParams};
use crate::error::{Error, Result};
use crate::pretext::{metrics_csv, train_pd, PdParams};
use crate::quality::{chamfer, dsr, emd_subsampled, lqi, train_dsr_classifier, train_lqi, DsrModel, LqiModel};
use crate::scanio::{poses_of, read_sequence, synth_sequence, unproject, write_sequence, RangeImage, ScanPair, ScanReadOptions, SegMask};
use crate::slameval::{
    compare_attacks, evaluate_clean, parse_report_csv, plot_trajectories, render_table, report_csv_rows, AttackReport, CompareConfig,
    QualityModels, ReportRow, REPORT_HEADER,
};

pub const AE_CKPT: &str = "ae.slkc";
pub const AE_PD_CKPT: &str = "ae_pd.slkc";
pub const PD_CKPT: &str = "pd.slkc";
pub const ATTACK_CKPT: &str = "attack.slkc";
pub const AE_TARGET_CKPT: &str = "ae_target.slkc";
pub const ATTACK_TARGET_CKPT: &str = "attack_target.slkc";
pub const LQI_CKPT: &str = "lqi.slkc";
pub const DSR_CKPT: &str = "dsr.slkc";
pub const REPORT_CSV: &str = "attack_report.csv";
pub const METRICS_CSV: &str = "metrics.csv";

/// A validated, seed-resolved configuration plus its provenance stamp.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub provenance: String,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        let provenance = cfg.provenance()?;
        Ok(Self { cfg, provenance })
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.cfg.paths.checkpoints.join(name)
    }

    fn read_opts(&self) -> ScanReadOptions {
        ScanReadOptions::from(&self.cfg.sensor)
    }

    /// Writes `body` behind the provenance line, creating parent dirs.
    pub fn write_artifact(&self, path: &Path, body: &str) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, format!("{}\n{body}", self.provenance))?;
        Ok(())
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingDependency { stage: stage.into(), path: path.to_path_buf() })
    }
}

/// Sequence directories directly under `root` named `seq_<id>` (no suffix),
/// sorted by id.
pub fn list_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<(u32, PathBuf)> = Vec::new();
    for e in fs::read_dir(root)? {
        let p = e?.path();
        let id = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_prefix("seq_")).and_then(|n| n.parse::<u32>().ok());
        if let (Some(id), true) = (id, p.is_dir()) {
            out.push((id, p));
        }
    }
    out.sort();
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

fn load_split(ctx: &Context, root: &Path, stage: &str) -> Result<Vec<ScanPair>> {
    let dirs = list_sequences(root)?;
    if dirs.is_empty() {
        return Err(Error::MissingDependency { stage: stage.into(), path: root.to_path_buf() });
    }
    let mut all = Vec::new();
    for d in dirs {
        all.extend(read_sequence(&d, ctx.read_opts())?);
    }
    Ok(all)
}

fn check_sensor(bp: &BackboneParams, scan: &RangeImage) -> Result<()> {
    let s = bp.config.sensor;
    if scan.shape() != (s.beams, s.azimuth_bins) {
        return Err(Error::ShapeMismatch(format!(
            "model expects {}x{} scans, data is {}x{}",
            s.beams,
            s.azimuth_bins,
            scan.shape().0,
            scan.shape().1
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
    Target,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            "target" => Ok(Split::Target),
            o => Err(Error::Parse(format!("unknown split {o:?} (train, heldout, target)"))),
        }
    }
}

/// Overrides for `synth`; `None` falls back to the split's configured layout.
#[derive(Clone, Debug, Default)]
pub struct SynthArgs {
    pub out: Option<PathBuf>,
    pub count: Option<usize>,
    pub first_id: Option<u32>,
    pub frames: Option<usize>,
}

/// Generates and writes sequences of one split. Returns each directory and
/// its frame count.
pub fn synth(ctx: &Context, split: Split, args: &SynthArgs) -> Result<Vec<(PathBuf, usize)>> {
    let c = &ctx.cfg;
    let mut world = c.world.clone();
    let (root, count, first) = match split {
        Split::Train => (&c.paths.data, c.synth.train_sequences, 0),
        Split::Heldout => {
            world.frame_count = c.synth.heldout_frames;
            (&c.paths.heldout, c.synth.heldout_sequences, c.synth.heldout_first_id)
        }
        Split::Target => {
            world.static_obstacles = c.synth.target_static_obstacles;
            world.dynamic_actors = c.synth.target_dynamic_actors;
            (&c.paths.target_data, c.synth.target_sequences, c.synth.target_first_id)
        }
    };
    let root = args.out.clone().unwrap_or_else(|| root.clone());
    if let Some(f) = args.frames {
        world.frame_count = f;
    }
    let count = args.count.unwrap_or(count);
    let first = args.first_id.unwrap_or(first);
    if count == 0 {
        return Err(Error::InvalidConfig("synth needs count >= 1".into()));
    }
    world.validate()?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count as u32 {
        let id = first + i;
        let spec = crate::scanio::WorldSpec { sequence_id: id, seed: world.seed.wrapping_add(id as u64), ..world.clone() };
        let seq = synth_sequence(&spec)?;
        out.push((write_sequence(&root, &seq, "")?, seq.len()));
    }
    Ok(out)
}

/// Trains the source backbone, or with `target` the target-domain backbone.
pub fn train_ae(ctx: &Context, target: bool) -> Result<PathBuf> {
    let (root, name) = if target { (&ctx.cfg.paths.target_data, AE_TARGET_CKPT) } else { (&ctx.cfg.paths.data, AE_CKPT) };
    let data = load_split(ctx, root, if target { "target synth" } else { "synth" })?;
    check_sensor(&BackboneParams::init(&ctx.cfg.backbone, 0)?, &data[0].static_scan)?;
    let out = train_backbone(&data, &ctx.cfg.backbone, &ctx.cfg.train_ae)?;
    let path = ctx.checkpoint(name);
    fs::create_dir_all(&ctx.cfg.paths.checkpoints)?;
    out.backbone.save(&path)?;
    ctx.write_artifact(&path.with_extension("loss.csv"), &history_csv(&out.history))?;
    Ok(path)
}

pub fn train_pretext(ctx: &Context) -> Result<PathBuf> {
    let ae = ctx.checkpoint(AE_CKPT);
    require(&ae, "train-ae")?;
    let bp = BackboneParams::load(&ae)?;
    let data = load_split(ctx, &ctx.cfg.paths.data, "synth")?;
    let out = train_pd(&data, &bp, &ctx.cfg.train_pd)?;
    let path = ctx.checkpoint(PD_CKPT);
    out.pd.save(&path)?;
    out.backbone.save(ctx.checkpoint(AE_PD_CKPT))?;
    ctx.write_artifact(&path.with_extension("loss.csv"), &metrics_csv(&out.history))?;
    Ok(path)
}

pub fn train_attack(ctx: &Context) -> Result<PathBuf> {
    let (pd, ae) = (ctx.checkpoint(PD_CKPT), ctx.checkpoint(AE_PD_CKPT));
    require(&pd, "train-pd")?;
    require(&ae, "train-pd")?;
    let (bp, pp) = (BackboneParams::load(&ae)?, PdParams::load(&pd)?);
    let data = load_split(ctx, &ctx.cfg.paths.data, "synth")?;
    let out = train_adversarial_with_history(&data, &bp, &pp, &ctx.cfg.train_attack)?;
    let path = ctx.checkpoint(ATTACK_CKPT);
    out.backbone.save(&path)?;
    let mut csv = String::from("epoch,bce,recon,mean_score\n");
    for h in &out.history {
        let _ = writeln!(csv, "{},{},{},{}", h.epoch, h.bce, h.recon, h.mean_score);
    }
    ctx.write_artifact(&path.with_extension("loss.csv"), &csv)?;
    Ok(path)
}

/// Adapts the target backbone; needs the attack, PD and target-AE stages.
pub fn train_mmd(ctx: &Context) -> Result<UdaOutcome> {
    let (atk, pd, tgt) = (ctx.checkpoint(ATTACK_CKPT), ctx.checkpoint(PD_CKPT), ctx.checkpoint(AE_TARGET_CKPT));
    require(&atk, "train-attack")?;
    require(&pd, "train-pd")?;
    require(&tgt, "train-ae --target")?;
    let (bp_src, pp, bp_tgt) = (BackboneParams::load(&atk)?, PdParams::load(&pd)?, BackboneParams::load(&tgt)?);
    let source = load_split(ctx, &ctx.cfg.paths.data, "synth")?;
    let target: Vec<(RangeImage, SegMask)> =
        load_split(ctx, &ctx.cfg.paths.target_data, "target synth")?.into_iter().map(|p| (p.dynamic, p.dynamic_mask)).collect();
    let out = train_mmd_uda_with_history(&source, &target, &bp_src, &bp_tgt, &pp, &ctx.cfg.train_mmd)?;
    let path = ctx.checkpoint(ATTACK_TARGET_CKPT);
    out.backbone.save(&path)?;
    let mut csv = String::from("epoch,loss,mmd\n");
    let _ = writeln!(csv, "0,,{}", out.mmd_before);
    for h in &out.history {
        let _ = writeln!(csv, "{},{},{}", h.epoch + 1, h.loss, h.mmd);
    }
    ctx.write_artifact(&path.with_extension("loss.csv"), &csv)?;
    Ok(out)
}

/// Loads the LQI and DSR models, training and saving any that are missing.
pub fn quality_models(ctx: &Context) -> Result<(LqiModel, DsrModel)> {
    let (lp, dp) = (ctx.checkpoint(LQI_CKPT), ctx.checkpoint(DSR_CKPT));
    let mut data = None;
    let mut train_data = || -> Result<Vec<ScanPair>> {
        if data.is_none() {
            data = Some(load_split(ctx, &ctx.cfg.paths.data, "synth")?);
        }
        Ok(data.clone().unwrap_or_default())
    };
    fs::create_dir_all(&ctx.cfg.paths.checkpoints)?;
    let q = &ctx.cfg.quality;
    let lm = if lp.exists() {
        LqiModel::load(&lp)?
    } else {
        let clean: Vec<RangeImage> = train_data()?.into_iter().flat_map(|p| [p.static_scan, p.dynamic]).collect();
        let m = train_lqi(&clean, q.sigma_max, q.levels, &q.lqi)?;
        m.save(&lp)?;
        m
    };
    let dm = if dp.exists() {
        DsrModel::load(&dp)?
    } else {
        let m = train_dsr_classifier(&train_data()?, &q.dsr)?;
        m.save(&dp)?;
        m
    };
    Ok((lm, dm))
}

#[derive(Clone, Debug)]
pub struct AttackSummary {
    pub dir: PathBuf,
    /// `(frame, k, pij_fraction)`
    pub frames: Vec<(usize, usize, f64)>,
}

/// Attacks the static scans of the sequence at `input` and writes
/// `seq_<id>_atk` under `out` plus a per-frame `pij.csv` inside it.
pub fn attack(ctx: &Context, input: &Path, model: &Path, out: &Path) -> Result<AttackSummary> {
    require(model, "train-attack")?;
    let bp = BackboneParams::load(model)?;
    let seq = read_sequence(input, ctx.read_opts())?;
    let first = seq.first().ok_or(Error::Empty("sequence"))?;
    check_sensor(&bp, &first.static_scan)?;
    ctx.cfg.mask.validate(first.static_scan.shape().0)?;
    let mut attacked = Vec::with_capacity(seq.len());
    let mut frames = Vec::with_capacity(seq.len());
    for p in &seq {
        let a = attack_scan(&p.static_scan, &p.static_mask, &ctx.cfg.mask, &bp)?;
        frames.push((p.frame_index, a.k(), a.pij_fraction));
        attacked.push(ScanPair { static_scan: a.attacked, ..p.clone() });
    }
    let dir = write_sequence(out, &attacked, "_atk")?;
    let mut csv = String::from("frame,k,pij_fraction\n");
    for (f, k, x) in &frames {
        let _ = writeln!(csv, "{f},{k},{x}");
    }
    ctx.write_artifact(&dir.join("pij.csv"), &csv)?;
    Ok(AttackSummary { dir, frames })
}

pub const METRICS_HEADER: &str = "sequence,scan,frames,chamfer,emd,lqi,dsr";

/// Reconstruction (Chamfer, EMD) and quality (LQI, DSR) means per sequence
/// and scan kind.
pub fn eval_metrics(ctx: &Context, inputs: &[PathBuf], model: &Path, out: &Path) -> Result<String> {
    require(model, "train-ae")?;
    let bp = BackboneParams::load(model)?;
    let (lm, dm) = quality_models(ctx)?;
    let mut csv = format!("{METRICS_HEADER}\n");
    for dir in inputs {
        let seq = read_sequence(dir, ctx.read_opts())?;
        let first = seq.first().ok_or(Error::Empty("sequence"))?;
        check_sensor(&bp, &first.static_scan)?;
        for kind in ["static", "dynamic"] {
            let (mut c, mut e, mut l, mut d) = (0.0, 0.0, 0.0, 0.0);
            for p in &seq {
                let (x, m) = if kind == "static" { (&p.static_scan, &p.static_mask) } else { (&p.dynamic, &p.dynamic_mask) };
                let (pc, rc) = (unproject(x), unproject(&bp.reconstruct(x, m)?));
                c += chamfer(&pc, &rc)?;
                e += emd_subsampled(&pc, &rc, ctx.cfg.eval.emd_points, ctx.cfg.seed ^ p.frame_index as u64)?;
                l += lqi(x, &lm)?;
                d += dsr(x, &dm)?;
            }
            let n = seq.len() as f64;
            let _ = writeln!(csv, "{},{kind},{},{},{},{},{}", first.sequence_id, seq.len(), c / n, e / n, l / n, d / n);
        }
    }
    ctx.write_artifact(out, &csv)?;
    Ok(csv)
}

fn optional_models(ctx: &Context) -> Result<(Option<LqiModel>, Option<DsrModel>)> {
    let (lp, dp) = (ctx.checkpoint(LQI_CKPT), ctx.checkpoint(DSR_CKPT));
    Ok((lp.exists().then(|| LqiModel::load(&lp)).transpose()?, dp.exists().then(|| DsrModel::load(&dp)).transpose()?))
}

/// Odometry evaluation of each input sequence. With `model`, runs the full
/// none/RR/RN/SLACK comparison; without, the clean static stream only.
/// Writes the report CSV, per-method trajectories and one plot per
/// sequence into `out`. Sequences are spread over `cfg.jobs` threads.
pub fn eval_slam(ctx: &Context, inputs: &[PathBuf], model: Option<&Path>, out: &Path) -> Result<Vec<ReportRow>> {
    if inputs.is_empty() {
        return Err(Error::Empty("input sequences"));
    }
    for d in inputs {
        require(&d.join("poses.txt"), "ground-truth trajectory")?;
    }
    let bp = match model {
        Some(m) => {
            require(m, "train-attack")?;
            Some(BackboneParams::load(m)?)
        }
        None => None,
    };
    let (lm, dm) = optional_models(ctx)?;
    let models = QualityModels { lqi: lm.as_ref(), dsr: dm.as_ref() };
    let cmp = CompareConfig {
        spec: ctx.cfg.mask.clone(),
        icp: ctx.cfg.icp.clone(),
        rpe_delta: ctx.cfg.eval.rpe_delta,
        parity_tolerance: ctx.cfg.eval.parity_tolerance,
        seed: ctx.cfg.seed,
    };
    let run_one = |dir: &PathBuf| -> Result<AttackReport> {
        let seq = read_sequence(dir, ctx.read_opts())?;
        let gt = poses_of(&seq)?;
        match &bp {
            Some(bp) => {
                check_sensor(bp, &seq[0].static_scan)?;
                compare_attacks(&seq, &gt, bp, &cmp, models)
            }
            None => evaluate_clean(&seq, &gt, &cmp, models),
        }
    };
    let jobs = ctx.cfg.jobs.max(1).min(inputs.len());
    let mut results: Vec<Option<Result<AttackReport>>> = (0..inputs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = inputs.len().div_ceil(jobs);
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .enumerate()
            .map(|(ci, dirs)| {
                let run_one = &run_one;
                s.spawn(move || (ci * chunk, dirs.iter().map(run_one).collect::<Vec<_>>()))
            })
            .collect();
        for h in handles {
            let (start, rs) = h.join().expect("evaluation thread panicked");
            for (i, r) in rs.into_iter().enumerate() {
                results[start + i] = Some(r);
            }
        }
    });
    let mut rows = Vec::new();
    fs::create_dir_all(out)?;
    for (dir, r) in inputs.iter().zip(results) {
        let report = r.expect("every input evaluated")?;
        let gt = poses_of(&read_sequence(dir, ctx.read_opts())?)?;
        for run in &report.runs {
            let name = format!("traj_seq{}_{}.txt", report.sequence, run.row.method.label().to_lowercase());
            ctx.write_artifact(&out.join(name), &run.trajectory.to_text())?;
        }
        plot_trajectories(out.join(format!("traj_seq{}.png", report.sequence)), &gt, &report.runs, 512)?;
        rows.extend(report.rows());
    }
    ctx.write_artifact(&out.join(REPORT_CSV), &format!("{REPORT_HEADER}\n{}", report_csv_rows(&rows)))?;
    Ok(rows)
}

/// Table-3-shaped text from one or more report CSVs.
pub fn report(inputs: &[PathBuf]) -> Result<String> {
    let mut rows = Vec::new();
    for p in inputs {
        require(p, "eval-slam")?;
        rows.extend(parse_report_csv(&fs::read_to_string(p)?)?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("report rows"));
    }
    Ok(render_table(&rows))
}

#[derive(Clone, Debug)]
pub struct DemoSummary {
    pub rows: Vec<ReportRow>,
    pub table: String,
    pub mmd_before: f64,
    pub mmd_after: f64,
    /// Every CSV written, relative to the demo root.
    pub csv_files: Vec<PathBuf>,
}

/// Whole recipe at minimum size under `root`: synth, every training
/// stage, attack, metrics, SLAM comparison and the text report.
pub fn demo(root: &Path, cfg: &ExperimentConfig) -> Result<DemoSummary> {
    let mut cfg = cfg.clone();
    cfg.paths = cfg.paths.under(root);
    let ctx = Context::new(&cfg)?;
    let c = &ctx.cfg;
    for split in [Split::Train, Split::Heldout, Split::Target] {
        synth(&ctx, split, &SynthArgs::default())?;
    }
    train_ae(&ctx, false)?;
    train_pretext(&ctx)?;
    train_attack(&ctx)?;
    train_ae(&ctx, true)?;
    let uda = train_mmd(&ctx)?;
    let heldout = list_sequences(&c.paths.heldout)?;
    let atk_root = c.paths.heldout.join("attacked");
    for d in &heldout {
        attack(&ctx, d, &ctx.checkpoint(ATTACK_CKPT), &atk_root)?;
    }
    eval_metrics(&ctx, &heldout, &ctx.checkpoint(AE_CKPT), &c.paths.reports.join(METRICS_CSV))?;
    let rows = eval_slam(&ctx, &heldout, Some(&ctx.checkpoint(ATTACK_CKPT)), &c.paths.reports)?;
    let table = report(&[c.paths.reports.join(REPORT_CSV)])?;
    ctx.write_artifact(&c.paths.reports.join("table.txt"), &table)?;
    let mut csv_files = Vec::new();
    collect_csv(root, root, &mut csv_files)?;
    csv_files.sort();
    Ok(DemoSummary { rows, table, mmd_before: uda.mmd_before, mmd_after: uda.mmd_after, csv_files })
}

fn collect_csv(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_csv(root, &p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slack::attack::{Discriminator, MaskCorruptionSpec};
use slack::backbone::ContrastiveMode;
use slack::cli::{self, Context, ExperimentConfig, Split, SynthArgs};
use slack::scanio::WorldSpec;
use slack::{Error, Result};

/// Adversarial point injection into LiDAR range images and its effect on
/// scan-matching odometry.
#[derive(Parser)]
#[command(name = "slack", version)]
struct Cli {
    /// Experiment config (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, pushed into every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-sequence evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, env = "SLACK_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "SLACK_CHECKPOINT_DIR")]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "SLACK_REPORT_DIR")]
    report_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic sequences.
    Synth {
        /// World description (TOML) replacing the config's `[world]`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// train, heldout or target.
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        first_id: Option<u32>,
    },
    /// Train the segmentation-attention autoencoder.
    TrainAe {
        /// none, triplet or npair.
        #[arg(long)]
        contrastive: Option<ContrastiveMode>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Plain autoencoder without segmentation attention.
        #[arg(long)]
        no_attention: bool,
        /// Train the target-domain autoencoder on `paths.target_data`.
        #[arg(long)]
        target: bool,
    },
    /// Train the pretext discriminator (needs train-ae).
    TrainPd {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adversarial training of the injecting backbone (needs train-pd).
    TrainAttack {
        #[arg(long)]
        epochs: Option<usize>,
        /// pretext or vanilla.
        #[arg(long)]
        discriminator: Option<Discriminator>,
    },
    /// MMD domain adaptation (needs train-attack and train-ae --target).
    TrainMmd {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        mmd_weight: Option<f64>,
    },
    /// Inject points into the static scans of one sequence.
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the attack-stage checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Mask corruption spec (TOML) replacing the config's `[mask]`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chamfer/EMD of reconstructions plus LQI/DSR per sequence.
    EvalMetrics {
        /// Sequence directories; defaults to every held-out sequence.
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Odometry under none/RR/RN/SLACK with matched budgets.
    EvalSlam {
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluate the unattacked stream only.
        #[arg(long)]
        clean_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render report CSVs as a text table.
    Report {
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole recipe at minimum size.
    Demo {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn base_config(cli: &Cli, demo: bool) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if demo => ExperimentConfig::demo(),
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(j) = cli.jobs {
        c.jobs = j;
    }
    if let Some(d) = &cli.data_dir {
        c.paths.data = d.join("train");
        c.paths.heldout = d.join("heldout");
        c.paths.target_data = d.join("target");
    }
    if let Some(d) = &cli.checkpoint_dir {
        c.paths.checkpoints = d.clone();
    }
    if let Some(d) = &cli.report_dir {
        c.paths.reports = d.clone();
    }
    Ok(c)
}

fn heldout_or(ctx: &Context, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if !inputs.is_empty() {
        return Ok(inputs.to_vec());
    }
    let all = cli::list_sequences(&ctx.cfg.paths.heldout)?;
    if all.is_empty() {
        return Err(Error::MissingDependency { stage: "synth --split heldout".into(), path: ctx.cfg.paths.heldout.clone() });
    }
    Ok(all)
}

fn run(cli: Cli) -> Result<()> {
    let mut c = base_config(&cli, matches!(cli.cmd, Cmd::Demo { .. }))?;
    match cli.cmd {
        Cmd::Synth { spec, out, split, frames, count, first_id } => {
            if let Some(p) = &spec {
                let w: WorldSpec = read_toml(p)?;
                c.sensor = w.sensor;
                c.world = w;
            }
            let ctx = Context::new(&c)?;
            for (dir, n) in cli::synth(&ctx, split, &SynthArgs { out, count, first_id, frames })? {
                println!("{}: {n} frames", dir.display());
            }
        }
        Cmd::TrainAe { contrastive, epochs, no_attention, target } => {
            if let Some(m) = contrastive {
                c.train_ae.contrastive = m;
            }
            if let Some(e) = epochs {
                c.train_ae.epochs = e;
            }
            if no_attention {
                c.backbone.attention = false;
            }
            let p = cli::train_ae(&Context::new(&c)?, target)?;
            println!("wrote {}", p.display());
        }
        Cmd::TrainPd { epochs } => {
            if let Some(e) = epochs {
                c.train_pd.epochs = e;
            }
            println!("wrote {}", cli::train_pretext(&Context::new(&c)?)?.display());
        }
        Cmd::TrainAttack { epochs, discriminator } => {
            if let Some(e) = epochs {
                c.train_attack.epochs = e;
            }
            if let Some(d) = discriminator {
                c.train_attack.discriminator = d;
            }
            println!("wrote {}", cli::train_attack(&Context::new(&c)?)?.display());
        }
        Cmd::TrainMmd { epochs, mmd_weight } => {
            if let Some(e) = epochs {
                c.train_mmd.epochs = e;
            }
            if let Some(w) = mmd_weight {
                c.train_mmd.mmd_weight = w;
            }
            let o = cli::train_mmd(&Context::new(&c)?)?;
            println!("mmd {:.6} -> {:.6}", o.mmd_before, o.mmd_after);
        }
        Cmd::Attack { input, model, spec, out } => {
            if let Some(p) = &spec {
                c.mask = read_toml::<MaskCorruptionSpec>(p)?;
            }
            let ctx = Context::new(&c)?;
            let model = model.unwrap_or_else(|| ctx.checkpoint(cli::ATTACK_CKPT));
            let out = out.unwrap_or_else(|| ctx.cfg.paths.heldout.join("attacked"));
            let s = cli::attack(&ctx, &input, &model, &out)?;
            let mean = s.frames.iter().map(|f| f.2).sum::<f64>() / s.frames.len().max(1) as f64;
            println!("{}: {} frames, mean pij {:.5}", s.dir.display(), s.frames.len(), mean);
        }
        Cmd::EvalMetrics { inputs, model, out } => {
            let ctx = Context::new(&c)?;
            let inputs = heldout_or(&ctx, &inputs)?;
            let model = model.unwrap_or_else(|| ctx.checkpoint(cli::AE_CKPT));
            let out = out.unwrap_or_else(|| ctx.cfg.paths.reports.join(cli::METRICS_CSV));
            print!("{}", cli::eval_metrics(&ctx, &inputs, &model, &out)?);
        }
        Cmd::EvalSlam { inputs, model, clean_only, out } => {
            let ctx = Context::new(&c)?;
            let inputs = heldout_or(&ctx, &inputs)?;
            let model = (!clean_only).then(|| model.unwrap_or_else(|| ctx.checkpoint(cli::ATTACK_CKPT)));
            let out = out.unwrap_or_else(|| ctx.cfg.paths.reports.clone());
            let rows = cli::eval_slam(&ctx, &inputs, model.as_deref(), &out)?;
            print!("{}", slack::slameval::render_table(&rows));
        }
        Cmd::Report { inputs, out } => {
            let ctx = Context::new(&c)?;
            let inputs = if inputs.is_empty() { vec![ctx.cfg.paths.reports.join(cli::REPORT_CSV)] } else { inputs };
            let table = cli::report(&inputs)?;
            if let Some(p) = out {
                ctx.write_artifact(&p, &table)?;
            }
            print!("{table}");
        }
        Cmd::Demo { out } => {
            let s = cli::demo(&out, &c)?;
            print!("{}", s.table);
            println!("mmd {:.6} -> {:.6}", s.mmd_before, s.mmd_after);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e))
        }
    }
}

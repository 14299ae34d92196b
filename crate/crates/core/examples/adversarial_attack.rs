//! Train an injecting backbone against the frozen pretext head, then attack
//! one static scan and compare with the random baselines at the same budget.

use slack::attack::{attack_scan, baseline_rn, baseline_rr_count, train_adversarial_with_history, AdvTrainConfig, MaskCorruptionSpec};
use slack::backbone::{train_backbone, BackboneConfig, TrainConfig};
use slack::pretext::{train_pd, PdTrainConfig};
use slack::scanio::{synth_sequence, SensorConfig, WorldSpec};

fn main() -> slack::Result<()> {
    let sensor = SensorConfig { azimuth_bins: 128, ..SensorConfig::default() };
    let train = synth_sequence(&WorldSpec { seed: 31, frame_count: 24, sensor, ..WorldSpec::default() })?;
    let model = BackboneConfig { sensor, latent_dim: 32, ..BackboneConfig::default() };
    let ae = train_backbone(&train, &model, &TrainConfig { epochs: 6, ..TrainConfig::default() })?.backbone;
    let pd = train_pd(&train, &ae, &PdTrainConfig { epochs: 4, ..PdTrainConfig::default() })?;
    let adv = train_adversarial_with_history(&train, &pd.backbone, &pd.pd, &AdvTrainConfig { epochs: 4, ..AdvTrainConfig::default() })?;
    for e in &adv.history {
        println!("epoch {:>2}  bce {:.4}  recon {:.4}  mean pretext score {:.3}", e.epoch, e.bce, e.recon, e.mean_score);
    }

    let target = &train[12];
    let spec = MaskCorruptionSpec::default();
    let slack_scan = attack_scan(&target.static_scan, &target.static_mask, &spec, &adv.backbone)?;
    let k = slack_scan.k();
    let rr = baseline_rr_count(&target.static_scan, k, 1)?;
    let rn = baseline_rn(&target.static_scan, k, &slack_scan, 2)?;
    println!("RR    removed cells {:>4}", target.static_scan.valid_count() - rr.attacked.valid_count());
    for (name, a) in [("SLACK", &slack_scan), ("RN", &rn)] {
        let mean_delta = a.deltas().iter().map(|d| d.abs()).sum::<f64>() / a.k().max(1) as f64;
        println!("{name:<5} changed cells {:>4}  mean |range change| {mean_delta:.3} m", a.k());
    }
    Ok(())
}

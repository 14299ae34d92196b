//! Align the latent distribution of a target-domain backbone with the
//! source attack backbone by minimising a multi-bandwidth MMD.

use slack::attack::{mmd, train_adversarial, train_mmd_uda_with_history, AdvTrainConfig, MmdConfig, UdaConfig};
use slack::backbone::{train_backbone, BackboneConfig, TrainConfig};
use slack::pretext::{train_pd, PdTrainConfig};
use slack::scanio::{synth_sequence, SensorConfig, WorldSpec};

fn main() -> slack::Result<()> {
    let sensor = SensorConfig { azimuth_bins: 128, ..SensorConfig::default() };
    let source = synth_sequence(&WorldSpec { seed: 41, frame_count: 20, sensor, ..WorldSpec::default() })?;
    let target = synth_sequence(&WorldSpec { sequence_id: 80, seed: 42, frame_count: 12, static_obstacles: 40, dynamic_actors: 12, sensor, ..WorldSpec::default() })?;

    let model = BackboneConfig { sensor, latent_dim: 32, ..BackboneConfig::default() };
    let ae = train_backbone(&source, &model, &TrainConfig { epochs: 5, ..TrainConfig::default() })?.backbone;
    let pd = train_pd(&source, &ae, &PdTrainConfig { epochs: 3, ..PdTrainConfig::default() })?;
    let attack = train_adversarial(&source, &pd.backbone, &pd.pd, &AdvTrainConfig { epochs: 3, ..AdvTrainConfig::default() })?;
    let tgt_ae = train_backbone(&target, &model, &TrainConfig { epochs: 5, ..TrainConfig::default() })?.backbone;

    let scans: Vec<_> = target.iter().map(|p| (p.dynamic.clone(), p.dynamic_mask.clone())).collect();
    let out = train_mmd_uda_with_history(&source, &scans, &attack, &tgt_ae, &pd.pd, &UdaConfig { epochs: 8, ..UdaConfig::default() })?;
    for e in &out.history {
        println!("epoch {:>2}  loss {:.4}  mmd {:.4}", e.epoch, e.loss, e.mmd);
    }
    println!("bandwidths {:?}", out.sigmas.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>());
    println!("MMD {:.4} -> {:.4}", out.mmd_before, out.mmd_after);

    let z_src: Vec<_> = source.iter().map(|p| attack.encode(&p.dynamic, &p.dynamic_mask)).collect::<slack::Result<_>>()?;
    println!("self-MMD of the source codes: {:.2e}", mmd(&z_src, &z_src, &MmdConfig::default())?);
    Ok(())
}

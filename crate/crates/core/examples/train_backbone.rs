//! Train the segmentation-attention autoencoder with the N-pair loss and
//! compare its held-out reconstruction error against a plain autoencoder.

use slack::backbone::{train_backbone, BackboneConfig, BackboneParams, ContrastiveMode, TrainConfig};
use slack::quality::chamfer;
use slack::scanio::{synth_sequence, unproject, ScanPair, SensorConfig, WorldSpec};

fn heldout_chamfer(bp: &BackboneParams, val: &[ScanPair]) -> slack::Result<f64> {
    let mut total = 0.0;
    for p in val {
        let rec = bp.reconstruct(&p.dynamic, &p.dynamic_mask)?;
        total += chamfer(&unproject(&p.dynamic), &unproject(&rec))?;
    }
    Ok(total / val.len() as f64)
}

fn main() -> slack::Result<()> {
    let sensor = SensorConfig { azimuth_bins: 128, ..SensorConfig::default() };
    let world = |id, seed, frames| synth_sequence(&WorldSpec { sequence_id: id, seed, frame_count: frames, sensor, ..WorldSpec::default() });
    let mut train = world(0, 1, 16)?;
    train.extend(world(1, 2, 16)?);
    let val = world(9, 9, 6)?;

    for (name, attention, contrastive) in [("attention + N-pair", true, ContrastiveMode::Npair), ("plain", false, ContrastiveMode::None)] {
        let model = BackboneConfig { sensor, latent_dim: 32, attention, ..BackboneConfig::default() };
        let out = train_backbone(&train, &model, &TrainConfig { epochs: 8, contrastive, ..TrainConfig::default() })?;
        let last = out.history.last().expect("at least one epoch");
        println!("{name:<20} final train loss {:.4}  held-out chamfer {:.2}", last.total, heldout_chamfer(&out.backbone, &val)?);
    }
    Ok(())
}

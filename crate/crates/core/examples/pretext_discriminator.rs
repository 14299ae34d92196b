//! Train the pretext discriminator on top of an autoencoder and check how
//! well it separates same-scene pairs from static/dynamic pairs.

use slack::backbone::{train_backbone, BackboneConfig, TrainConfig};
use slack::pretext::{pd_evaluate, train_pd, PdTrainConfig};
use slack::scanio::{synth_sequence, SensorConfig, WorldSpec};

fn main() -> slack::Result<()> {
    let sensor = SensorConfig { azimuth_bins: 128, ..SensorConfig::default() };
    let world = |id, seed, frames| synth_sequence(&WorldSpec { sequence_id: id, seed, frame_count: frames, sensor, ..WorldSpec::default() });
    let mut train = world(0, 21, 16)?;
    train.extend(world(1, 22, 16)?);
    let val = world(7, 27, 12)?;

    let model = BackboneConfig { sensor, latent_dim: 32, ..BackboneConfig::default() };
    let ae = train_backbone(&train, &model, &TrainConfig { epochs: 6, ..TrainConfig::default() })?.backbone;
    let pd = train_pd(&train, &ae, &PdTrainConfig { epochs: 6, ..PdTrainConfig::default() })?;
    for e in &pd.history {
        println!("epoch {:>2}  loss {:.4}  train accuracy {:.3}", e.epoch, e.loss, e.accuracy);
    }
    let eval = pd_evaluate(&val, &pd.backbone, &pd.pd, 0)?;
    println!(
        "held-out accuracy {:.3}  mean score same-scene {:.3}  static-vs-dynamic {:.3}",
        eval.accuracy, eval.mean_homogeneous, eval.mean_heterogeneous
    );
    Ok(())
}

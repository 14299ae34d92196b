//! Chamfer and EMD between clouds, the learned LiDAR quality index under
//! increasing noise, and the dynamic-segment ratio of static vs dynamic scans.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slack::quality::{add_range_noise, chamfer, dsr, dsr_from_mask, emd_subsampled, lqi, train_dsr_classifier, train_lqi, DsrTrainConfig, LqiTrainConfig};
use slack::scanio::{synth_sequence, unproject, RangeImage, SensorConfig, WorldSpec};

fn main() -> slack::Result<()> {
    let sensor = SensorConfig { azimuth_bins: 128, ..SensorConfig::default() };
    let train = synth_sequence(&WorldSpec { seed: 51, frame_count: 40, sensor, ..WorldSpec::default() })?;
    let test = synth_sequence(&WorldSpec { sequence_id: 5, seed: 55, frame_count: 6, sensor, ..WorldSpec::default() })?;

    let (a, b) = (unproject(&test[0].static_scan), unproject(&test[0].dynamic));
    println!("static vs dynamic frame 0: chamfer {:.2}  emd(256 pts) {:.2}", chamfer(&a, &b)?, emd_subsampled(&a, &b, 256, 0)?);

    let clean: Vec<RangeImage> = train.iter().map(|p| p.dynamic.clone()).collect();
    let lqi_model = train_lqi(&clean, 1.0, 6, &LqiTrainConfig { epochs: 5, ..LqiTrainConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let noisy = add_range_noise(&test[2].dynamic, sigma, &mut rng);
        println!("noise sigma {sigma:.2} m  LQI estimate {:.3}", lqi(&noisy, &lqi_model)?);
    }

    let dsr_model = train_dsr_classifier(&train, &DsrTrainConfig { epochs: 20, ..DsrTrainConfig::default() })?;
    for p in &test {
        println!(
            "frame {}  DSR static {:.4}  dynamic {:.4}  (ground truth {:.4})",
            p.frame_index,
            dsr(&p.static_scan, &dsr_model)?,
            dsr(&p.dynamic, &dsr_model)?,
            dsr_from_mask(&p.dynamic, &p.dynamic_mask)?
        );
    }
    Ok(())
}

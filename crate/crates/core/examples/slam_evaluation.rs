//! Scan-to-scan ICP odometry on clean scans, trajectory alignment and the
//! ATE/RPE errors against ground truth.

use slack::scanio::{poses_of, synth_sequence, WorldSpec};
use slack::slameval::{ate, odometry, rpe, IcpConfig};

fn main() -> slack::Result<()> {
    let seq = synth_sequence(&WorldSpec { seed: 61, frame_count: 30, ..WorldSpec::default() })?;
    let gt = poses_of(&seq)?;
    let scans: Vec<_> = seq.iter().map(|p| p.static_scan.clone()).collect();
    let ts: Vec<f64> = seq.iter().map(|p| p.timestamp).collect();

    let odo = odometry(&scans, &ts, &IcpConfig::default())?;
    let r = rpe(&odo.trajectory, &gt, 1)?;
    println!("static stream: ATE {:.4} m  RPE {:.4} m / {:.3} deg  degenerate steps {}", ate(&odo.trajectory, &gt)?, r.trans, r.rot_deg, odo.degenerate_steps());

    let dynamic: Vec<_> = seq.iter().map(|p| p.dynamic.clone()).collect();
    let odo = odometry(&dynamic, &ts, &IcpConfig::default())?;
    println!("dynamic stream: ATE {:.4} m", ate(&odo.trajectory, &gt)?);
    Ok(())
}

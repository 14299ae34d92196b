//! Generate a synthetic sequence, write it to disk and read it back.

use slack::scanio::{difference_mask, poses_of, read_sequence, synth_sequence, unproject, write_sequence, ScanReadOptions, WorldSpec};

fn main() -> slack::Result<()> {
    let spec = WorldSpec { sequence_id: 4, seed: 11, frame_count: 12, ..WorldSpec::default() };
    let seq = synth_sequence(&spec)?;
    for p in seq.iter().step_by(4) {
        let changed = difference_mask(&p.static_scan, &p.dynamic).count();
        println!(
            "frame {:>2}  t={:.1}s  static points {:>4}  dynamic points {:>4}  actor cells {:>3}  cells changed {changed}",
            p.frame_index,
            p.timestamp,
            unproject(&p.static_scan).len(),
            unproject(&p.dynamic).len(),
            p.dynamic_mask.count(),
        );
    }
    let gt = poses_of(&seq)?;
    println!("ground-truth path: {} poses", gt.len());

    let dir = std::env::temp_dir().join("slack_synth_world");
    let written = write_sequence(&dir, &seq, "")?;
    let back = read_sequence(&written, ScanReadOptions::from(&spec.sensor))?;
    assert_eq!(back.len(), seq.len());
    println!("wrote and re-read {}", written.display());
    Ok(())
}

//! The full recipe at demo size: synthesize data, train every stage, attack
//! the held-out sequence with SLACK and both baselines, and print the table.
//!
//! Pass an output directory as the first argument; defaults to a temp dir.

use slack::cli::{demo, ExperimentConfig};

fn main() -> slack::Result<()> {
    let root = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("slack_end_to_end"));
    let summary = demo(&root, &ExperimentConfig::demo())?;
    print!("{}", summary.table);
    println!("latent MMD after adaptation: {:.4} -> {:.4}", summary.mmd_before, summary.mmd_after);
    println!("artifacts under {}:", root.display());
    for f in &summary.csv_files {
        println!("  {}", f.display());
    }
    Ok(())
}

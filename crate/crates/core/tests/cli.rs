use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[sensor]
azimuth_bins = 64

[synth]
train_sequences = 1
heldout_sequences = 1
heldout_frames = 8
target_sequences = 1

[world]
frame_count = 6

[backbone]
latent_dim = 8
widths = [4, 8]

[train_ae]
epochs = 1

[train_pd]
epochs = 1

[train_attack]
epochs = 1

[train_mmd]
epochs = 1

[quality.lqi]
epochs = 1

[quality.dsr]
epochs = 1
"#;

fn slack(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slack"))
        .current_dir(root)
        .env_remove("SLACK_DATA_DIR")
        .env_remove("SLACK_CHECKPOINT_DIR")
        .env_remove("SLACK_REPORT_DIR")
        .arg("--config")
        .arg(root.join("tiny.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let o = slack(root, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn missing_stage_exits_with_dependency_code() {
    let d = setup();
    assert_eq!(slack(d.path(), &["train-pd"]).status.code(), Some(3));
    assert_eq!(slack(d.path(), &["eval-slam", "--clean-only"]).status.code(), Some(3));
    let o = slack(d.path(), &["train-attack"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn invalid_input_exits_with_validation_code() {
    let d = setup();
    assert_eq!(slack(d.path(), &["synth", "--frames", "0"]).status.code(), Some(2));
    fs::write(d.path().join("bad.toml"), "seed = \"seven\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_slack")).current_dir(d.path()).args(["--config", "bad.toml", "synth"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(slack(d.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn staged_pipeline_produces_ordered_report() {
    let d = setup();
    let root = d.path();
    ok(root, &["synth"]);
    ok(root, &["synth", "--split", "heldout"]);
    assert!(root.join("data/train/seq_0").is_dir());
    assert!(root.join("data/heldout/seq_50").is_dir());

    ok(root, &["eval-slam", "--clean-only", "--out", "clean"]);
    let clean = data_lines(&root.join("clean/attack_report.csv"));
    assert_eq!(clean.len(), 2, "{clean:?}");
    assert!(clean[1].starts_with("50,none,"));

    ok(root, &["train-ae"]);
    ok(root, &["train-pd"]);
    ok(root, &["train-attack"]);
    assert!(root.join("checkpoints/attack.slkc").is_file());

    ok(root, &["attack", "--in", "data/heldout/seq_50", "--out", "atk"]);
    let pij = data_lines(&root.join("atk/seq_50_atk/pij.csv"));
    assert_eq!(pij.len(), 1 + 8);

    let table = ok(root, &["eval-slam"]);
    let rows = data_lines(&root.join("reports/attack_report.csv"));
    let methods: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(methods, ["none", "RR", "RN", "SLACK"]);
    assert!(fs::read_to_string(root.join("reports/attack_report.csv")).unwrap().starts_with("# seed=3 config="));
    assert!(root.join("reports/traj_seq50_slack.txt").is_file());

    let rendered = ok(root, &["report"]);
    assert_eq!(rendered, table);
}

use std::path::Path;
use std::process::Command;

use polypseg::config::CliConfig;
use polypseg::dataset::{DatasetManifest, Split};
use polypseg::pipeline::{run_stage, Stage, METRICS_CSV, RUN_SUMMARY};

const TINY: &str = r#"
seed = 4
[dataset]
n_polyps = 5
n_nonpolyps = 2
[detector]
kind = "oracle"
[models]
architectures = ["UNet", "LinkNet"]
encoder_channels = [8, 8, 16, 16, 32]
blocks_per_stage = 1
[models.decoder_channels]
UNet = [16, 16, 8, 8, 8]
LinkNet = [8]
[training]
epochs = 1
[evaluation]
grids = 1
"#;

fn polypseg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_polypseg")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_subcommand_succeeds_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let root = dir.path().join("data");
    let out = polypseg(&["pipeline", "--config", &cfg, "--root", root.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("results").join(RUN_SUMMARY).exists());
    let csv = std::fs::read_to_string(root.join("results").join(METRICS_CSV)).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "arch,iou,dice,precision,recall,f1,psnr,ssim,n");
    assert!(rows[1].starts_with("UNet,") && rows[2].starts_with("LinkNet,"));
    assert!(root.join("results/figures/metrics_mask.png").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[dataset]\nsplit_ratio = 1.5\n").unwrap();
    assert_eq!(polypseg(&["generate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    std::fs::write(&bad, "colour = 3\n").unwrap();
    let out = polypseg(&["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    let missing = dir.path().join("nope.toml");
    assert_eq!(polypseg(&["generate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(polypseg(&["generate", "--seed", "minus-one"]).status.code(), Some(1));
    assert_eq!(polypseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn stage_without_inputs_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let root = dir.path().join("empty");
    for stage in ["detect", "masks", "train", "evaluate", "visualize"] {
        let out = polypseg(&[stage, "--config", &cfg, "--root", root.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{stage}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(stage), "{stage}");
    }
}

#[test]
fn stages_run_individually_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = CliConfig::from_toml(TINY).unwrap();
    cfg.root = dir.path().to_path_buf();
    cfg.seed = 9;
    run_stage(Stage::Generate, &cfg).unwrap();
    let m = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.len(), 7);
    assert_eq!(m.count(Split::Train), 5);
    // Masks need detections, so running it first is a stage failure.
    let err = run_stage(Stage::Masks, &cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Masks);
    run_stage(Stage::Detect, &cfg).unwrap();
    run_stage(Stage::Masks, &cfg).unwrap();
    let m = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert!(m.entries.iter().all(|e| e.mask.as_deref().is_some_and(|p| p.starts_with("SAM-Results/"))));
}

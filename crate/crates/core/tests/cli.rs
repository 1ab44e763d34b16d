//! End-to-end runs of the `momnet` binary.

use momnet::config::{DataSource, RunConfig};
use momnet::memprofile::ModeComparison;
use momnet::momentum::BackpropMode;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn momnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momnet")).args(args).env_remove("MOMENTUM_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path, epochs: usize) -> std::path::PathBuf {
    let mut cfg = RunConfig::segmentation_default();
    cfg.data = DataSource::Shapes { n: 20, hw: 16, seed: 3 };
    cfg.network.input_shape = vec![1, 16, 16];
    cfg.network.stages.iter_mut().for_each(|s| s.channels = 2);
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    cfg.train.adam.lr = 1e-2;
    cfg.out_dir = dir.join("run");
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn verify_passes_on_a_fresh_build() {
    let o = momnet(&["verify", "--depth", "10", "--dtype", "f64"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}{}", stderr(&o));
    assert!(out.contains("PASS gradient_match/stored vs reversible, depth 10"), "{out}");
    assert!(out.ends_with(" 0 failed\n"), "{out}");
}

#[test]
fn verify_reports_the_gamma_zero_precondition() {
    let o = momnet(&["verify", "--gamma", "0", "--mode", "reversible", "--cases", "5", "--seeds", "2", "--depth", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL inversion/block gamma=0: failed precondition"), "{}", stdout(&o));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let o = momnet(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in ["config.json", "split.json", "train_log.csv", "metrics.csv", "metrics.md", "checkpoint/params.mrt", "checkpoint/manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(run.join("train_log.csv")).unwrap(), "epoch,train_loss,val_loss,val_metric\n");
}

#[test]
fn resolved_config_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let o = momnet(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let again = dir.path().join("again");
    let o = momnet(&["train", "--config", run.join("config.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "train_log.csv", "checkpoint/params.mrt"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(header.starts_with("model,mDSC,mIoU,Rec.,Prec.,F2,HD\n"), "{header}");

    let o = momnet(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("eval/eval.csv")).unwrap(),
        fs::read_to_string(run.join("metrics.csv")).unwrap()
    );
}

#[test]
fn env_seed_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_momnet"))
        .args(["train", "--config", cfg.to_str().unwrap()])
        .env("MOMENTUM_SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = RunConfig::load(&dir.path().join("run/config.json")).unwrap();
    assert_eq!(resolved.seed, 99);
}

#[test]
fn eval_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let c = cfg.to_str().unwrap();
    let o = momnet(&["eval", "--baseline", "ground-truth", "--config", c, "--subset", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("| Model "), "{table}");
    let row = table.lines().nth(2).unwrap();
    assert!(row.contains("1.0000 | 1.0000") && row.trim_end().ends_with("0.0000 |"), "{row}");
    let o = momnet(&["eval", "--baseline", "background", "--config", c]);
    assert!(stdout(&o).lines().nth(2).unwrap().contains("| 0.0000 "), "{}", stdout(&o));
    assert!(stdout(&o).contains("undefined"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_json = dir.path().join("bad.json");
    fs::write(&bad_json, "{ not json").unwrap();
    assert_eq!(momnet(&["train", "--config", bad_json.to_str().unwrap()]).status.code(), Some(2));

    let mut cfg = RunConfig::segmentation_default();
    cfg.network.stages[0].channels = 0;
    let invalid = dir.path().join("invalid.json");
    fs::write(&invalid, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = momnet(&["train", "--config", invalid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("network.stages[0].channels"), "{}", stderr(&o));

    // checkpoint trained on 16x16 inputs against 24x24 data
    let cfg16 = tiny_config(dir.path(), 0);
    assert!(momnet(&["train", "--config", cfg16.to_str().unwrap()]).status.success());
    let samples = dir.path().join("samples24");
    momnet::data::save_sample_dir(&momnet::data::gen_shapes_seg(3, 24, 1).unwrap(), &samples).unwrap();
    let ckpt = dir.path().join("run/checkpoint");
    let o = momnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data-dir", samples.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::remove_file(samples.join("shape00001.mask.mrt")).unwrap();
    let o = momnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data-dir", samples.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("shape00001"));

    let mut cfg = RunConfig::from_json(&fs::read_to_string(&cfg16).unwrap()).unwrap();
    cfg.train.epochs = 3;
    cfg.train.adam.lr = 1e300;
    cfg.out_dir = dir.path().join("blowup");
    let diverge = dir.path().join("diverge.json");
    fs::write(&diverge, cfg.to_json().unwrap()).unwrap();
    let o = momnet(&["train", "--config", diverge.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(dir.path().join("blowup/checkpoint/params.mrt").exists());
}

#[test]
fn memprofile_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mem");
    let o = momnet(&["memprofile", "--depths", "1,2,4,8,16", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = ModeComparison::rows_from_csv(&fs::read_to_string(out.join("memprofile.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    let rev: Vec<usize> = rows.iter().filter(|r| r.mode == BackpropMode::Reversible).map(|r| r.ledger.chain_states).collect();
    assert!(rev.windows(2).all(|w| w[0] == w[1]), "{rev:?}");
    let stored: Vec<(usize, usize)> =
        rows.iter().filter(|r| r.mode == BackpropMode::Stored).map(|r| (r.depth, r.ledger.chain_states)).collect();
    let per_block = stored[0].1;
    assert!(stored.iter().all(|&(d, c)| c == d * per_block), "{stored:?}");
}

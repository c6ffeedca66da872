use std::path::Path;
use std::process::{Command, Output};

fn tta(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tta"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn tta")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const TINY: &str = "
data.train_size = 48
data.test_size = 24
model.arch = mlp-small:3x32x32:10
model.train.epochs = 1
model.train.batch_size = 16
adapt.steps = 1
adapt.batch_size = 12
data.corruptions = gaussian_noise@3, contrast@5
";

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "adapt.stepz = 3\n");
    for verb in ["train-source", "corrupt", "adapt", "sweep"] {
        let o = tta(&[verb, "--config", &cfg], dir.path());
        assert_eq!(code(&o), 2, "{verb}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("adapt.stepz"));
    }
}

#[test]
fn missing_config_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tta(&["adapt", "--config", "nope.cfg"], dir.path())), 2);
    assert_eq!(code(&tta(&["adapt", "--seed", "x"], dir.path())), 2);
    assert_eq!(code(&tta(&["frobnicate"], dir.path())), 2);
}

#[test]
fn truncated_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("test.bin"), vec![3u8; 3073 + 100]).unwrap();
    let cfg = write(dir.path(), "files.cfg", "data.source = files\ndata.test = test.bin\n");
    let o = tta(&["corrupt", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3073"));
}

#[test]
fn report_without_metrics_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tta(&["report", "--out", "empty"], dir.path())), 3);
}

#[test]
fn divergent_training_is_a_numeric_abort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hot.cfg", &format!("{TINY}model.train.lr = 1e30\n"));
    let o = tta(&["train-source", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "tiny.cfg", TINY);

    let o = tta(&["train-source", "--config", &cfg, "--seed", "3", "--out", "src"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("src/source.ckpt").is_file());

    let o = tta(&["corrupt", "--config", &cfg, "--seed", "1", "--out", "sets"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("sets/seed-1/manifest.json").is_file());
    assert!(d.join("sets/seed-1/contrast_s5.bin").is_file());

    let adapt_cfg = write(d, "adapt.cfg", &format!("{TINY}model.checkpoint = src/source.ckpt\n"));
    let o = tta(&["adapt", "--config", &adapt_cfg, "--seed", "2", "--out", "run"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(d.join("run/metrics.jsonl")).unwrap();
    // 3 default methods x 2 corruptions x 2 batches of 12
    assert_eq!(metrics.lines().count(), 12);

    let o = tta(&["report", "--out", "run"], d);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("proposed") && table.contains("gaussian_noise"), "{table}");

    let sweep_cfg = write(
        d,
        "sweep.cfg",
        &format!("{TINY}model.checkpoint = src/source.ckpt\nsweep.axis = steps\nsweep.values = 0, 2\n"),
    );
    let o = tta(&["sweep", "--config", &sweep_cfg, "--out", "sw"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

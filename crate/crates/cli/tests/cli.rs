//! Exit codes and output of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

fn s4mtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s4mtl")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("sweep.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = "dataset.synthetic.count = 30
dataset.side = 16
methods = UNET
fractions = 0.5
seeds = 0
output = out
train.epochs = 1
train.batch_size = 8
generator.depth = 1
generator.base_channels = 2
discriminator.depth = 2
";

#[test]
fn validate_accepts_good_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s4mtl(&["validate", &write_config(tmp.path(), TINY)]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn config_errors_exit_one_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TINY}train.epoch = 3\n"));
    for cmd in ["validate", "run"] {
        let out = s4mtl(&[cmd, &cfg]);
        assert_eq!(code(&out), 1, "{cmd}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("line 12"), "{err}");
    }
    assert_eq!(code(&s4mtl(&["validate", "/nonexistent/sweep.cfg"])), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&s4mtl(&["train"])), 1);
    assert_eq!(code(&s4mtl(&["run"])), 1);
    assert_eq!(code(&s4mtl(&["--help"])), 0);
}

#[test]
fn run_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = s4mtl(&["run", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("UNET"));
    let dir = tmp.path().join("out");
    let out = s4mtl(&["report", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("figures").is_dir());
}

#[test]
fn refused_run_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    assert_eq!(code(&s4mtl(&["run", &cfg])), 0);
    let changed = write_config(tmp.path(), &format!("{TINY}train.lr_g = 0.001\n"));
    assert_eq!(code(&s4mtl(&["run", &changed])), 2);
    assert_eq!(code(&s4mtl(&["run", &changed, "--force"])), 0);
}

#[test]
fn report_on_missing_directory_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s4mtl(&["report", tmp.path().join("nothing").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_writes_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dest = tmp.path().join("data");
    let out = s4mtl(&["synth", "12", "16", "1", dest.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_dir(&dest).unwrap().count() > 0);
    assert_eq!(code(&s4mtl(&["synth", "12", "2", "1", dest.to_str().unwrap()])), 1);
}

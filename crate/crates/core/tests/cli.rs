use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hut::checkpoint::Checkpoint;

fn hut(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hut"))
        .current_dir(cwd)
        .env_remove("HUT_OUT_DIR")
        .args(args)
        .output()
        .expect("spawn hut")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_sweep_kind_fails_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = hut(dir.path(), &["sweep", "layers"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values"));
}

#[test]
fn flops_csv_has_header_and_tie_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hut(dir.path(), &["flops", "--out", "o", "--n", "1", "--d", "4", "--r", "2"]));
    let csv = fs::read_to_string(dir.path().join("o/flops.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "method,N,d,k,r,theoretical,measured");
    assert!(lines.contains(&"HUT,1,4,4,2,108,108"));
    assert!(lines.contains(&"LoRA,1,4,4,2,108,108"));
}

#[test]
fn env_var_supplies_out_dir_and_nothing_else_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_hut"))
        .current_dir(dir.path())
        .env("HUT_OUT_DIR", &out)
        .args(["train", "--steps", "3"])
        .output()
        .unwrap();
    ok(&o);
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("from-env")]);
    let mut files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["adapters.hutckpt", "loss.csv", "summary.txt"]);
}

#[test]
fn train_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&hut(dir.path(), &["train", "--out", out, "--seed", "5", "--steps", "20", "--method", "lora", "--targets", "Wq,Wo", "--rank", "2", "--lr", "0.02"]));
    }
    for f in ["loss.csv", "adapters.hutckpt", "summary.txt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let loss = fs::read_to_string(dir.path().join("a/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 22);
    let ckpt = Checkpoint::load(&dir.path().join("a/adapters.hutckpt")).unwrap();
    assert_eq!(ckpt.seed, 5);
    assert_eq!(ckpt.config_value("method"), Some("lora"));
    assert!(ckpt.tensor("Wo.lora.WB").is_some());
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "rank = 2\nsteps = 4\nmethod = \"lora\"\n").unwrap();
    ok(&hut(dir.path(), &["train", "--config", "run.toml", "--rank", "3", "--out", "o"]));
    let summary = fs::read_to_string(dir.path().join("o/summary.txt")).unwrap();
    assert!(summary.starts_with("method=lora targets=Wq+Wv rank=3 "), "{summary}");

    fs::write(dir.path().join("bad.toml"), "rnak = 2\n").unwrap();
    let o = hut(dir.path(), &["train", "--config", "bad.toml", "--out", "o"]);
    assert!(!o.status.success());
}

#[test]
fn validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hut(dir.path(), &["validate"]);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

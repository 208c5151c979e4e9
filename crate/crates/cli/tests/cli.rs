use std::path::Path;
use std::process::{Command, Output};

fn amc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn amc")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "train_per_class=6",
    "--set",
    "test_per_class=4",
    "--set",
    "snrs=-4,12",
    "--set",
    "frame_len=200",
];

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = amc(&["gen-data", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn cumulants_table_has_four_rows() {
    let out = amc(&["cumulants-table"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("scheme,"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = amc(&["train", "--data", path(&dir.path().join("none")), "--out", path(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn bad_config_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = amc(&["gen-data", "--set", "frame_len=zero", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_twice_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("desk.cfg");
    std::fs::write(&cfg, "profile = desk\ntrain_per_class = 5\ntest_per_class = 3\nsnrs = 0,6\nframe_len = 128\n").unwrap();
    for out in ["a", "b"] {
        let o = amc(&["gen-data", "--config", path(&cfg), "--out", path(&dir.path().join(out))]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &str| std::fs::read(dir.path().join(d).join("manifest.txt")).unwrap();
    assert_eq!(read("a"), read("b"));
    let other = amc(&["gen-data", "--config", path(&cfg), "--seed", "7", "--out", path(&dir.path().join("c"))]);
    assert!(other.status.success());
    assert_ne!(read("a"), read("c"));
}

#[test]
fn cumulant_sweep_writes_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--mode", "cumulants", "--out", path(dir.path())];
    args.extend_from_slice(SMALL);
    let out = amc(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n == "sweep.csv"));
    assert!(!names.iter().any(|n| n.ends_with(".ckpt")), "{names:?}");
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    for line in csv.lines().skip(1) {
        let acc: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn render_writes_a_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("qam.pgm");
    let out = amc(&["render", "--scheme", "16QAM", "--snr", "-2", "--mode", "iq", "--out", path(&file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&file).unwrap();
    assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(bytes.len(), "P5\n64 64\n255\n".len() + 64 * 64);
}

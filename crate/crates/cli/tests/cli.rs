use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[experiment]
seed = 3
snr_db = [0, 10]
target_errors = 100
max_trials = 20000
constellation = "bpsk"

[channel]
rays = 16

[patterns]
sources = ["array:A", "array:C"]

[analysis]
kinds = ["exact", "asymptotic"]
"#;

fn recant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recant")).args(args).env("RECANT_THREADS", "2").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn records(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    (header, r.records().map(Result::unwrap).collect())
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = recant(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("ber.csv")).unwrap(), fs::read(b.join("ber.csv")).unwrap());

    let (header, rows) = records(&a.join("ber.csv"));
    assert_eq!(header, ["snr_db", "trials", "bit_errors", "ber", "ci_lo", "ci_hi"]);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let ber: f64 = r[3].parse().unwrap();
        let (lo, hi): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo <= ber && ber <= hi && hi <= 1.0);
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    recant(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    let o = recant(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("ber.csv")).unwrap(), fs::read(b.join("ber.csv")).unwrap());
}

#[test]
fn analyze_writes_bounds_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = recant(&["analyze", "--config", &cfg, "--out", out.to_str().unwrap(), "--pairs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = records(&out.join("bounds.csv"));
    assert_eq!(header, ["snr_db", "bound_kind", "abep"]);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let v: f64 = r[2].parse().unwrap();
        assert!(v > 0.0 && v.is_finite());
    }
    let (header, rows) = records(&out.join("pairs.csv"));
    assert_eq!(header.len(), 8);
    // 4 words, 12 ordered pairs, 2 kinds, 2 SNRs.
    assert_eq!(rows.len(), 48);
}

#[test]
fn validate_reports_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = recant(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = records(&out.join("checks.csv"));
    assert_eq!(header, ["check", "snr_db", "value", "limit", "result"]);
    assert!(!rows.is_empty());
    let failed = rows.iter().any(|r| &r[4] == "fail");
    assert_eq!(o.status.code(), Some(if failed { 3 } else { 0 }));
    let (header, rows) = records(&out.join("validate.csv"));
    assert_eq!(&header[..6], ["snr_db", "trials", "bit_errors", "ber", "ci_lo", "ci_hi"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn optimize_ranks_every_subset() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(r#"["array:A", "array:C"]"#, r#"["array:A", "array:B", "array:C", "array:D"]"#)
        + "\n[optimizer]\nchoose = 2\nkind = \"asymptotic\"\n";
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = recant(&["optimize", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = records(&out.join("ranking.csv"));
    assert_eq!(header, ["rank", "subset", "patterns", "abep"]);
    assert_eq!(rows.len(), 6);
    let bounds: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(bounds.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(recant(&["transmogrify"]).status.code(), Some(2));
    assert_eq!(recant(&["simulate"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_1_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("rays = 16", "rays = 0"));
    let o = recant(&["simulate", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rays"));

    let o = recant(&["simulate", "--config", "/nonexistent/exp.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

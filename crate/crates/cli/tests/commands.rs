use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 2

[train]
p = 6
epochs = 6
checkpoint_interval = 2

[train.lr]
base = 1e-3
milestones = [4]
gamma = 0.1

[policy.ets]
epochs = 3
hidden = 8

[bench]
lengths = [128, 256]
n_gallery = 200
n_queries = 5

[data]
source = "synthetic"
train_identities = 12
val_identities = 6
test_identities = 8
train_per_identity = 6
query_per_identity = 3
gallery_per_identity = 4
"#;

fn hashreid(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hashreid"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = hashreid(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn step_by_step_pipeline() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let cfg = cfg.to_str().unwrap();

    let listing = ok(&out, &["--config", cfg, "gen-data"]);
    assert!(listing.contains("gallery\t32"), "{listing}");
    // later commands pick the stored config up from the run directory
    ok(&out, &["train"]);
    let flips = fs::read(out.join("flips.tsv")).unwrap();
    ok(&out, &["collect-flips"]);
    assert_eq!(fs::read(out.join("flips.tsv")).unwrap(), flips);
    ok(&out, &["train-policy"]);
    assert!(fs::read_to_string(out.join("config.toml")).unwrap().contains("[policy.thresholds]"));
    ok(&out, &["encode-gallery"]);

    let eval = ok(&out, &["eval"]);
    assert_eq!(eval.lines().count(), 5);
    let budget = ok(&out, &["budget", "--policy", "gs,ets+gs", "--budget", "0.5,1.0"]);
    assert!(budget.contains("\nets+gs,") && budget.contains("\ngs,"), "{budget}");
    let curve = fs::read_to_string(out.join("reports/budget-ets-gs.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let g = out.join("codes/gallery-s1.hrc");
    let q = out.join("codes/query-s1.hrc");
    let hits = ok(&out, &["search", "--gallery", g.to_str().unwrap(), "--queries", q.to_str().unwrap(), "--k", "2"]);
    assert_eq!(hits.lines().count(), 1 + 2 * 24);

    let bench = ok(&out, &["bench-hamming"]);
    assert_eq!(bench.lines().count(), 3);
}

#[test]
fn missing_artifacts_and_bad_flags_fail_cleanly() {
    let dir = TempDir::new().unwrap();
    let o = hashreid(dir.path(), &["eval"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("query-s1.hrc") && err.contains("encode-gallery"), "{err}");

    let o = hashreid(dir.path(), &["budget", "--policy", "fastest"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown policy"));

    let o = hashreid(dir.path(), &["--config", "/nonexistent.toml", "train"]);
    assert!(!o.status.success());
}

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_embmark");

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    let body = format!(r#"{{"corpus": {{"num_texts": 1500}}, "measure_utility": false{extra}}}"#);
    std::fs::write(&path, body).unwrap();
    path
}

fn embmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("EMBMARK_BIND")
        .output()
        .unwrap()
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(dir: &Path, args: &[&str]) -> Self {
        let mut child = Command::new(BIN)
            .arg("--out")
            .arg(dir)
            .args(["--port", "0"])
            .args(args)
            .env("RUST_LOG", "warn")
            .env_remove("EMBMARK_BIND")
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .expect(&line)
            .to_string();
        Self { child, url }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn corpus_and_trigger_selection() {
    let dir = tempfile::tempdir().unwrap();
    let out = embmark(
        dir.path(),
        &["--seed", "3", "gen-corpus", "--num-texts", "2000"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let corpus = dir.path().join("corpus.tsv");
    assert_eq!(
        std::fs::read_to_string(&corpus).unwrap().lines().count(),
        2000
    );

    let out = embmark(
        dir.path(),
        &[
            "select-triggers",
            "--corpus",
            corpus.to_str().unwrap(),
            "--n",
            "12",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("triggers.json")).unwrap())
            .unwrap();
    assert_eq!(t["triggers"].as_array().unwrap().len(), 12);
    for f in t["frequencies"].as_array().unwrap() {
        let f = f.as_f64().unwrap();
        assert!((0.005..=0.01).contains(&f), "{f}");
    }
}

#[test]
fn experiment_exit_codes_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = embmark(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "experiment"],
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first = std::fs::read(dir.path().join("report.json")).unwrap();
    assert!(dir.path().join("timings.json").exists());
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["verification"]["infringing"], true);
    assert!(report.get("timings").is_none());

    let out = embmark(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "experiment"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        std::fs::read(dir.path().join("report.json")).unwrap(),
        first
    );

    let cfg = small_config(dir.path(), r#", "baseline": "original""#);
    let out = embmark(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "experiment"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = embmark(
        dir.path(),
        &["--config", missing.to_str().unwrap(), "experiment"],
    );
    assert_eq!(out.status.code(), Some(1));
    let bad = small_config(dir.path(), r#", "watermark": {"m": 0}"#);
    let out = embmark(
        dir.path(),
        &["--config", bad.to_str().unwrap(), "experiment"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m must be at least 1"));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#", "trigger_curve": false"#);
    let out = embmark(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "sweep",
            "--param",
            "interval",
            "--values",
            "0.005:0.01,0.9:0.95",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("value,p_value,delta_cos,delta_l2"));
    assert!(rows[1].starts_with("0.005:0.01,"));
    assert!(rows[2].contains("insufficient vocabulary"));
}

#[test]
fn pca_writes_one_row_per_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = embmark(dir.path(), &["--config", cfg.to_str().unwrap(), "pca"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("pca.csv")).unwrap();
    // copy corpus plus probe_count backdoor texts for each k in 1..=m
    assert_eq!(csv.lines().count(), 1 + 1500 + 4 * 10);
}

#[test]
fn networked_extraction_and_modified_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#", "verification": "modified""#);
    let cfg = cfg.to_str().unwrap();
    let victim = Server::start(dir.path(), &["--config", cfg, "serve-victim"]);

    let out = embmark(
        dir.path(),
        &["--config", cfg, "extract", "--endpoint", &victim.url],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let model = dir.path().join("stealer.json");

    let wm = dir.path().join("watermark.json");
    let corpus = dir.path().join("corpus.tsv");
    let mut reports = Vec::new();
    for attack in ["identity", "shift", "ortho:9"] {
        let stealer = Server::start(
            dir.path(),
            &[
                "serve-stealer",
                "--model",
                model.to_str().unwrap(),
                "--attack",
                attack,
            ],
        );
        let out = embmark(
            dir.path(),
            &[
                "--config",
                cfg,
                "verify",
                "--endpoint",
                &stealer.url,
                "--watermark",
                wm.to_str().unwrap(),
                "--corpus",
                corpus.to_str().unwrap(),
            ],
        );
        assert_eq!(
            out.status.code(),
            Some(2),
            "{attack}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let r: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("verification.json")).unwrap(),
        )
        .unwrap();
        reports.push(r);
    }
    for r in &reports[1..] {
        for key in ["delta_cos", "delta_l2", "ks_statistic", "p_value"] {
            let (a, b) = (reports[0][key].as_f64().unwrap(), r[key].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9, "{key}: {a} vs {b}");
        }
    }
}

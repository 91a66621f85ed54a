//! End-to-end tests of the `avseq` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn avseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avseq"))
        .args(args)
        .env_remove("AVSEQ_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Parses CSV output into a header and rows.
fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

/// Parses the whitespace tree format into rows of fields, header first.
fn tree_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split_whitespace().map(String::from).collect()).collect()
}

#[test]
fn simulate_sign_walk_streams_an_absorbed_integer_walk() {
    let o = avseq(&["simulate", "--model", "rademacher", "--instrument", "signwalk", "--alpha", "0.05", "--T", "1000", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (head, rows) = table(&stdout(&o));
    assert_eq!(head, ["t", "x", "value", "rejected"]);
    assert_eq!(rows.len(), 1000);
    let mut value = 1i64;
    let mut absorbed = false;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        let x: f64 = row[1].parse().unwrap();
        if !absorbed {
            value += if x > 0.0 { 1 } else { -1 };
            absorbed = value == 0 || value == 20;
        }
        assert_eq!(row[2], value.to_string());
        assert_eq!(row[3], (value == 20).to_string());
    }
}

#[test]
fn simulate_mixture_cs_reports_the_closed_form_radius() {
    let o = avseq(&["simulate", "--model", "gauss:0,1", "--instrument", "mixture-cs", "--alpha", "0.05", "--T", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (head, rows) = table(&stdout(&o));
    assert_eq!(&head[..3], ["t", "center", "radius"]);
    for row in &rows {
        let t: f64 = row[0].parse().unwrap();
        let radius: f64 = row[2].parse().unwrap();
        let expected = ((1.0 + 1.0 / t) * ((t + 1.0) / (0.05f64 * 0.05)).ln() / t).sqrt();
        assert!((radius - expected).abs() <= 1e-12 * expected, "t = {t}: {radius} vs {expected}");
    }
}

#[test]
fn simulate_jsonl_has_one_object_per_step() {
    let o = avseq(&["simulate", "--model", "rademacher", "--instrument", "dyadic-p", "--alpha", "0.1", "--T", "12", "--format", "jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 12);
    assert!(lines.iter().all(|v| v["p"].as_f64().is_some_and(|p| (0.0..=1.0).contains(&p))));
}

#[test]
fn missing_alpha_is_a_usage_error() {
    let o = avseq(&["simulate", "--model", "rademacher", "--instrument", "signwalk"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"model": "rademacher", "instrument": "signwalk", "alpha": 0.05, "T": 30, "seed": 4}"#,
    );
    let from_file = avseq(&["simulate", "--config", &cfg]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    assert_eq!(table(&stdout(&from_file)).1.len(), 30);
    let overridden = avseq(&["simulate", "--config", &cfg, "--T", "8"]);
    assert_eq!(table(&stdout(&overridden)).1.len(), 8);
    let bad = write(dir.path(), "bad.json", r#"{"model": "rademacher", "colour": 1}"#);
    assert_eq!(avseq(&["simulate", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = avseq(&[
            "simulate", "--model", "gauss:0,1", "--instrument", "arctan", "--alpha", "0.05", "--T", "200", "--seed", "11",
            "--output", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
    let reports: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("r{k}.json"));
            let o = avseq(&["verify", "uniformity", "--quick", "--seed", "3", "--output", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn verify_quick_suites_pass() {
    for suite in ["domination", "uniformity", "appendix-c"] {
        let o = avseq(&["verify", suite, "--quick", "--seed", "1"]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stderr(&o));
        let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(report["suite"], suite);
        assert_eq!(report["passed"], true);
    }
    let o = avseq(&["verify", "domination", "--quick", "--format", "csv"]);
    let (head, rows) = table(&stdout(&o));
    let name = head.iter().position(|h| h == "check").unwrap();
    assert!(rows.iter().any(|r| r[name].starts_with("mirrored")), "{rows:?}");
}

#[test]
fn unknown_suite_exits_two() {
    let o = avseq(&["verify", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

const GOLDEN: &str = "\
# depth-1 tree with payload 2 at the root and 2, 0 at the leaves
id parent prob e
r  -      1    2
u  r      1/2  2
d  r      1/2  0
";

#[test]
fn snell_on_the_golden_tree_matches_the_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "golden.tree", GOLDEN);
    let o = avseq(&["tree", "snell", &file]);
    assert!(o.status.success(), "{}", stderr(&o));
    // L = (max(2, 1), 2, 0); the compensator jumps by L_r - E[L_1] = 1
    let rows = tree_rows(&stdout(&o));
    assert_eq!(rows[0], ["id", "parent", "prob", "x", "e", "L", "M", "A"]);
    let expect = [["r", "2", "2", "0"], ["u", "2", "3", "1"], ["d", "0", "1", "1"]];
    for (row, want) in rows[1..].iter().zip(expect) {
        assert_eq!(row[0], want[0]);
        assert_eq!(&row[5..], &want[1..]);
    }
    assert!(stderr(&o).contains("snell root 2"));
}

#[test]
fn implied_alternative_of_a_constant_martingale_keeps_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "one.tree", "id parent prob m\nr - 1 1\na r 1/3 1\nb r 2/3 1\nc a 1/4 1\nd a 3/4 1\ne b 1/5 1\nf b 4/5 1\n");
    let o = avseq(&["tree", "implied", &file]);
    assert!(o.status.success(), "{}", stderr(&o));
    let probs: Vec<String> = tree_rows(&stdout(&o))[1..].iter().map(|r| r[2].clone()).collect();
    assert_eq!(probs, ["1", "1/3", "2/3", "1/4", "3/4", "1/5", "4/5"]);
}

#[test]
fn admissibilize_rejects_an_unsafe_payload() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "unsafe.tree", "id parent prob e\nr - 1 1\nu r 1/2 3\nd r 1/2 0\n");
    let o = avseq(&["tree", "admissibilize", &file]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("unsafe: snell root 3/2"), "{}", stdout(&o));
}

#[test]
fn admissibilize_lifts_a_safe_payload() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "safe.tree", "id parent prob e\nr - 1 1/2\nu r 1/2 1\nd r 1/2 0\n");
    let o = avseq(&["tree", "admissibilize", &file]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = tree_rows(&stdout(&o));
    let adm = rows[0].iter().position(|h| h == "admissible").unwrap();
    let root: Vec<&str> = rows[1..].iter().map(|r| r[adm].as_str()).collect();
    assert_eq!(root[0], "1");
}

#[test]
fn malformed_tree_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bad.tree", "id parent prob e\nr - 1 1\nu r 1/2\n");
    let o = avseq(&["tree", "snell", &file]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn every_subcommand_has_help_and_schema() {
    for sub in ["simulate", "verify", "tree"] {
        assert!(avseq(&[sub, "--help"]).status.success());
        let o = avseq(&[sub, "--schema"]);
        assert!(o.status.success(), "{sub}: {}", stderr(&o));
        let _: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    }
}

#[test]
fn verify_ville_passes_at_full_scale() {
    let o = avseq(&["verify", "ville", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["verdict"] == "PASS"));
}

#[test]
fn verify_tree_exact_has_no_tolerances() {
    let o = avseq(&["verify", "tree-exact", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for c in report["checks"].as_array().unwrap() {
        assert_eq!(c["std_error"], 0.0, "{c}");
    }
}

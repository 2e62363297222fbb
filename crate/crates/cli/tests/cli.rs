use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use scalegeo_core::wildperm::{WildSet, WildSetJson};

fn scalegeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalegeo")).args(args).output().expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn canonicalize_diagonal_pair_from_files() {
    let dir = TempDir::new().unwrap();
    let h = write(dir.path(), "h.csv", "1,0,0,0\n0,0.25,0,0\n0,0,0.1111111111111111,0\n0,0,0,0.0625\n");
    let w = write(dir.path(), "w.json", r#"{"n":4,"data":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#);
    let out = scalegeo(&["canonicalize", "--gram-h", &h, "--gram-w", &w, "--format", "csv"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "nu,weight\n1,1\n2,4\n3,9\n4,16\n");
}

#[test]
fn canonicalize_from_weight_is_exact() {
    let v = json_stdout(&scalegeo(&["canonicalize", "--f1", "exp:2", "--n", "5"]));
    assert_eq!(v["exact"], serde_json::json!(["2", "4", "8", "16", "32"]));
    assert_eq!(v["dimension"], 5);
}

#[test]
fn equiv_verdicts() {
    let v = json_stdout(&scalegeo(&["equiv", "--a", "power:1", "--b", "power:2"]));
    assert_eq!(v["verdict"], "ExactDecision");
    assert_eq!(v["equivalent"], false);
    let v = json_stdout(&scalegeo(&["equiv", "--f1", "power:1", "--f2", "table:1,2,3"]));
    assert_eq!(v["verdict"], "BoundedRatio");
    let v = json_stdout(&scalegeo(&["equiv", "--a", "power:1", "--b", "table:1,4,9,16,25,36,49", "--threshold", "5"]));
    assert_eq!(v["verdict"], "DivergenceWitness");
}

#[test]
fn wild_set_json_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("set.json");
    let out = scalegeo(&[
        "wild", "--f1", "power:1", "--f2", "power:1", "--size", "2", "--depth", "5", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let json: WildSetJson = serde_json::from_str(&text).unwrap();
    let bounds: Vec<&str> = json.generators[1].boundaries.iter().map(String::as_str).collect();
    assert_eq!(&bounds[..6], ["1", "2", "5", "26", "677", "458330"]);
    assert_eq!(json.certificates.len(), 1);
    let set = WildSet::from_json(&json, 1_000_000).unwrap();
    assert_eq!(set.to_json(), json);

    let again = scalegeo(&["wild", "--f1", "power:1", "--f2", "power:1", "--size", "2", "--depth", "5"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn wild_growth_csv() {
    let out = scalegeo(&["wild", "--f1", "power:1", "--f2", "power:1", "--size", "2", "--depth", "3", "--n", "4", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,wp_0,wp_1"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn invariant_and_splice_tables() {
    let tuple = r#"{"size": 6, "factors": [{"family":"power","alpha":"1"},{"family":"power","alpha":"2"}]}"#;
    let v = json_stdout(&scalegeo(&["invariant", "--tuple", tuple]));
    assert_eq!(v["multiplicativity"]["holds"], true);
    assert_eq!(v["entries"].as_array().unwrap().len(), 3);
    assert_eq!(v["entries"][1]["values"][2], "27");

    let dir = TempDir::new().unwrap();
    let tail = write(dir.path(), "tail.json", r#"{"size": 6, "weights": [{"family":"exponential","beta":"2"}]}"#);
    let v = json_stdout(&scalegeo(&["splice", "--tuple", tuple, "--tail", &tail]));
    assert_eq!(v["length"], 4);
    // pair (0, 3): ν³·2^ν, at ν = 2
    assert_eq!(v["entries"][2]["values"][1], "32");
}

#[test]
fn pairnorm_matches_formula() {
    let v = json_stdout(&scalegeo(&["pairnorm", "--f1", "power:2", "--n", "3", "--size", "64"]));
    let formula = v["formula"].as_f64().unwrap();
    let measured = v["power_iteration"].as_f64().unwrap();
    assert!((formula - 0.25).abs() < 1e-15);
    assert!((measured - formula).abs() < 1e-8);
}

#[test]
fn exit_codes() {
    let parse = scalegeo(&["equiv", "--a", "cubic:3", "--b", "power:1"]);
    assert_eq!(parse.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&parse.stderr).unwrap();
    assert_eq!(err["error"], "Parse");

    let domain = scalegeo(&["equiv", "--a", "table:3,2,1", "--b", "power:1"]);
    assert_eq!(domain.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&domain.stderr).unwrap();
    assert_eq!(err["error"], "InvalidWeight");

    let missing = scalegeo(&["wild", "--f1", "power:1"]);
    assert_eq!(missing.status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let h = write(dir.path(), "h.csv", "1,0\n0,-1\n");
    let w = write(dir.path(), "w.csv", "1,0\n0,1\n");
    let npd = scalegeo(&["canonicalize", "--gram-h", &h, "--gram-w", &w]);
    assert_eq!(npd.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&npd.stderr).unwrap();
    assert_eq!(err["error"], "NotPositiveDefinite");
}

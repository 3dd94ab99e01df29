use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use placekd::data::{load_dataset, Split};
use placekd::layers::Module;
use placekd::models::{sha256_hex, Checkpoint};
use placekd::retrieval::{describe_queries, evaluate, DescriptorDatabase, GroundTruth};
use serde_json::Value;

fn placekd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_placekd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Value {
    let out = placekd(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(args: &[&str], dir: &Path) -> i32 {
    placekd(args, dir).status.code().expect("exit code")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../docs/schemas/{name}.schema.json"));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn assert_valid(name: &str, v: &Value) {
    let errors: Vec<String> = schema(name).iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn file_hash(p: &Path) -> String {
    sha256_hex(&std::fs::read(p).unwrap())
}

/// Small world, one teacher epoch and one student epoch.
fn pipeline(dir: &Path) {
    ok(&["gen-data", "--places", "4", "--views", "6", "--seed", "1", "--out", "world"], dir);
    ok(
        &["train-teacher", "--data", "world", "--out", "teacher", "--epochs", "1", "--seed", "2"],
        dir,
    );
    ok(
        &[
            "distill-student",
            "--data",
            "world",
            "--teacher",
            "teacher/teacher.ckpt",
            "--out",
            "student",
            "--epochs",
            "1",
            "--cm-terms",
            "d1,d2",
        ],
        dir,
    );
    ok(
        &["build-db", "--checkpoint", "student/student.ckpt", "--data", "world", "--out", "db.bin"],
        dir,
    );
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = ["gen-data", "--places", "8", "--views", "6", "--seed", "1", "--out", "world/"];
    let first = ok(&args, d);
    assert_eq!(first["samples"], 48);
    let h1 = file_hash(&d.join("world/manifest.json"));
    let b1 = file_hash(&d.join("world/samples.bin"));
    ok(&args, d);
    assert_eq!(file_hash(&d.join("world/manifest.json")), h1);
    assert_eq!(file_hash(&d.join("world/samples.bin")), b1);
    assert_valid("dataset_manifest", &read_json(d.join("world/manifest.json")));
    assert_valid("run_config", &read_json(d.join("world/run_config.json")));

    // the echoed run config regenerates the same dataset elsewhere
    ok(&["gen-data", "--config", "world/run_config.json", "--out", "again"], d);
    assert_eq!(file_hash(&d.join("again/manifest.json")), h1);
}

#[test]
fn full_pipeline_outputs_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    pipeline(d);
    for dir in ["teacher", "student"] {
        assert_valid("run_config", &read_json(d.join(dir).join("run_config.json")));
        assert_valid("epoch_summary", &read_json(d.join(dir).join("epochs.json")));
        let log = std::fs::read_to_string(d.join(dir).join("train_log.jsonl")).unwrap();
        for line in log.lines() {
            assert_valid("train_log", &serde_json::from_str(line).unwrap());
        }
    }

    let params = ok(&["params", "--checkpoint", "teacher/teacher.ckpt"], d);
    let teacher = Checkpoint::load(&d.join("teacher/teacher.ckpt")).unwrap();
    assert_eq!(params["params"], teacher.model().unwrap().count_params());
    assert_eq!(params["kind"], "teacher");

    let inputs = ["db.bin", "world/manifest.json", "world/samples.bin", "student/student.ckpt"];
    let before: Vec<String> = inputs.iter().map(|p| file_hash(&d.join(p))).collect();
    let report = ok(&["eval", "--db", "db.bin", "--queries", "world", "--report", "out/report.json"], d);
    assert_valid("eval_report", &report);
    assert_eq!(read_json(d.join("out/report.json")), report);
    assert_valid("run_config", &read_json(d.join("out/report.json.run_config.json")));

    // the same evaluation run through the library
    let db = DescriptorDatabase::load(&d.join("db.bin")).unwrap();
    let ckpt = Checkpoint::load(&d.join("student/student.ckpt")).unwrap();
    let ds = load_dataset(&d.join("world")).unwrap();
    let queries = describe_queries(&ds, Split::Query, &ckpt.model().unwrap(), &ckpt.params).unwrap();
    let r = evaluate(&db, &queries, GroundTruth::SamePlace).unwrap();
    assert_eq!(report["recall_at_1"].as_f64().unwrap(), r.recall_at_1);
    assert_eq!(report["ap"].as_f64().unwrap(), r.ap);
    assert_eq!(report["map_at_1"], report["recall_at_1"]);

    let q = ok(&["query", "--db", "db.bin", "--data", "world", "--sample", "0", "--top-n", "3"], d);
    assert_eq!(q["results"].as_array().unwrap().len(), 3);
    let after: Vec<String> = inputs.iter().map(|p| file_hash(&d.join(p))).collect();
    assert_eq!(before, after, "commands must not modify their inputs");

    let bench = ok(
        &["bench", "--db", "db.bin", "--queries", "5", "--repetitions", "3", "--report", "bench.json"],
        d,
    );
    assert_valid("bench_report", &bench);

    // a checkpoint that did not build the database is refused
    let c = code(
        &["eval", "--db", "db.bin", "--queries", "world", "--report", "r2.json", "--checkpoint", "teacher/teacher.ckpt"],
        d,
    );
    assert_eq!(c, 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("gen.toml"), "places = 3\nviews = 4\nseed = 2\nout = \"w\"\n").unwrap();
    let out = ok(&["gen-data", "--config", "gen.toml", "--places", "2"], d);
    assert_eq!(out["places"], 2);
    assert_eq!(out["samples"], 8);
    let echo = read_json(d.join("w/run_config.json"));
    assert_eq!(echo["args"]["seed"], 2);
    assert_eq!(echo["args"]["places"], 2);
    std::fs::write(d.join("gen.json"), r#"{"places": 2, "views": 2, "out": "j"}"#).unwrap();
    assert_eq!(ok(&["gen-data", "--config", "gen.json"], d)["samples"], 4);
}

#[test]
fn failures_map_to_category_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // configuration
    assert_eq!(code(&["params"], d), 2);
    assert_eq!(code(&["params", "--checkpoint", "missing.ckpt"], d), 2);
    assert_eq!(code(&["gen-data", "--out", "w", "--bogus", "1"], d), 2);
    std::fs::write(d.join("bad.toml"), "bogus = 1\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", "bad.toml", "--out", "w"], d), 2);
    assert_eq!(code(&["gen-data", "--out", "w", "--places", "1"], d), 2);
    assert!(!d.join("w").exists(), "nothing is written when validation fails");
    ok(&["gen-data", "--places", "2", "--views", "4", "--out", "w"], d);
    assert_eq!(
        code(&["distill-student", "--data", "w", "--teacher", "w/manifest.json", "--out", "s", "--cm-terms", "d5"], d),
        2
    );
    // data
    std::fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["params", "--checkpoint", "junk.ckpt"], d), 3);
    let mut bytes = std::fs::read(d.join("w/samples.bin")).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(d.join("w/samples.bin"), bytes).unwrap();
    assert_eq!(code(&["train-teacher", "--data", "w", "--out", "t", "--epochs", "1"], d), 3);
}

#[test]
fn divergence_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--places", "2", "--views", "6", "--out", "w"], d);
    let c = code(
        &["train-teacher", "--data", "w", "--out", "t", "--epochs", "3", "--learning-rate", "1e300"],
        d,
    );
    assert_eq!(c, 4);
}

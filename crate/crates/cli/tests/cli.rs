use std::process::{Command, Output};

fn pmuon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmuon")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn verify_passes_with_zero_divergence() {
    let out = pmuon(&["verify", "--steps", "1", "--threaded"]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(text.matches("ok (0.0e0)").count(), 3, "{text}");
}

#[test]
fn comparison_report_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("t3.json");
    let out = pmuon(&["run", "--compare", "--report", report.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    let table = std::fs::read_to_string(report.with_extension("txt")).unwrap();
    assert!(table.contains("Distributed Muon"));
}

#[test]
fn trace_is_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let out = pmuon(&["run", "--ranks", "2", "--chunk-size", "64", "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["rank"].is_u64() && v["kind"].is_string() && v["tag"].is_string());
    }
}

#[test]
fn sweep_and_bench_run() {
    let out = pmuon(&["sweep", "--sizes", "8,all"]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("lowest peak memory"));

    let out = pmuon(&["bench-polynorm", "--grid", "16x64,8x256"]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("geomean"));

    let out = pmuon(&["bench-polynorm", "--grid", "16by64"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        "optimizer = \"distributed\"\nsteps = 2\n[model]\n[[model.params]]\nid = 0\nname = \"w\"\nrows = 8\ncols = 4\n[mesh]\ndp_shard = 2\n",
    )
    .unwrap();
    let out = pmuon(&["run", "--config", good.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("Distributed Muon"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "chunk_size = 4\nbogus = true\n[model]\npreset = \"motif2-12.7b\"\n").unwrap();
    let out = pmuon(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line 2"), "{err}");

    let out = pmuon(&["run", "--chunk-size", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

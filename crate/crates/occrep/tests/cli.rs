use std::path::Path;
use std::process::Command;

fn occrep(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_occrep")).args(args).output().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(occrep(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(occrep(&["gen"]).status.code(), Some(1));
    assert_eq!(occrep(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_2() {
    let out = occrep(&["extract", "--trace", "/nonexistent/t.jsonl", "--frame", "0", "--out", "/tmp/x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn pipeline_produces_artifacts_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let out = occrep(&[
        "gen", "--seed", "3", "--template", "merge", "--count", "2", "--duration", "6",
        "--rate", "1.0", "--out", &s(&data),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traces: Vec<_> = std::fs::read_dir(&data)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "jsonl"))
        .collect();
    assert_eq!(traces.len(), 2);
    assert!(data.join("traces.manifest.json").exists());

    let model = d.join("model.ocrp");
    let out = occrep(&[
        "train", "--data", &s(&data), "--model", "field", "--epochs", "1", "--hidden", "8",
        "--latent", "4", "--layers", "2", "--n-vehicles", "2", "--seed", "1", "--t-steps", "6",
        "--r-samples", "4", "--out", &s(&model),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model.exists());
    assert!(d.join("model.ocrp.manifest.json").exists());

    let pred = d.join("pred");
    let trace = traces[0].path();
    let out = occrep(&[
        "predict", "--ckpt", &s(&model), "--trace", &s(&trace), "--frame", "10",
        "--grid", "30x5", "--out", &s(&pred),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let body = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    // header plus one row per grid point
    assert_eq!(body.lines().count(), 1 + 30 * 5);
    let svg_body = std::fs::read_to_string(d.join("pred.svg")).unwrap();
    assert!(svg_body.contains("<svg") && svg_body.contains("polyline"));

    let log = d.join("episode.json");
    let out = occrep(&[
        "rollout", "--ckpt", &s(&model), "--trace", &s(&trace), "--policy", "constant:1.0",
        "--seed", "2", "--json", &s(&log),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert!(parsed["steps"].as_array().is_some_and(|a| !a.is_empty()));

    // zero-sized grid is a usage error
    let out = occrep(&[
        "predict", "--ckpt", &s(&model), "--trace", &s(&trace), "--frame", "10",
        "--grid", "0x5", "--out", &s(&pred),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dvg_core::api::TransferRequest;
use dvg_core::shape_io::{load_shape, parse_obj};
use dvg_service::{run_transfer, ShapeEntry, Workspace};
use serde_json::Value;

fn dvg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvg")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.trim_end().lines().count(), 1, "stderr: {text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two small boxes with quick fits; returns (tall.obj, flat.obj, tall model, flat model).
fn fitted_boxes(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let mut paths = Vec::new();
    for (name, size) in [("tall", "0.3,0.3,0.8"), ("flat", "0.8,0.8,0.3")] {
        let obj = dir.join(format!("{name}.obj"));
        ok(&dvg(&["synth", "box", "--size", size, "--divisions", "2", "--out", s(&obj)]));
        let out = dir.join(name);
        ok(&dvg(&[
            "fit", s(&obj), s(&out), "--levels", "1", "--steps", "30", "--samples", "256",
        ]));
        paths.push((obj, out.join("model.json")));
    }
    let (flat, tall) = (paths.pop().unwrap(), paths.pop().unwrap());
    (tall.0, flat.0, tall.1, flat.1)
}

#[test]
fn fit_writes_outputs_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, tall_model, _) = fitted_boxes(dir.path());
    let out = tall_model.parent().unwrap();

    let config: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["command"], "fit");
    assert_eq!(config["energy"]["lambda_b"], 0.4);
    assert_eq!(config["schedule"]["max_level"], 1);
    let levels = config["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    // Coarse levels use a denser covering with the finest level's radius.
    assert_eq!(levels[0]["covering_s"], 4);
    assert_eq!(levels[1]["covering_s"], 2);
    assert_eq!(levels[0]["ball_radius"], levels[1]["ball_radius"]);

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("step,level,elastic,bending,inclusion,total"));
    assert!(lines.all(|l| l.split(',').count() == 6));

    let model = std::fs::read_to_string(&tall_model).unwrap();
    assert!(model.ends_with('\n') && model.lines().count() == 1);
}

#[test]
fn usage_and_input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.obj");
    let out = dvg(&["fit", s(&missing), s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "input");

    let out = dvg(&["fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");

    let out = dvg(&["synth", "box", "--size", "0.2,0.2", "--out", s(&dir.path().join("b.obj"))]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(dvg(&["--help"]).status.code(), Some(0));
}

#[test]
fn cubify_transfer_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let (tall, _, tall_model, flat_model) = fitted_boxes(dir.path());

    let cube = dir.path().join("tall_cube.obj");
    ok(&dvg(&["cubify", "--model", s(&tall_model), "--shape", s(&tall), "--out", s(&cube)]));
    let mesh = load_shape(&cube, None).unwrap();
    assert!(!mesh.faces.is_empty());
    let echo: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tall_cube.obj.config.json")).unwrap()).unwrap();
    assert_eq!(echo["command"], "cubify");
    assert_eq!(echo["warp"]["method"], "tps");

    let cloud = dir.path().join("tall_cube.xyz");
    ok(&dvg(&[
        "cubify", "--model", s(&tall_model), "--shape", s(&tall), "--out", s(&cloud), "--method", "exact",
    ]));
    assert_eq!(load_shape(&cloud, None).unwrap().vertices.len(), 2048);

    let bad = dvg(&["cubify", "--model", s(&tall_model), "--shape", s(&tall), "--out", s(&dir.path().join("x.txt"))]);
    assert_eq!(bad.status.code(), Some(2));

    let moved = dir.path().join("moved.obj");
    ok(&dvg(&[
        "transfer", "--source", s(&tall_model), "--target", s(&flat_model), "--shape", s(&tall), "--out", s(&moved),
    ]));
    assert_eq!(load_shape(&moved, None).unwrap().faces, mesh.faces);
}

#[test]
fn match_describe_and_search_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (tall, flat, tall_model, flat_model) = fitted_boxes(dir.path());
    let a = dir.path().join("a.xyz");
    let b = dir.path().join("b.xyz");
    ok(&dvg(&["cubify", "--model", s(&tall_model), "--shape", s(&tall), "--out", s(&a), "--samples", "300"]));
    ok(&dvg(&["cubify", "--model", s(&flat_model), "--shape", s(&flat), "--out", s(&b), "--samples", "200"]));

    let csv = ok(&dvg(&["match", "--source", s(&a), "--target", s(&b)]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("target_idx,source_idx,distance"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 200);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), t);
        assert!(row[1].parse::<usize>().unwrap() < 300);
        assert!(row[2].parse::<f64>().unwrap() >= 0.0);
    }

    let db = dir.path().join("db.jsonl");
    ok(&dvg(&["describe", s(&tall_model), s(&flat_model), "--ids", "tall,flat", "--out", s(&db)]));
    assert_eq!(std::fs::read_to_string(&db).unwrap().lines().count(), 2);

    let hits = ok(&dvg(&["search", "--query", s(&flat_model), "--db", s(&db), "-k", "2"]));
    let hits: Vec<(&str, f64)> = hits
        .lines()
        .map(|l| {
            let (id, d) = l.split_once('\t').unwrap();
            (id, d.parse().unwrap())
        })
        .collect();
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0], ("flat", 0.0));
    assert_eq!(hits[1].0, "tall");
    assert!(hits[1].1 > 0.0);

    let too_many = dvg(&["search", "--query", s(&flat_model), "--db", s(&db), "-k", "3"]);
    assert_eq!(too_many.status.code(), Some(2));
}

#[test]
fn service_transfer_matches_cli_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let (tall, flat, tall_model, flat_model) = fitted_boxes(dir.path());
    let manifest = serde_json::json!({
        "shapes": [
            ShapeEntry { id: "tall".into(), shape: tall.clone(), model: Some(tall_model.clone()) },
            ShapeEntry { id: "flat".into(), shape: flat, model: Some(flat_model.clone()) },
        ],
    });
    std::fs::write(dir.path().join("workspace.json"), manifest.to_string()).unwrap();
    let ws = Workspace::load(dir.path()).unwrap();
    let served = run_transfer(
        &ws,
        &TransferRequest {
            source_id: "tall".into(),
            target_id: "flat".into(),
        },
    )
    .unwrap()
    .to_mesh()
    .unwrap();

    let moved = dir.path().join("moved.obj");
    ok(&dvg(&[
        "transfer", "--source", s(&tall_model), "--target", s(&flat_model), "--shape", s(&tall), "--out", s(&moved),
    ]));
    let local = parse_obj(&std::fs::read_to_string(&moved).unwrap()).unwrap();
    assert_eq!(local.faces, served.faces);
    assert_eq!(local.vertices.len(), served.vertices.len());
    for (a, b) in local.vertices.iter().zip(&served.vertices) {
        assert!((a - b).amax() < 1e-9, "{a:?} vs {b:?}");
    }
}

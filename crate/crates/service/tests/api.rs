use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use dvg_core::analysis::pca_fit;
use dvg_core::api::{DeformResponse, MeshPayload, ShapeSummary};
use dvg_core::energy::EnergyParams;
use dvg_core::grid::Vec3;
use dvg_core::optimizer::{fit_hierarchical, ScheduleParams};
use dvg_core::shape_io::{format_obj, format_xyz, load_shape, SampledShape};
use dvg_core::synthetic::{box_mesh, sphere_mesh, sphere_samples};
use dvg_service::{app, router, Manifest, ShapeEntry, Workspace, WorkspaceError, SHAPES_SCHEMA};
use serde_json::{json, Value};
use tower::ServiceExt;

const MARGIN: f64 = 0.05;
const SAMPLES: usize = 512;

fn fit_model(shape: &SampledShape, levels: usize, name: &str) -> String {
    let schedule = ScheduleParams {
        steps_per_level: 60,
        ..ScheduleParams::with_levels(levels)
    };
    let fit = fit_hierarchical(&shape.points, &schedule, &EnergyParams::default(), name).unwrap();
    serde_json::to_string(&fit.model).unwrap()
}

/// Writes a small workspace: three meshed shapes fitted at r = 2, one coarse
/// fit at r = 1, and one point cloud without a model.
fn write_workspace(dir: &Path) {
    let meshes = [
        ("sphere", sphere_mesh(0.3, 8, 12)),
        ("tall", box_mesh(Vec3::new(0.2, 0.2, 0.8), 2)),
        ("flat", box_mesh(Vec3::new(0.8, 0.8, 0.2), 2)),
    ];
    let mut entries = Vec::new();
    let mut grids = Vec::new();
    for (id, mesh) in &meshes {
        let file = format!("{id}.obj");
        std::fs::write(dir.join(&file), format_obj(mesh)).unwrap();
        let raw = load_shape(&dir.join(&file), None).unwrap();
        let shape = SampledShape::from_mesh(&raw, MARGIN, SAMPLES, 0).unwrap();
        let model = fit_model(&shape, 1, id);
        let model_file = format!("{id}.model.json");
        std::fs::write(dir.join(&model_file), &model).unwrap();
        grids.push(serde_json::from_str::<dvg_core::DvgModel>(&model).unwrap().final_grid().clone());
        entries.push(ShapeEntry {
            id: id.to_string(),
            shape: file.into(),
            model: Some(model_file.into()),
        });
    }
    let raw = load_shape(&dir.join("tall.obj"), None).unwrap();
    let tall = SampledShape::from_mesh(&raw, MARGIN, SAMPLES, 0).unwrap();
    std::fs::write(dir.join("coarse.model.json"), fit_model(&tall, 0, "coarse")).unwrap();
    entries.push(ShapeEntry {
        id: "coarse".into(),
        shape: "tall.obj".into(),
        model: Some("coarse.model.json".into()),
    });
    std::fs::write(dir.join("cloud.xyz"), format_xyz(&sphere_samples(0.3, 200, 3))).unwrap();
    entries.push(ShapeEntry {
        id: "cloud".into(),
        shape: "cloud.xyz".into(),
        model: None,
    });
    std::fs::write(dir.join("pca.json"), serde_json::to_string(&pca_fit(&grids).unwrap()).unwrap()).unwrap();
    let manifest = Manifest {
        shapes: entries,
        pca: Some("pca.json".into()),
        margin: MARGIN,
        samples: SAMPLES,
        seed: 0,
    };
    std::fs::write(dir.join("workspace.json"), serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
}

fn workspace() -> Arc<Workspace> {
    static WS: OnceLock<Arc<Workspace>> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        write_workspace(dir.path());
        Arc::new(Workspace::load(dir.path()).unwrap())
    })
    .clone()
}

async fn call(app: Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn get(uri: &str) -> (StatusCode, Value) {
    call(router(workspace()), Method::GET, uri, None).await
}

async fn post(uri: &str, body: Value) -> (StatusCode, Value) {
    call(router(workspace()), Method::POST, uri, Some(body)).await
}

/// Checks the JSON-schema keywords used by the published schemas.
fn validate(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let ok = match t {
            "array" => value.is_array(),
            "object" => value.is_object(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "integer" => value.is_u64() || value.is_i64(),
            "number" => value.is_number(),
            other => return Err(format!("unsupported type {other}")),
        };
        if !ok {
            return Err(format!("{path}: expected {t}, got {value}"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        if value.as_f64().is_some_and(|v| v < min) {
            return Err(format!("{path}: below minimum"));
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate(items, v, &format!("{path}[{i}]"))?;
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{path}: missing {key}"));
            }
        }
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => validate(s, v, &format!("{path}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{path}: unexpected {k}"))
                }
                None => {}
            }
        }
    }
    Ok(())
}

#[tokio::test]
async fn lists_shapes_in_manifest_order() {
    let (status, body) = get("/shapes").await;
    assert_eq!(status, StatusCode::OK);
    let shapes: Vec<ShapeSummary> = serde_json::from_value(body.clone()).unwrap();
    let ids: Vec<&str> = shapes.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["sphere", "tall", "flat", "coarse", "cloud"]);
    assert!(shapes[0].has_mesh && !shapes[4].has_mesh);
    assert_eq!(shapes[0].point_count, SAMPLES);
    assert_eq!(shapes[4].point_count, 200);

    let schema: Value = serde_json::from_str(SHAPES_SCHEMA).unwrap();
    validate(&schema, &body, "$").unwrap();
    let (_, served) = get("/schema/shapes").await;
    assert_eq!(served, schema);
    assert!(validate(&schema, &json!([{"id": "x", "point_count": 1}]), "$").is_err());
}

#[tokio::test]
async fn empty_workspace_lists_nothing() {
    let empty = Arc::new(Workspace::new(Vec::new(), None).unwrap());
    let (status, body) = call(router(empty), Method::GET, "/shapes", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn mesh_endpoint() {
    let (status, body) = get("/shapes/sphere/mesh").await;
    assert_eq!(status, StatusCode::OK);
    let mesh: MeshPayload = serde_json::from_value(body).unwrap();
    assert_eq!(mesh.vertices.len() % 3, 0);
    assert_eq!(mesh.faces.len() % 3, 0);
    assert!(mesh.faces.iter().all(|&f| f < mesh.vertices.len() / 3));

    let (status, _) = get("/shapes/nope/mesh").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = get("/shapes/cloud/mesh").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body, json!({"error": "no_mesh"}));
}

fn deformed(body: Value) -> DeformResponse {
    serde_json::from_value(body).unwrap()
}

#[tokio::test]
async fn zero_coefficients_return_base_mesh() {
    let (_, base) = get("/shapes/tall/mesh").await;
    let base: MeshPayload = serde_json::from_value(base).unwrap();
    for coeffs in [json!([]), json!([0.0, 0.0])] {
        let (status, body) = post("/deform", json!({"shape_id": "tall", "coeffs": coeffs})).await;
        assert_eq!(status, StatusCode::OK);
        let out = deformed(body);
        assert_eq!(out.mesh.faces, base.faces);
        for (a, b) in out.mesh.vertices.iter().zip(&base.vertices) {
            assert!((a - b).abs() < 1e-6);
        }
        let stored = workspace().shape("tall").unwrap().model.as_ref().unwrap().final_grid().clone();
        assert_eq!(out.grid, stored);
    }
}

#[tokio::test]
async fn opposite_coefficients_are_symmetric() {
    let (_, plus) = post("/deform", json!({"shape_id": "sphere", "coeffs": [3.0, 0.0]})).await;
    let (_, minus) = post("/deform", json!({"shape_id": "sphere", "coeffs": [-3.0, 0.0]})).await;
    let (plus, minus) = (deformed(plus), deformed(minus));
    let ws = workspace();
    let base = ws.shape("sphere").unwrap().model.as_ref().unwrap().final_grid();
    let mut moved = 0.0f64;
    for ((p, m), b) in plus.grid.points().iter().zip(minus.grid.points()).zip(base.points()) {
        assert!(((p + m) * 0.5 - b).amax() < 1e-12);
        moved = moved.max((p - b).amax());
    }
    assert!(moved > 1e-3);
    // Slider moves are absolute: repeating a request gives the same answer.
    let (_, again) = post("/deform", json!({"shape_id": "sphere", "coeffs": [3.0, 0.0]})).await;
    assert_eq!(deformed(again), plus);
}

#[tokio::test]
async fn deform_errors() {
    let cases = [
        (json!({"shape_id": "sphere", "coeffs": [null]}), StatusCode::BAD_REQUEST, "invalid_coefficient"),
        (json!({"shape_id": "sphere", "coeffs": [1.0, 1.0, 1.0]}), StatusCode::BAD_REQUEST, "too_many_coefficients"),
        (json!({"shape_id": "sphere", "coeffs": "x"}), StatusCode::BAD_REQUEST, "bad_request"),
        (json!({"shape_id": "nope", "coeffs": []}), StatusCode::NOT_FOUND, "unknown_shape"),
        (json!({"shape_id": "cloud", "coeffs": []}), StatusCode::NOT_FOUND, "no_model"),
        (json!({"shape_id": "coarse", "coeffs": [1.0]}), StatusCode::CONFLICT, "resolution_mismatch"),
    ];
    for (req, status, code) in cases {
        let (got, body) = post("/deform", req.clone()).await;
        assert_eq!(got, status, "{req}");
        assert_eq!(body["error"], code, "{req}");
    }
    // Raw NaN is not JSON; the body is rejected before reaching the handler.
    let resp = router(workspace())
        .oneshot(
            Request::post("/deform")
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(r#"{"shape_id":"sphere","coeffs":[NaN]}"#))
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn transfer_endpoint() {
    let (_, base) = get("/shapes/sphere/mesh").await;
    let base: MeshPayload = serde_json::from_value(base).unwrap();
    let (status, body) = post("/transfer", json!({"source_id": "sphere", "target_id": "sphere"})).await;
    assert_eq!(status, StatusCode::OK);
    let same: MeshPayload = serde_json::from_value(body).unwrap();
    for (a, b) in same.vertices.iter().zip(&base.vertices) {
        assert!((a - b).abs() < 1e-6);
    }

    let (status, body) = post("/transfer", json!({"source_id": "sphere", "target_id": "flat"})).await;
    assert_eq!(status, StatusCode::OK);
    let moved: MeshPayload = serde_json::from_value(body).unwrap();
    assert_eq!(moved.faces, base.faces);
    let extent = |v: &[f64], axis: usize| {
        let vals = v.iter().skip(axis).step_by(3);
        vals.clone().fold(f64::MIN, |a, &b| a.max(b)) - vals.fold(f64::MAX, |a, &b| a.min(b))
    };
    assert!(extent(&moved.vertices, 2) < extent(&base.vertices, 2));

    let (status, _) = post("/transfer", json!({"source_id": "sphere", "target_id": "nope"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = post("/transfer", json!({"source_id": "sphere", "target_id": "coarse"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "resolution_mismatch");
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let req = json!({"shape_id": "flat", "coeffs": [1.5, -0.5]});
    let tasks: Vec<_> = (0..8)
        .map(|_| tokio::spawn(post("/deform", req.clone())))
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        bodies.push(t.await.unwrap().1.to_string());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn cors_allows_ui_origin() {
    let origins = vec!["http://localhost:5173".to_string()];
    let resp = app(workspace(), &origins)
        .oneshot(
            Request::builder()
                .method(Method::OPTIONS)
                .uri("/deform")
                .header(header::ORIGIN, "http://localhost:5173")
                .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
    let other = app(workspace(), &origins)
        .oneshot(
            Request::get("/shapes")
                .header(header::ORIGIN, "http://evil.example")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert!(other.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[test]
fn workspace_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Workspace::load(dir.path()), Err(WorkspaceError::Io { .. })));

    std::fs::write(dir.path().join("a.xyz"), "0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
    let dup = json!({"shapes": [{"id": "a", "shape": "a.xyz"}, {"id": "a", "shape": "a.xyz"}]});
    std::fs::write(dir.path().join("workspace.json"), dup.to_string()).unwrap();
    assert!(matches!(Workspace::load(dir.path()), Err(WorkspaceError::DuplicateId(_))));

    let missing = json!({"shapes": [{"id": "a", "shape": "missing.obj"}]});
    std::fs::write(dir.path().join("workspace.json"), missing.to_string()).unwrap();
    assert!(matches!(Workspace::load(dir.path()), Err(WorkspaceError::Shape { .. })));

    let unknown = json!({"shapes": [], "extra": 1});
    std::fs::write(dir.path().join("workspace.json"), unknown.to_string()).unwrap();
    assert!(matches!(Workspace::load(dir.path()), Err(WorkspaceError::Parse { .. })));

    let ok = json!({"shapes": [{"id": "a", "shape": "a.xyz"}]});
    std::fs::write(dir.path().join("workspace.json"), ok.to_string()).unwrap();
    let ws = Workspace::load(dir.path()).unwrap();
    assert_eq!(ws.shapes().len(), 1);
    assert!(ws.pca().is_none());
}

#[test]
fn oversized_meshes_are_rejected() {
    let points = vec![Vec3::zeros(); dvg_service::workspace::MAX_MESH_VERTICES + 1];
    let shape = dvg_service::WorkspaceShape {
        id: "big".into(),
        shape: SampledShape::from_points(points),
        model: None,
    };
    assert!(matches!(Workspace::new(vec![shape], None), Err(WorkspaceError::TooLarge { .. })));
}

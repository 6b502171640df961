use std::sync::Arc;

use dvg_client::Client;
use dvg_core::analysis::pca_fit;
use dvg_core::energy::EnergyParams;
use dvg_core::grid::Vec3;
use dvg_core::optimizer::{fit_hierarchical, ScheduleParams};
use dvg_core::shape_io::SampledShape;
use dvg_core::synthetic::{box_mesh, sphere_samples};
use dvg_service::{router, Workspace, WorkspaceShape};

fn shape_entry(id: &str, size: Vec3, with_model: bool) -> WorkspaceShape {
    let shape = SampledShape::from_mesh(&box_mesh(size, 2), 0.05, 256, 0).unwrap();
    let model = with_model.then(|| {
        let schedule = ScheduleParams {
            steps_per_level: 40,
            ..ScheduleParams::with_levels(1)
        };
        fit_hierarchical(&shape.points, &schedule, &EnergyParams::default(), id)
            .unwrap()
            .model
    });
    WorkspaceShape {
        id: id.into(),
        shape,
        model,
    }
}

async fn serve() -> (Client, Arc<Workspace>) {
    let shapes = vec![
        shape_entry("tall", Vec3::new(0.2, 0.2, 0.8), true),
        shape_entry("wide", Vec3::new(0.8, 0.3, 0.3), true),
        shape_entry("cube", Vec3::new(0.5, 0.5, 0.5), true),
        WorkspaceShape {
            id: "cloud".into(),
            shape: SampledShape::from_points(sphere_samples(0.3, 50, 1)),
            model: None,
        },
    ];
    let grids: Vec<_> = shapes
        .iter()
        .filter_map(|s| s.model.as_ref().map(|m| m.final_grid().clone()))
        .collect();
    let ws = Arc::new(Workspace::new(shapes, Some(pca_fit(&grids).unwrap())).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(ws.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (Client::new(format!("http://{addr}/")), ws)
}

#[tokio::test]
async fn client_round_trips() {
    let (client, ws) = serve().await;

    let shapes = client.shapes().await.unwrap();
    assert_eq!(shapes.len(), 4);
    assert_eq!(shapes[3].id, "cloud");
    assert!(!shapes[3].has_mesh);

    let mesh = client.mesh("tall").await.unwrap();
    let stored = ws.shape("tall").unwrap().shape.source_mesh.clone().unwrap();
    assert_eq!(mesh.to_mesh().unwrap(), stored);

    let err = client.mesh("cloud").await.unwrap_err();
    assert_eq!(err.code(), Some("no_mesh"));
    assert_eq!(err.status().map(|s| s.as_u16()), Some(422));
    assert_eq!(client.mesh("missing").await.unwrap_err().status().map(|s| s.as_u16()), Some(404));

    let zero = client.deform("tall", &[0.0, 0.0]).await.unwrap();
    for (a, b) in zero.mesh.vertices.iter().zip(&mesh.vertices) {
        assert!((a - b).abs() < 1e-6);
    }
    let nan = client.deform("tall", &[f64::NAN]).await.unwrap_err();
    assert_eq!(nan.code(), Some("invalid_coefficient"));

    let moved = client.transfer("tall", "wide").await.unwrap();
    assert_eq!(moved.faces, mesh.faces);
    assert_eq!(client.transfer("tall", "cloud").await.unwrap_err().code(), Some("no_model"));
}

#[tokio::test]
async fn unreachable_service_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = Client::new(format!("http://{addr}")).shapes().await.unwrap_err();
    assert!(matches!(err, dvg_client::ClientError::Transport(_)));
    assert!(err.code().is_none());
}

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;
use tourguide::config::Config;
use tourguide::error::ErrorCode;
use tourguide::server::{open_store, Server};
use tourguide::tour::TourStore;

fn config_in(dir: &std::path::Path) -> Config {
    Config {
        http_port: 0,
        bridge_port: 0,
        store_path: dir.join("data").join("store.json"),
        ..Config::default()
    }
}

#[tokio::test]
async fn starts_on_ephemeral_ports_and_creates_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path());
    let server = Server::start(&cfg).await.unwrap();
    assert!(cfg.store_path.exists());
    assert_eq!(
        TourStore::load(&cfg.store_path).unwrap(),
        TourStore::default()
    );
    assert_ne!(server.http_addr().port(), 0);
    assert_ne!(server.http_addr().port(), server.bridge_addr().port());

    let (mut ws, _) = connect_async(format!("ws://{}/bridge", server.bridge_addr()))
        .await
        .unwrap();
    let call = json!({"op": "call_service", "id": "1", "service": "/tour/list", "args": {}});
    ws.send(Message::Text(call.to_string().into()))
        .await
        .unwrap();
    let reply = loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            break serde_json::from_str::<Value>(t.as_str()).unwrap();
        }
    };
    assert_eq!(
        reply,
        json!({"op": "service_response", "id": "1", "service": "/tour/list", "values": [], "result": true})
    );

    let (mut events, _) = connect_async(format!("ws://{}/api/events", server.http_addr()))
        .await
        .unwrap();
    let frame = tokio::time::timeout(Duration::from_secs(5), events.next())
        .await
        .expect("the tick loop publishes pose")
        .unwrap()
        .unwrap();
    let frame: Value = serde_json::from_str(frame.to_text().unwrap()).unwrap();
    assert_eq!(frame["topic"], "/robot/pose");

    server.shutdown().await;
}

#[tokio::test]
async fn second_server_on_the_same_port_fails() {
    let dir = tempfile::tempdir().unwrap();
    let first = Server::start(&config_in(dir.path())).await.unwrap();
    let clash = Config {
        http_port: first.http_addr().port(),
        ..config_in(dir.path())
    };
    let err = Server::start(&clash).await.err().expect("port in use");
    assert!(err.to_string().contains("binding HTTP gateway"), "{err}");

    let clash = Config {
        bridge_port: first.bridge_addr().port(),
        ..config_in(dir.path())
    };
    assert!(Server::start(&clash).await.is_err());
    first.shutdown().await;
}

#[test]
fn unwritable_store_location_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, "").unwrap();
    let err = open_store(&blocker.join("store.json")).unwrap_err();
    assert_eq!(err.code(), ErrorCode::Internal);
}

#[test]
fn unreadable_store_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    std::fs::write(&path, "{\"schema_version\": 1, \"locations\": [").unwrap();
    let err = open_store(&path).unwrap_err();
    assert!(err.to_string().contains("line"), "{err}");
    std::fs::write(&path, "{\"schema_version\": 99}").unwrap();
    assert!(open_store(&path).is_err());
    // The broken file is left as it was.
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "{\"schema_version\": 99}"
    );
}

#[test]
fn documented_default_ports() {
    let cfg = Config::default();
    assert_eq!((cfg.http_port, cfg.bridge_port), (8080, 9090));
}

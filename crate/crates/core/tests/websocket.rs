mod common;

use std::net::SocketAddr;
use std::time::Duration;

use common::{fixture, Fixture};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use tourguide::bridge::{bridge_app, Router};
use tourguide::gateway::{gateway_app, GatewayOptions};
use tourguide::services::{names, tick_once};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn serve(app: axum::Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

async fn connect(addr: SocketAddr, path: &str) -> Client {
    let (ws, _) = connect_async(format!("ws://{addr}{path}")).await.unwrap();
    ws
}

async fn next_json(ws: &mut Client) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("frame within 5 s")
            .expect("stream open")
            .unwrap();
        if let Message::Text(text) = msg {
            return serde_json::from_str(text.as_str()).unwrap();
        }
    }
}

async fn wait_for_subscribers(router: &Router, topic: &str, n: usize) {
    for _ in 0..500 {
        if router.subscriber_count(topic) == n {
            return;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("{topic} never reached {n} subscribers");
}

async fn events_client(f: &Fixture) -> Client {
    let addr = serve(gateway_app(f.router.clone(), &GatewayOptions::default())).await;
    let ws = connect(addr, "/api/events").await;
    wait_for_subscribers(&f.router, names::TOPIC_POSE, 1).await;
    wait_for_subscribers(&f.router, names::TOPIC_PROGRESS, 1).await;
    ws
}

#[tokio::test]
async fn one_tick_yields_one_pose_frame() {
    let f = fixture();
    let mut ws = events_client(&f).await;
    tick_once(&f.rt, &f.router);
    let frame = next_json(&mut ws).await;
    assert_eq!(frame["topic"], names::TOPIC_POSE);
    assert_eq!(frame["msg"], json!({"x": 0.0, "y": 0.0, "theta": 0.0}));
    let extra = tokio::time::timeout(Duration::from_millis(100), ws.next()).await;
    assert!(extra.is_err(), "unexpected second frame");
}

#[tokio::test]
async fn two_stop_run_streams_phases_in_order() {
    let f = fixture();
    let mut ws = events_client(&f).await;
    f.router
        .call(names::TOUR_EXECUTE, json!({"id": f.tour_id}))
        .await
        .unwrap();
    while f.rt.lock().unwrap().execution().is_some() {
        tick_once(&f.rt, &f.router);
    }
    let mut phases = Vec::new();
    while phases.last().map(String::as_str) != Some("done") {
        let frame = next_json(&mut ws).await;
        if frame["topic"] == names::TOPIC_PROGRESS {
            phases.push(frame["msg"]["phase"].as_str().unwrap().to_string());
        }
    }
    let stop = ["navigating", "arrived", "speaking", "advancing"];
    let expected: Vec<&str> = stop
        .iter()
        .chain(stop.iter())
        .copied()
        .chain(["done"])
        .collect();
    assert_eq!(phases, expected);
}

#[tokio::test]
async fn disconnecting_an_observer_does_not_affect_the_run() {
    let f = fixture();
    let mut ws = events_client(&f).await;
    f.router
        .call(names::TOUR_EXECUTE, json!({"id": f.tour_id}))
        .await
        .unwrap();
    for _ in 0..10 {
        tick_once(&f.rt, &f.router);
    }
    ws.close(None).await.unwrap();
    drop(ws);
    wait_for_subscribers(&f.router, names::TOPIC_PROGRESS, 0).await;

    let run =
        f.rt.lock()
            .unwrap()
            .run_until_idle(100_000)
            .expect("run recorded");
    assert_eq!(run.outcome, tourguide::model::RunOutcome::Completed);
    assert_eq!(run.stops_visited, 2);
}

#[tokio::test]
async fn bridge_socket_serves_calls_and_survives_bad_frames() {
    let f = fixture();
    let addr = serve(bridge_app(f.router.clone())).await;
    let mut ws = connect(addr, "/bridge").await;

    ws.send(Message::Text("{\"op\":".into())).await.unwrap();
    let reply = next_json(&mut ws).await;
    assert_eq!(reply["op"], "status");

    ws.send(Message::Text(
        r#"{"op":"call_service","id":"x","service":"/nope","args":{}}"#.into(),
    ))
    .await
    .unwrap();
    let reply = next_json(&mut ws).await;
    assert_eq!(reply["op"], "service_response");
    assert_eq!(reply["id"], "x");
    assert_eq!(reply["result"], false);

    for id in ["a", "b"] {
        let frame =
            json!({"op": "call_service", "id": id, "service": names::ROBOT_STATUS, "args": {}});
        ws.send(Message::Text(frame.to_string().into()))
            .await
            .unwrap();
    }
    let mut ids = Vec::new();
    for _ in 0..2 {
        let reply = next_json(&mut ws).await;
        assert_eq!(reply["result"], true);
        assert_eq!(reply["values"]["mode"], "idle");
        ids.push(reply["id"].as_str().unwrap().to_string());
    }
    ids.sort();
    assert_eq!(ids, ["a", "b"]);

    ws.send(Message::Text(
        json!({"op": "subscribe", "topic": names::TOPIC_POSE})
            .to_string()
            .into(),
    ))
    .await
    .unwrap();
    wait_for_subscribers(&f.router, names::TOPIC_POSE, 1).await;
    tick_once(&f.rt, &f.router);
    let reply = next_json(&mut ws).await;
    assert_eq!(reply["op"], "publish");
    assert_eq!(reply["topic"], names::TOPIC_POSE);
}

#[tokio::test]
async fn remote_service_provider_over_the_socket() {
    let f = fixture();
    let addr = serve(bridge_app(f.router.clone())).await;
    let mut provider = connect(addr, "/bridge").await;
    provider
        .send(Message::Text(
            json!({"op": "advertise_service", "service": "/ext/echo"})
                .to_string()
                .into(),
        ))
        .await
        .unwrap();
    for _ in 0..500 {
        if f.router.services().iter().any(|s| s == "/ext/echo") {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }

    let router = f.router.clone();
    let call = tokio::spawn(async move { router.call("/ext/echo", json!({"n": 7})).await });
    let request = loop {
        let frame = next_json(&mut provider).await;
        if frame["op"] == "call_service" {
            break frame;
        }
    };
    assert_eq!(request["args"], json!({"n": 7}));
    let response = json!({
        "op": "service_response",
        "id": request["id"],
        "service": "/ext/echo",
        "values": {"n": 8},
        "result": true,
    });
    provider
        .send(Message::Text(response.to_string().into()))
        .await
        .unwrap();
    assert_eq!(call.await.unwrap().unwrap(), json!({"n": 8}));
}

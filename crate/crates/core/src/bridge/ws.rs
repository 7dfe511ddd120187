use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use futures::{SinkExt, StreamExt};
use tracing::warn;

use super::message::encode;
use super::router::Router;

/// Axum app exposing the raw bridge protocol on `/bridge`.
pub fn bridge_app(router: Router) -> axum::Router {
    axum::Router::new()
        .route("/bridge", get(upgrade))
        .with_state(router)
}

async fn upgrade(ws: WebSocketUpgrade, State(router): State<Router>) -> Response {
    ws.on_upgrade(move |socket| serve_socket(socket, router))
}

/// Pumps one WebSocket connection through a bridge session until either the
/// peer closes or the router drops the session.
pub async fn serve_socket(socket: WebSocket, router: Router) {
    let (session, mut outbox) = router.connect();
    let (mut sink, mut stream) = socket.split();

    let mut writer = tokio::spawn(async move {
        while let Some(msg) = outbox.recv().await {
            let text = match encode(&msg) {
                Ok(text) => text,
                Err(e) => {
                    warn!(error = %e, "dropping unencodable frame");
                    continue;
                }
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });

    loop {
        tokio::select! {
            _ = &mut writer => break,
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => session.dispatch_text(text.as_str()),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    drop(session);
    writer.abort();
}

//! Service-call and publish/subscribe protocol between the robot side and
//! the web side.

mod message;
mod router;
mod ws;

pub use message::{decode, encode, BridgeMessage, ProtocolError};
pub use router::{
    Router, ServiceError, ServiceHandler, ServiceResult, Session, SessionId, OUTBOX_CAPACITY,
    REMOTE_CALL_TIMEOUT,
};
pub use ws::{bridge_app, serve_socket};

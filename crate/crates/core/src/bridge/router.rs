//! Service registry and topic fan-out shared by every bridge session.
//!
//! A session is anything that exchanges [`BridgeMessage`]s with the router: a
//! WebSocket client, the HTTP gateway's event relay, or a test harness. Each
//! session owns a bounded outbox; frames are delivered in the order the
//! router emits them and a session whose outbox fills up is disconnected.

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use futures::future::BoxFuture;
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};
use tracing::{debug, warn};

use super::message::{decode, BridgeMessage};
use crate::error::{Error, ErrorCode};

/// Outbound frames a session may have queued before it is dropped.
pub const OUTBOX_CAPACITY: usize = 1024;

/// How long a call to a remotely advertised service may take.
pub const REMOTE_CALL_TIMEOUT: Duration = Duration::from_secs(30);

pub type SessionId = u64;

/// Failure reported in a `service_response` with `result: false`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {reason}")]
pub struct ServiceError {
    pub code: ErrorCode,
    pub reason: String,
    pub detail: Option<Value>,
}

impl ServiceError {
    pub fn new(code: ErrorCode, reason: impl Into<String>) -> Self {
        ServiceError {
            code,
            reason: reason.into(),
            detail: None,
        }
    }

    pub fn no_such_service() -> Self {
        ServiceError::new(ErrorCode::NotFound, "no such service")
    }

    pub fn to_payload(&self) -> Value {
        let mut v = json!({ "code": self.code.as_str(), "reason": self.reason });
        if let Some(detail) = &self.detail {
            v["detail"] = detail.clone();
        }
        v
    }

    /// Inverse of [`ServiceError::to_payload`]. Payloads from foreign
    /// providers that do not follow the shape become `internal` errors.
    pub fn from_payload(values: &Value) -> Self {
        let code = values
            .get("code")
            .and_then(Value::as_str)
            .and_then(ErrorCode::parse)
            .unwrap_or(ErrorCode::Internal);
        let reason = values
            .get("reason")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| values.to_string());
        ServiceError {
            code,
            reason,
            detail: values.get("detail").cloned(),
        }
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        ServiceError {
            code: e.code(),
            detail: e.detail().cloned(),
            reason: e.to_string(),
        }
    }
}

pub type ServiceResult = Result<Value, ServiceError>;

pub trait ServiceHandler: Send + Sync + 'static {
    fn call(&self, args: Value) -> BoxFuture<'static, ServiceResult>;
}

impl<F, Fut> ServiceHandler for F
where
    F: Fn(Value) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ServiceResult> + Send + 'static,
{
    fn call(&self, args: Value) -> BoxFuture<'static, ServiceResult> {
        Box::pin(self(args))
    }
}

enum Provider {
    Local(Arc<dyn ServiceHandler>),
    Remote(SessionId),
}

struct PendingCall {
    provider: SessionId,
    reply: oneshot::Sender<BridgeMessage>,
}

#[derive(Default)]
struct Registry {
    services: HashMap<String, Provider>,
    topics: HashMap<String, BTreeSet<SessionId>>,
    sessions: HashMap<SessionId, mpsc::Sender<BridgeMessage>>,
    pending: HashMap<String, PendingCall>,
}

impl Registry {
    fn remove_session(&mut self, id: SessionId) -> bool {
        let existed = self.sessions.remove(&id).is_some();
        for subs in self.topics.values_mut() {
            subs.remove(&id);
        }
        self.topics.retain(|_, subs| !subs.is_empty());
        self.services
            .retain(|_, p| !matches!(p, Provider::Remote(owner) if *owner == id));
        // dropping the reply senders fails the waiting callers
        self.pending.retain(|_, call| call.provider != id);
        existed
    }

    /// Queues a frame for one session. A full outbox disconnects the session.
    fn send(&mut self, id: SessionId, msg: BridgeMessage) -> bool {
        let Some(tx) = self.sessions.get(&id) else {
            return false;
        };
        match tx.try_send(msg) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                warn!(session = id, "outbox full, disconnecting slow session");
                self.remove_session(id);
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => {
                self.remove_session(id);
                false
            }
        }
    }
}

struct Shared {
    registry: Mutex<Registry>,
    next_session: AtomicU64,
    next_call: AtomicU64,
}

/// Cheaply cloneable handle to the message router.
#[derive(Clone)]
pub struct Router {
    shared: Arc<Shared>,
}

impl Default for Router {
    fn default() -> Self {
        Router::new()
    }
}

impl Router {
    pub fn new() -> Self {
        Router {
            shared: Arc::new(Shared {
                registry: Mutex::new(Registry::default()),
                next_session: AtomicU64::new(1),
                next_call: AtomicU64::new(1),
            }),
        }
    }

    fn registry(&self) -> MutexGuard<'_, Registry> {
        self.shared
            .registry
            .lock()
            .expect("router registry poisoned")
    }

    /// Registers an in-process handler. Fails if the name is taken.
    pub fn advertise(&self, service: &str, handler: impl ServiceHandler) -> Result<(), Error> {
        self.insert_provider(service, Provider::Local(Arc::new(handler)))
    }

    /// Registers a synchronous handler.
    pub fn advertise_fn<F>(&self, service: &str, f: F) -> Result<(), Error>
    where
        F: Fn(Value) -> ServiceResult + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        self.advertise(service, move |args: Value| {
            let f = Arc::clone(&f);
            async move { f(args) }
        })
    }

    fn insert_provider(&self, service: &str, provider: Provider) -> Result<(), Error> {
        let mut reg = self.registry();
        if reg.services.contains_key(service) {
            return Err(Error::conflict(format!(
                "service {service} is already advertised"
            )));
        }
        reg.services.insert(service.to_string(), provider);
        Ok(())
    }

    pub fn unadvertise(&self, service: &str) -> bool {
        self.registry().services.remove(service).is_some()
    }

    pub fn services(&self) -> Vec<String> {
        let mut names: Vec<String> = self.registry().services.keys().cloned().collect();
        names.sort();
        names
    }

    /// Opens a session. Frames for it arrive on the returned receiver; the
    /// session is torn down when the [`Session`] is dropped.
    pub fn connect(&self) -> (Session, mpsc::Receiver<BridgeMessage>) {
        let id = self.shared.next_session.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel(OUTBOX_CAPACITY);
        self.registry().sessions.insert(id, tx);
        debug!(session = id, "bridge session connected");
        (
            Session {
                id,
                router: self.clone(),
            },
            rx,
        )
    }

    pub fn is_connected(&self, session: SessionId) -> bool {
        self.registry().sessions.contains_key(&session)
    }

    pub fn disconnect(&self, session: SessionId) {
        if self.registry().remove_session(session) {
            debug!(session, "bridge session disconnected");
        }
    }

    pub fn subscribe(&self, session: SessionId, topic: &str) -> bool {
        let mut reg = self.registry();
        if !reg.sessions.contains_key(&session) {
            return false;
        }
        reg.topics
            .entry(topic.to_string())
            .or_default()
            .insert(session);
        true
    }

    pub fn unsubscribe(&self, session: SessionId, topic: &str) -> bool {
        let mut reg = self.registry();
        let Some(subs) = reg.topics.get_mut(topic) else {
            return false;
        };
        let removed = subs.remove(&session);
        if subs.is_empty() {
            reg.topics.remove(topic);
        }
        removed
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.registry().topics.get(topic).map_or(0, BTreeSet::len)
    }

    /// Delivers `msg` to every current subscriber of `topic` and returns how
    /// many sessions received it.
    pub fn publish(&self, topic: &str, msg: Value) -> usize {
        let mut reg = self.registry();
        let subscribers: Vec<SessionId> = match reg.topics.get(topic) {
            Some(subs) => subs.iter().copied().collect(),
            None => return 0,
        };
        let frame = BridgeMessage::Publish {
            topic: topic.to_string(),
            msg,
        };
        subscribers
            .into_iter()
            .filter(|&id| reg.send(id, frame.clone()))
            .count()
    }

    /// Invokes a service in-process, wherever its provider lives.
    pub async fn call(&self, service: &str, args: Value) -> ServiceResult {
        let target = {
            let reg = self.registry();
            match reg.services.get(service) {
                Some(Provider::Local(handler)) => Ok(Arc::clone(handler)),
                Some(Provider::Remote(owner)) => Err(Some(*owner)),
                None => Err(None),
            }
        };
        match target {
            Ok(handler) => handler.call(args).await,
            Err(Some(owner)) => self.call_remote(owner, service, args).await,
            Err(None) => Err(ServiceError::no_such_service()),
        }
    }

    async fn call_remote(&self, provider: SessionId, service: &str, args: Value) -> ServiceResult {
        let call_id = format!(
            "router-{}",
            self.shared.next_call.fetch_add(1, Ordering::Relaxed)
        );
        let (reply_tx, reply_rx) = oneshot::channel();
        {
            let mut reg = self.registry();
            reg.pending.insert(
                call_id.clone(),
                PendingCall {
                    provider,
                    reply: reply_tx,
                },
            );
            let request = BridgeMessage::CallService {
                id: call_id.clone(),
                service: service.to_string(),
                args,
            };
            if !reg.send(provider, request) {
                reg.pending.remove(&call_id);
                return Err(ServiceError::new(
                    ErrorCode::Internal,
                    "service provider disconnected",
                ));
            }
        }
        match tokio::time::timeout(REMOTE_CALL_TIMEOUT, reply_rx).await {
            Ok(Ok(BridgeMessage::ServiceResponse { values, result, .. })) => {
                if result {
                    Ok(values)
                } else {
                    Err(ServiceError::from_payload(&values))
                }
            }
            Ok(Ok(_)) => Err(ServiceError::new(ErrorCode::Internal, "unexpected reply")),
            Ok(Err(_)) => Err(ServiceError::new(
                ErrorCode::Internal,
                "service provider disconnected",
            )),
            Err(_) => {
                self.registry().pending.remove(&call_id);
                Err(ServiceError::new(
                    ErrorCode::Internal,
                    "service call timed out",
                ))
            }
        }
    }

    /// Runs a call on behalf of `session` and queues exactly one
    /// `service_response` carrying the caller's id.
    pub async fn call_for_session(
        &self,
        session: SessionId,
        id: String,
        service: String,
        args: Value,
    ) {
        let response = match self.call(&service, args).await {
            Ok(values) => BridgeMessage::ServiceResponse {
                id,
                service,
                values,
                result: true,
            },
            Err(e) => BridgeMessage::ServiceResponse {
                id,
                service,
                values: e.to_payload(),
                result: false,
            },
        };
        self.registry().send(session, response);
    }

    /// Applies one inbound message from `session`. Service calls are awaited
    /// inline; use [`Session::dispatch`] to run them concurrently.
    pub async fn handle(&self, session: SessionId, msg: BridgeMessage) {
        match msg {
            BridgeMessage::CallService { id, service, args } => {
                self.call_for_session(session, id, service, args).await;
            }
            other => self.handle_non_call(session, other),
        }
    }

    fn handle_non_call(&self, session: SessionId, msg: BridgeMessage) {
        match msg {
            BridgeMessage::CallService { .. } => unreachable!("calls are dispatched separately"),
            BridgeMessage::AdvertiseService { id, service } => {
                if let Err(e) = self.insert_provider(&service, Provider::Remote(session)) {
                    self.send_status(session, id, e.to_string());
                }
            }
            BridgeMessage::ServiceResponse { ref id, .. } => {
                let pending = self.registry().pending.remove(id);
                match pending {
                    Some(call) if call.provider == session => {
                        let _ = call.reply.send(msg);
                    }
                    Some(call) => {
                        // not the provider we asked; keep waiting for the right one
                        self.registry().pending.insert(id.clone(), call);
                    }
                    None => debug!(session, id = %id, "dropping uncorrelated service_response"),
                }
            }
            BridgeMessage::Subscribe { topic, .. } => {
                self.subscribe(session, &topic);
            }
            BridgeMessage::Unsubscribe { topic, .. } => {
                self.unsubscribe(session, &topic);
            }
            BridgeMessage::Publish { topic, msg } => {
                self.publish(&topic, msg);
            }
            BridgeMessage::Status { msg, .. } => {
                debug!(session, status = %msg, "status from peer");
            }
        }
    }

    fn send_status(&self, session: SessionId, id: Option<String>, msg: String) {
        self.registry()
            .send(session, BridgeMessage::Status { id, msg });
    }
}

/// A connected peer. Dropping it disconnects the session.
pub struct Session {
    id: SessionId,
    router: Router,
}

impl Session {
    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn subscribe(&self, topic: &str) -> bool {
        self.router.subscribe(self.id, topic)
    }

    pub fn unsubscribe(&self, topic: &str) -> bool {
        self.router.unsubscribe(self.id, topic)
    }

    pub async fn handle(&self, msg: BridgeMessage) {
        self.router.handle(self.id, msg).await;
    }

    /// Applies a message without waiting on service handlers: calls run on
    /// their own task, everything else is applied before returning.
    pub fn dispatch(&self, msg: BridgeMessage) {
        match msg {
            BridgeMessage::CallService { id, service, args } => {
                let router = self.router.clone();
                let session = self.id;
                tokio::spawn(async move {
                    router.call_for_session(session, id, service, args).await;
                });
            }
            other => self.router.handle_non_call(self.id, other),
        }
    }

    /// Decodes and dispatches a text frame. Protocol errors are reported back
    /// to the peer as `status` frames.
    pub fn dispatch_text(&self, frame: &str) {
        match decode(frame) {
            Ok(msg) => self.dispatch(msg),
            Err(e) => {
                self.router
                    .send_status(self.id, None, format!("protocol error: {e}"));
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.router.disconnect(self.id);
    }
}

use serde::Serialize;
use serde_json::{Map, Value};

/// Errors raised while encoding or decoding bridge frames.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),

    #[error("unknown op {0:?}")]
    UnknownOp(String),

    #[error("missing required field \"{0}\"")]
    MissingField(&'static str),

    #[error("field \"{field}\" {problem}")]
    InvalidField {
        field: &'static str,
        problem: String,
    },
}

/// One frame of the bridge protocol. Serializes with `op` as the first key
/// followed by the fields that op carries, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BridgeMessage {
    AdvertiseService {
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        service: String,
    },
    CallService {
        id: String,
        service: String,
        args: Value,
    },
    ServiceResponse {
        id: String,
        service: String,
        values: Value,
        result: bool,
    },
    Subscribe {
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        topic: String,
    },
    Unsubscribe {
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        topic: String,
    },
    Publish {
        topic: String,
        msg: Value,
    },
    Status {
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        msg: String,
    },
}

impl BridgeMessage {
    pub fn op(&self) -> &'static str {
        match self {
            BridgeMessage::AdvertiseService { .. } => "advertise_service",
            BridgeMessage::CallService { .. } => "call_service",
            BridgeMessage::ServiceResponse { .. } => "service_response",
            BridgeMessage::Subscribe { .. } => "subscribe",
            BridgeMessage::Unsubscribe { .. } => "unsubscribe",
            BridgeMessage::Publish { .. } => "publish",
            BridgeMessage::Status { .. } => "status",
        }
    }

    pub fn status(msg: impl Into<String>) -> Self {
        BridgeMessage::Status {
            id: None,
            msg: msg.into(),
        }
    }

    /// Checks the constraints the type system does not carry: names are
    /// slash-prefixed paths and correlation ids are non-empty.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            BridgeMessage::AdvertiseService { id, service } => {
                check_id_opt(id)?;
                check_path("service", service)
            }
            BridgeMessage::CallService { id, service, .. }
            | BridgeMessage::ServiceResponse { id, service, .. } => {
                check_id(id)?;
                check_path("service", service)
            }
            BridgeMessage::Subscribe { id, topic } | BridgeMessage::Unsubscribe { id, topic } => {
                check_id_opt(id)?;
                check_path("topic", topic)
            }
            BridgeMessage::Publish { topic, .. } => check_path("topic", topic),
            BridgeMessage::Status { id, .. } => check_id_opt(id),
        }
    }
}

fn check_id(id: &str) -> Result<(), ProtocolError> {
    if id.is_empty() {
        return Err(ProtocolError::InvalidField {
            field: "id",
            problem: "must not be empty".into(),
        });
    }
    Ok(())
}

fn check_id_opt(id: &Option<String>) -> Result<(), ProtocolError> {
    id.as_deref().map_or(Ok(()), check_id)
}

fn check_path(field: &'static str, name: &str) -> Result<(), ProtocolError> {
    if !name.starts_with('/') || name.len() < 2 {
        return Err(ProtocolError::InvalidField {
            field,
            problem: format!("must be a slash-prefixed name, got {name:?}"),
        });
    }
    Ok(())
}

/// Encodes a message as a single-line JSON text frame.
pub fn encode(msg: &BridgeMessage) -> Result<String, ProtocolError> {
    msg.validate()?;
    serde_json::to_string(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Parses a text frame. Unknown extra fields are ignored.
pub fn decode(frame: &str) -> Result<BridgeMessage, ProtocolError> {
    let value: Value =
        serde_json::from_str(frame).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::Malformed(
            "frame is not a JSON object".into(),
        ));
    };
    let op = take_string(&mut obj, "op")?.ok_or(ProtocolError::MissingField("op"))?;

    let msg = match op.as_str() {
        "advertise_service" => BridgeMessage::AdvertiseService {
            id: take_string(&mut obj, "id")?,
            service: require_string(&mut obj, "service")?,
        },
        "call_service" => BridgeMessage::CallService {
            id: require_string(&mut obj, "id")?,
            service: require_string(&mut obj, "service")?,
            args: obj
                .remove("args")
                .unwrap_or_else(|| Value::Object(Map::new())),
        },
        "service_response" => BridgeMessage::ServiceResponse {
            id: require_string(&mut obj, "id")?,
            service: require_string(&mut obj, "service")?,
            values: obj.remove("values").unwrap_or(Value::Null),
            result: match obj.remove("result") {
                Some(Value::Bool(b)) => b,
                Some(_) => {
                    return Err(ProtocolError::InvalidField {
                        field: "result",
                        problem: "must be a boolean".into(),
                    })
                }
                None => return Err(ProtocolError::MissingField("result")),
            },
        },
        "subscribe" => BridgeMessage::Subscribe {
            id: take_string(&mut obj, "id")?,
            topic: require_string(&mut obj, "topic")?,
        },
        "unsubscribe" => BridgeMessage::Unsubscribe {
            id: take_string(&mut obj, "id")?,
            topic: require_string(&mut obj, "topic")?,
        },
        "publish" => BridgeMessage::Publish {
            topic: require_string(&mut obj, "topic")?,
            msg: obj
                .remove("msg")
                .ok_or(ProtocolError::MissingField("msg"))?,
        },
        "status" => BridgeMessage::Status {
            id: take_string(&mut obj, "id")?,
            msg: require_string(&mut obj, "msg")?,
        },
        _ => return Err(ProtocolError::UnknownOp(op)),
    };
    msg.validate()?;
    Ok(msg)
}

fn take_string(
    obj: &mut Map<String, Value>,
    field: &'static str,
) -> Result<Option<String>, ProtocolError> {
    match obj.remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ProtocolError::InvalidField {
            field,
            problem: "must be a string".into(),
        }),
    }
}

fn require_string(
    obj: &mut Map<String, Value>,
    field: &'static str,
) -> Result<String, ProtocolError> {
    take_string(obj, field)?.ok_or(ProtocolError::MissingField(field))
}

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::TransportError;

/// One message: a type tag, an optional per-connection request id, and
/// type-specific fields flattened next to them.
///
/// `{"t":"arm.command","id":3,"q_target":[...]}` is an envelope with
/// `t = "arm.command"`, `id = Some(3)` and a one-key body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub t: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub body: Map<String, Value>,
}

pub const ERROR_TYPE: &str = "error";

impl Envelope {
    pub fn new(t: impl Into<String>) -> Self {
        Self {
            t: t.into(),
            id: None,
            body: Map::new(),
        }
    }

    /// Build an envelope whose body is the serialized form of `body`, which
    /// must serialize to a JSON object.
    pub fn with_body<T: Serialize>(t: impl Into<String>, body: &T) -> Result<Self, TransportError> {
        match serde_json::to_value(body)? {
            Value::Object(map) => Ok(Self {
                t: t.into(),
                id: None,
                body: map,
            }),
            other => Err(TransportError::Protocol(format!(
                "message body must be a JSON object, got {other}"
            ))),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.body.insert(key.to_owned(), value.into());
        self
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = Some(id);
        self
    }

    pub fn parse_body<T: DeserializeOwned>(&self) -> Result<T, TransportError> {
        Ok(serde_json::from_value(Value::Object(self.body.clone()))?)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.body.get(key)
    }

    pub fn is_error(&self) -> bool {
        self.t == ERROR_TYPE
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Envelope::new(ERROR_TYPE)
            .with("code", code)
            .with("message", message.into())
    }

    /// Turn an error reply into [`TransportError::Remote`].
    pub fn into_result(self) -> Result<Envelope, TransportError> {
        if self.is_error() {
            let field = |k: &str| {
                self.body
                    .get(k)
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_owned()
            };
            Err(TransportError::Remote {
                code: field("code"),
                message: field("message"),
            })
        } else {
            Ok(self)
        }
    }

    /// Serialize to the compact JSON payload (no whitespace, body keys in
    /// sorted order). Fails when the body shadows `t` or `id`.
    pub fn to_payload(&self) -> Result<Vec<u8>, TransportError> {
        if self.body.contains_key("t") || self.body.contains_key("id") {
            return Err(TransportError::Protocol(
                "body may not contain the reserved keys \"t\" or \"id\"".into(),
            ));
        }
        Ok(serde_json::to_vec(self)?)
    }

    /// Parse a payload; it must be a JSON object with a string `t`.
    pub fn from_payload(payload: &[u8]) -> Result<Self, TransportError> {
        let value: Value = serde_json::from_slice(payload)
            .map_err(|e| TransportError::Protocol(format!("payload is not valid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(TransportError::Protocol("payload is not a JSON object".into()));
        };
        let t = match map.remove("t") {
            Some(Value::String(t)) => t,
            _ => {
                return Err(TransportError::Protocol(
                    "payload lacks a string \"t\" field".into(),
                ))
            }
        };
        let id = match map.remove("id") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| {
                TransportError::Protocol(format!("request id must be an unsigned integer, got {v}"))
            })?),
        };
        Ok(Self { t, id, body: map })
    }
}

/// Error reply produced by a service.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ErrorReply {
    pub code: String,
    pub message: String,
}

impl ErrorReply {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
        }
    }

    pub fn unknown_type(t: &str) -> Self {
        Self::new("unknown-type", format!("no handler for message type {t:?}"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("bad-request", message)
    }

    pub fn to_envelope(&self) -> Envelope {
        Envelope::error(&self.code, self.message.clone())
    }
}

impl From<TransportError> for ErrorReply {
    fn from(e: TransportError) -> Self {
        ErrorReply::bad_request(e.to_string())
    }
}

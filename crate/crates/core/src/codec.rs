//! Frame codec: a 4-byte big-endian body length followed by a UTF-8 JSON
//! body of the form `{"v":<version>,"msg":{"type":...,"body":...}}`.
//!
//! Encoding is deterministic: struct fields serialize in declaration order
//! and all maps are ordered.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Message, PROTOCOL_VERSION};

/// Bodies above this size are rejected before allocation.
pub const MAX_BODY_LEN: usize = 512 * 1024 * 1024;

pub const PREFIX_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum ProtocolError {
    /// Byte offset into the frame where decoding failed.
    #[error("malformed message at byte {0}")]
    MalformedMessage(usize),
    #[error("protocol version mismatch: got {got}, expected {expected}")]
    VersionMismatch { got: u64, expected: u32 },
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Serialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeRef<'a> {
    v: u32,
    msg: &'a Message,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    #[allow(dead_code)]
    v: u32,
    msg: Message,
}

#[derive(Deserialize)]
struct VersionProbe {
    v: Option<serde_json::Value>,
}

/// Serializes the body (no length prefix).
pub fn encode_body(msg: &Message) -> Vec<u8> {
    serde_json::to_vec(&EnvelopeRef {
        v: PROTOCOL_VERSION,
        msg,
    })
    .expect("messages always serialize")
}

/// Serializes a full frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let body = encode_body(msg);
    let mut out = Vec::with_capacity(PREFIX_LEN + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes exactly one full frame; trailing or missing bytes are errors.
pub fn decode(frame: &[u8]) -> Result<Message, ProtocolError> {
    if frame.len() < PREFIX_LEN {
        return Err(ProtocolError::MalformedMessage(frame.len()));
    }
    let len = u32::from_be_bytes(frame[..PREFIX_LEN].try_into().expect("4 bytes")) as usize;
    if len > MAX_BODY_LEN {
        return Err(ProtocolError::MalformedMessage(0));
    }
    let body = &frame[PREFIX_LEN..];
    if body.len() != len {
        return Err(ProtocolError::MalformedMessage(
            PREFIX_LEN + body.len().min(len),
        ));
    }
    decode_body(body).map_err(|e| match e {
        ProtocolError::MalformedMessage(at) => ProtocolError::MalformedMessage(at + PREFIX_LEN),
        other => other,
    })
}

/// Decodes a body; positions in errors are relative to the body.
pub fn decode_body(body: &[u8]) -> Result<Message, ProtocolError> {
    let probe: VersionProbe = serde_json::from_slice(body).map_err(|e| malformed(body, &e))?;
    match probe.v {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(u64::from(PROTOCOL_VERSION)) => {}
        Some(serde_json::Value::Number(n)) if n.as_u64().is_some() => {
            return Err(ProtocolError::VersionMismatch {
                got: n.as_u64().unwrap_or_default(),
                expected: PROTOCOL_VERSION,
            })
        }
        _ => return Err(ProtocolError::MalformedMessage(0)),
    }
    let env: Envelope = serde_json::from_slice(body).map_err(|e| malformed(body, &e))?;
    env.msg.validate().map_err(ProtocolError::Invalid)?;
    Ok(env.msg)
}

fn malformed(body: &[u8], e: &serde_json::Error) -> ProtocolError {
    ProtocolError::MalformedMessage(offset_of(body, e.line(), e.column()))
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn offset_of(body: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for _ in 1..line {
        match body[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(body.len())
}

/// Writes one frame.
pub fn write_frame<W: Write>(mut w: W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// Reads one frame. A clean EOF before the prefix yields `Ok(None)`.
pub fn read_frame<R: Read>(mut r: R) -> Result<Option<Message>, ProtocolError> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut got = 0;
    while got < PREFIX_LEN {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::MalformedMessage(got)),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_BODY_LEN {
        return Err(ProtocolError::MalformedMessage(0));
    }
    let mut body = Vec::with_capacity(len.min(1 << 20));
    let read = r.by_ref().take(len as u64).read_to_end(&mut body)?;
    if read != len {
        return Err(ProtocolError::MalformedMessage(PREFIX_LEN + read));
    }
    decode_body(&body).map(Some).map_err(|e| match e {
        ProtocolError::MalformedMessage(at) => ProtocolError::MalformedMessage(at + PREFIX_LEN),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::WorkReply;

    #[test]
    fn no_work_round_trips() {
        let m = Message::Work(WorkReply::NoWork { backoff_secs: 60 });
        let bytes = encode(&m);
        assert_eq!(decode(&bytes).unwrap(), m);
        assert_eq!(
            std::str::from_utf8(&bytes[4..]).unwrap(),
            r#"{"v":1,"msg":{"type":"work","body":{"kind":"NO_WORK","body":{"backoff_secs":60}}}}"#
        );
    }

    #[test]
    fn truncated_stream_is_malformed() {
        let bytes = encode(&Message::Ack);
        for cut in 0..bytes.len() {
            assert!(matches!(
                decode(&bytes[..cut]),
                Err(ProtocolError::MalformedMessage(_))
            ));
        }
        let mut longer = bytes.clone();
        longer.push(b' ');
        assert!(decode(&longer).is_err());
    }

    #[test]
    fn version_mismatch() {
        let body = br#"{"v":2,"msg":{"type":"ack"}}"#;
        assert!(matches!(
            decode_body(body),
            Err(ProtocolError::VersionMismatch { got: 2, .. })
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let ok = br#"{"v":1,"msg":{"type":"heartbeat","body":{"client_id":"c1"}}}"#;
        assert!(decode_body(ok).is_ok());
        let extra_field = br#"{"v":1,"msg":{"type":"heartbeat","body":{"client_id":"c1","x":1}}}"#;
        assert!(decode_body(extra_field).is_err());
        let extra_top = br#"{"v":1,"x":0,"msg":{"type":"ack"}}"#;
        assert!(decode_body(extra_top).is_err());
        let extra_msg = br#"{"v":1,"msg":{"type":"ack","y":2}}"#;
        assert!(decode_body(extra_msg).is_err());
        let nested = br#"{"v":1,"msg":{"type":"work","body":{"kind":"NO_WORK","body":{"backoff_secs":1,"z":0}}}}"#;
        assert!(decode_body(nested).is_err());
    }

    #[test]
    fn malformed_position_points_into_body() {
        let body = br#"{"v":1,"msg":{"type":"ack"}"#;
        match decode_body(body) {
            Err(ProtocolError::MalformedMessage(at)) => assert!(at + 1 >= body.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stream_read_write() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Message::Ack).unwrap();
        write_frame(&mut buf, &Message::Status { job: None }).unwrap();
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some(Message::Ack));
        assert_eq!(
            read_frame(&mut r).unwrap(),
            Some(Message::Status { job: None })
        );
        assert!(read_frame(&mut r).unwrap().is_none());
    }
}

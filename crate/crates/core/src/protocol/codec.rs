//! Envelope framing.
//!
//! ```text
//! magic[4]="A4AR" | version:u8=1 | msg_type:u8 | header_len:u32le |
//! header[header_len] (UTF-8 JSON) | blob_len:u32le | blob[blob_len]
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::types::*;

pub const MAGIC: [u8; 4] = *b"A4AR";
pub const VERSION: u8 = 1;
/// Bytes before the header: magic, version, type, header length.
pub const PREFIX_LEN: usize = 10;
/// Fixed framing overhead of an envelope (prefix plus blob length).
pub const ENVELOPE_OVERHEAD: usize = PREFIX_LEN + 4;
pub const MAX_MESSAGE_SIZE: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Frame = 1,
    AnnotationSet = 2,
    WorkerRegister = 3,
    WorkerResult = 4,
    Heartbeat = 5,
    Error = 6,
    StatsRequest = 7,
    StatsReport = 8,
}

impl TryFrom<u8> for MessageType {
    type Error = DecodeError;

    fn try_from(code: u8) -> Result<Self, DecodeError> {
        Ok(match code {
            1 => Self::Frame,
            2 => Self::AnnotationSet,
            3 => Self::WorkerRegister,
            4 => Self::WorkerResult,
            5 => Self::Heartbeat,
            6 => Self::Error,
            7 => Self::StatsRequest,
            8 => Self::StatsReport,
            other => return Err(DecodeError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Frame(Frame),
    AnnotationSet(AnnotationSet),
    WorkerRegister(WorkerRegister),
    WorkerResult(WorkerResult),
    Heartbeat(Heartbeat),
    Error(ErrorMessage),
    StatsRequest(StatsRequest),
    StatsReport(GatewayStats),
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::Frame(_) => MessageType::Frame,
            Message::AnnotationSet(_) => MessageType::AnnotationSet,
            Message::WorkerRegister(_) => MessageType::WorkerRegister,
            Message::WorkerResult(_) => MessageType::WorkerResult,
            Message::Heartbeat(_) => MessageType::Heartbeat,
            Message::Error(_) => MessageType::Error,
            Message::StatsRequest(_) => MessageType::StatsRequest,
            Message::StatsReport(_) => MessageType::StatsReport,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Message::Frame(m) => m.validate(),
            Message::AnnotationSet(m) => m.validate(),
            Message::WorkerRegister(m) => m.validate(),
            Message::WorkerResult(m) => m.validate(),
            Message::StatsReport(m) => m.validate(),
            Message::Heartbeat(_) | Message::Error(_) | Message::StatsRequest(_) => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("message violates its invariants: {0}")]
    Invalid(String),
    #[error("encoded message is {0} bytes, above the {MAX_MESSAGE_SIZE} byte limit")]
    TooLarge(usize),
    #[error("header serialization failed: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("wrong protocol: bad magic bytes")]
    WrongProtocol,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated envelope: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("declared message size {0} exceeds the limit")]
    TooLarge(usize),
    #[error("message violates its invariants: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes after envelope")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Header of a frame message; the pixels travel in the blob.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameHeader {
    frame_id: u64,
    timestamp_ns: u64,
    intrinsics: CameraIntrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_pose: Option<HeadPose>,
    pixel_format: PixelFormat,
}

/// Serializes with sorted keys (serde_json's default map is ordered).
fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let tree = serde_json::to_value(value)?;
    serde_json::to_vec(&tree)
}

/// Canonical header JSON and binary blob of a message, as carried on the
/// wire.
pub fn split_message(msg: &Message) -> Result<(Vec<u8>, &[u8]), EncodeError> {
    msg.validate().map_err(EncodeError::Invalid)?;
    Ok(match msg {
        Message::Frame(f) => {
            let header = FrameHeader {
                frame_id: f.frame_id,
                timestamp_ns: f.timestamp_ns,
                intrinsics: f.intrinsics,
                head_pose: f.head_pose,
                pixel_format: f.pixels.format,
            };
            (canonical_json(&header)?, f.pixels.data.as_slice())
        }
        Message::AnnotationSet(m) => (canonical_json(m)?, &[]),
        Message::WorkerRegister(m) => (canonical_json(m)?, &[]),
        Message::WorkerResult(m) => (canonical_json(m)?, &[]),
        Message::Heartbeat(m) => (canonical_json(m)?, &[]),
        Message::Error(m) => (canonical_json(m)?, &[]),
        Message::StatsRequest(m) => (canonical_json(m)?, &[]),
        Message::StatsReport(m) => (canonical_json(m)?, &[]),
    })
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let (header, blob) = split_message(msg)?;
    let total = ENVELOPE_OVERHEAD + header.len() + blob.len();
    if total > MAX_MESSAGE_SIZE {
        return Err(EncodeError::TooLarge(total));
    }
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob);
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<usize, DecodeError> {
    let slice = bytes.get(at..at + 4).ok_or(DecodeError::Truncated {
        needed: at + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_le_bytes([slice[0], slice[1], slice[2], slice[3]]) as usize)
}

/// Validates the fixed prefix, returning the type and header length.
fn check_prefix(prefix: &[u8]) -> Result<(MessageType, usize), DecodeError> {
    // Check the magic on whatever is available so short garbage is
    // classified as the wrong protocol rather than truncated.
    let magic_len = prefix.len().min(4);
    if prefix[..magic_len] != MAGIC[..magic_len] {
        return Err(DecodeError::WrongProtocol);
    }
    if prefix.len() < PREFIX_LEN {
        return Err(DecodeError::Truncated { needed: PREFIX_LEN, available: prefix.len() });
    }
    if prefix[4] != VERSION {
        return Err(DecodeError::UnsupportedVersion(prefix[4]));
    }
    let msg_type = MessageType::try_from(prefix[5])?;
    let header_len = read_u32(prefix, 6)?;
    if header_len > MAX_MESSAGE_SIZE - ENVELOPE_OVERHEAD {
        return Err(DecodeError::TooLarge(header_len + ENVELOPE_OVERHEAD));
    }
    Ok((msg_type, header_len))
}

fn check_blob_len(header_len: usize, blob_len: usize) -> Result<(), DecodeError> {
    let total = ENVELOPE_OVERHEAD + header_len + blob_len;
    if total > MAX_MESSAGE_SIZE {
        return Err(DecodeError::TooLarge(total));
    }
    Ok(())
}

fn parse_header<T: DeserializeOwned>(header: &[u8]) -> Result<T, DecodeError> {
    let text = std::str::from_utf8(header).map_err(|e| DecodeError::MalformedHeader(e.to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DecodeError::MalformedHeader(e.to_string()))?;
    if !value.is_object() {
        return Err(DecodeError::MalformedHeader("header is not a JSON object".into()));
    }
    serde_json::from_value(value).map_err(|e| DecodeError::MalformedHeader(e.to_string()))
}

/// Inverse of [`split_message`]: builds and validates a message from its
/// header JSON and blob.
pub fn join_message(msg_type: MessageType, header: &[u8], blob: &[u8]) -> Result<Message, DecodeError> {
    if msg_type != MessageType::Frame && !blob.is_empty() {
        return Err(DecodeError::Invalid(format!("{msg_type:?} message carries a blob")));
    }
    let msg = match msg_type {
        MessageType::Frame => {
            let h: FrameHeader = parse_header(header)?;
            Message::Frame(Frame {
                frame_id: h.frame_id,
                timestamp_ns: h.timestamp_ns,
                intrinsics: h.intrinsics,
                head_pose: h.head_pose,
                pixels: PixelBuffer { format: h.pixel_format, data: blob.to_vec() },
            })
        }
        MessageType::AnnotationSet => Message::AnnotationSet(parse_header(header)?),
        MessageType::WorkerRegister => Message::WorkerRegister(parse_header(header)?),
        MessageType::WorkerResult => Message::WorkerResult(parse_header(header)?),
        MessageType::Heartbeat => Message::Heartbeat(parse_header(header)?),
        MessageType::Error => Message::Error(parse_header(header)?),
        MessageType::StatsRequest => Message::StatsRequest(parse_header(header)?),
        MessageType::StatsReport => Message::StatsReport(parse_header(header)?),
    };
    msg.validate().map_err(DecodeError::Invalid)?;
    Ok(msg)
}

/// Length of the envelope at the start of `bytes`, once enough of it is
/// present to tell.
pub fn envelope_len(bytes: &[u8]) -> Result<usize, DecodeError> {
    let (_, header_len) = check_prefix(&bytes[..bytes.len().min(PREFIX_LEN)])?;
    let blob_len = read_u32(bytes, PREFIX_LEN + header_len)?;
    check_blob_len(header_len, blob_len)?;
    Ok(ENVELOPE_OVERHEAD + header_len + blob_len)
}

/// Decodes one envelope from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
    let (msg_type, header_len) = check_prefix(&bytes[..bytes.len().min(PREFIX_LEN)])?;
    let header_end = PREFIX_LEN + header_len;
    let blob_len = read_u32(bytes, header_end)?;
    check_blob_len(header_len, blob_len)?;
    let total = header_end + 4 + blob_len;
    if bytes.len() < total {
        return Err(DecodeError::Truncated { needed: total, available: bytes.len() });
    }
    let msg = join_message(msg_type, &bytes[PREFIX_LEN..header_end], &bytes[header_end + 4..total])?;
    Ok((msg, total))
}

/// Decodes exactly one envelope; extra bytes are an error.
pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}

/// Reads the raw bytes of one envelope from a stream. Returns `None` on a
/// clean end of stream before the first byte.
pub async fn read_envelope<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Option<Vec<u8>>, ReadError> {
    let mut prefix = [0u8; PREFIX_LEN];
    let first = reader.read(&mut prefix).await?;
    if first == 0 {
        return Ok(None);
    }
    reader.read_exact(&mut prefix[first..]).await?;
    let (_, header_len) = check_prefix(&prefix)?;
    let mut buf = Vec::with_capacity(ENVELOPE_OVERHEAD + header_len);
    buf.extend_from_slice(&prefix);
    buf.resize(PREFIX_LEN + header_len + 4, 0);
    reader.read_exact(&mut buf[PREFIX_LEN..]).await?;
    let blob_len = read_u32(&buf, PREFIX_LEN + header_len)?;
    check_blob_len(header_len, blob_len)?;
    let start = buf.len();
    buf.resize(start + blob_len, 0);
    reader.read_exact(&mut buf[start..]).await?;
    Ok(Some(buf))
}

pub async fn read_message<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Option<Message>, ReadError> {
    match read_envelope(reader).await? {
        Some(raw) => Ok(Some(decode_message(&raw)?)),
        None => Ok(None),
    }
}

/// Encodes `msg` and writes it with a single `write_all`.
pub async fn write_message<W: AsyncWrite + Unpin>(writer: &mut W, msg: &Message) -> std::io::Result<()> {
    let bytes = encode_message(msg).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    writer.write_all(&bytes).await
}

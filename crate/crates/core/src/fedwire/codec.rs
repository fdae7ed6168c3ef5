//! Frame layout: `u32 length (LE) | u8 type | payload[length]`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::ModelParams;

pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    Global = 0x02,
    Update = 0x03,
    Fin = 0x04,
    Error = 0x7F,
}

impl TryFrom<u8> for MsgType {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        Ok(match b {
            0x01 => Self::Hello,
            0x02 => Self::Global,
            0x03 => Self::Update,
            0x04 => Self::Fin,
            0x7F => Self::Error,
            other => return Err(Error::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

pub fn encode_frame(msg_type: MsgType, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.push(msg_type as u8);
    out.extend_from_slice(payload);
    Ok(out)
}

fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MsgType, usize)> {
    let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
    let msg_type = MsgType::try_from(header[4])?;
    if len > MAX_PAYLOAD {
        return Err(Error::Oversize(len));
    }
    Ok((msg_type, len))
}

/// Decodes one frame from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize)> {
    let header: &[u8; HEADER_LEN] =
        bytes
            .get(..HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or(Error::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            })?;
    let (msg_type, len) = parse_header(header)?;
    let end = HEADER_LEN + len;
    let payload = bytes.get(HEADER_LEN..end).ok_or(Error::Truncated {
        needed: end,
        available: bytes.len(),
    })?;
    Ok((
        Frame {
            msg_type,
            payload: payload.to_vec(),
        },
        end,
    ))
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, msg_type: MsgType, payload: &[u8]) -> Result<()> {
    w.write_all(&encode_frame(msg_type, payload)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Frame> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = Vec::new();
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(Error::Truncated {
            needed: len,
            available: payload.len(),
        });
    }
    Ok(Frame { msg_type, payload })
}

/// HELLO payload: `u32 n_samples (LE) | UTF-8 client id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub client_id: String,
    pub n_samples: u32,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.n_samples.to_le_bytes().to_vec();
        out.extend_from_slice(self.client_id.as_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        if payload.len() < 4 {
            return Err(Error::Truncated {
                needed: 4,
                available: payload.len(),
            });
        }
        let n_samples = u32::from_le_bytes(payload[..4].try_into().unwrap());
        let client_id = std::str::from_utf8(&payload[4..])
            .map_err(|_| Error::ProtocolViolation("client id is not UTF-8".into()))?
            .to_owned();
        if client_id.is_empty() {
            return Err(Error::ProtocolViolation("empty client id".into()));
        }
        Ok(Self { client_id, n_samples })
    }
}

/// GLOBAL/UPDATE payload: `u32 round | u32 n_samples | checkpoint bytes`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlob {
    pub round: u32,
    pub n_samples: u32,
    pub params: ModelParams,
}

impl WeightBlob {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.n_samples.to_le_bytes());
        out.extend_from_slice(&checkpoint::encode(&self.params));
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        if payload.len() < 8 {
            return Err(Error::Truncated {
                needed: 8,
                available: payload.len(),
            });
        }
        Ok(Self {
            round: u32::from_le_bytes(payload[..4].try_into().unwrap()),
            n_samples: u32::from_le_bytes(payload[4..8].try_into().unwrap()),
            params: checkpoint::decode(&payload[8..])?,
        })
    }
}

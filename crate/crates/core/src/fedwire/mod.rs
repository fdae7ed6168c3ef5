//! TCP transport for the federation: one aggregation server and K clients
//! exchanging length-prefixed frames in synchronous rounds.

mod client;
mod codec;
mod server;

pub use client::{client_join, ClientSummary};
pub use codec::{
    decode_frame, encode_frame, read_frame, write_frame, Frame, Hello, MsgType, WeightBlob, HEADER_LEN, MAX_PAYLOAD,
};
pub use server::{serve, serve_listener, ServerConfig};

use std::time::Duration;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(300);

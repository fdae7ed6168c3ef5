use std::io::ErrorKind;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::codec::{read_frame, write_frame, Hello, MsgType, WeightBlob};
use crate::error::{Error, Result};
use crate::fedavg::{local_train, round_config, ClientShard};
use crate::nn::{ModelParams, TrainConfig};

#[derive(Debug, Clone)]
pub struct ClientSummary {
    pub rounds: u32,
    pub last_global: Option<ModelParams>,
}

/// Joins a federation and trains on `shard` until the server sends FIN.
///
/// `local` is the per-client training configuration with the federation seed;
/// each round re-derives its seed from the shard's client id and the round.
pub fn client_join(
    addr: impl ToSocketAddrs + std::fmt::Display,
    shard: &ClientShard,
    local: &TrainConfig,
    idle_timeout: Duration,
) -> Result<ClientSummary> {
    if shard.samples.is_empty() {
        return Err(Error::EmptyShard);
    }
    let mut stream = TcpStream::connect(&addr).map_err(|e| match e.kind() {
        ErrorKind::ConnectionRefused => Error::ConnectionRefused(addr.to_string()),
        _ => Error::Io(e),
    })?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(idle_timeout))?;
    stream.set_write_timeout(Some(idle_timeout))?;
    let n_samples = u32::try_from(shard.samples.len())
        .map_err(|_| Error::InvalidConfig("shard too large for the wire format".into()))?;
    let hello = Hello {
        client_id: shard.client_id.clone(),
        n_samples,
    };
    write_frame(&mut stream, MsgType::Hello, &hello.encode())?;

    let mut last_round = 0u32;
    let mut last_global = None;
    loop {
        let frame = read_frame(&mut stream)?;
        match frame.msg_type {
            MsgType::Global => {
                let blob = WeightBlob::decode(&frame.payload)?;
                if blob.round <= last_round {
                    let msg = format!("round {} after round {last_round}", blob.round);
                    let _ = write_frame(&mut stream, MsgType::Error, msg.as_bytes());
                    return Err(Error::ProtocolViolation(msg));
                }
                let config = round_config(local, &shard.client_id, blob.round);
                let update = local_train(&blob.params, shard, blob.round, &config)?;
                let reply = WeightBlob {
                    round: blob.round,
                    n_samples,
                    params: update.params,
                };
                write_frame(&mut stream, MsgType::Update, &reply.encode())?;
                log::info!("{}: sent update for round {}", shard.client_id, blob.round);
                last_round = blob.round;
                last_global = Some(blob.params);
            }
            MsgType::Fin => {
                return Ok(ClientSummary {
                    rounds: last_round,
                    last_global,
                })
            }
            MsgType::Error => {
                return Err(Error::ProtocolViolation(format!(
                    "server reported: {}",
                    String::from_utf8_lossy(&frame.payload)
                )))
            }
            other => {
                let msg = format!("unexpected {other:?} from server");
                let _ = write_frame(&mut stream, MsgType::Error, msg.as_bytes());
                return Err(Error::ProtocolViolation(msg));
            }
        }
    }
}

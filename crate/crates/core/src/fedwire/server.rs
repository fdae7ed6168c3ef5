use std::collections::HashSet;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{read_frame, write_frame, Hello, MsgType, WeightBlob};
use super::DEFAULT_IDLE_TIMEOUT;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::fedavg::{aggregate, evaluate, ClientUpdate, FedConfig, FederationOutcome, RoundSummary};
use crate::nn::{ModelParams, TrainConfig};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub fed: FedConfig,
    pub train: TrainConfig,
    /// How long to wait for all clients to say HELLO.
    pub join_timeout: Duration,
    /// Read/write timeout on each client connection.
    pub idle_timeout: Duration,
}

impl ServerConfig {
    pub fn new(fed: FedConfig, train: TrainConfig) -> Self {
        Self {
            fed,
            train,
            join_timeout: DEFAULT_IDLE_TIMEOUT,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

struct Peer {
    hello: Hello,
    stream: TcpStream,
}

pub fn serve(addr: impl ToSocketAddrs, config: &ServerConfig, validation: &[Sample]) -> Result<FederationOutcome> {
    serve_listener(TcpListener::bind(addr)?, config, validation)
}

/// Runs the federation over already-bound `listener`.
///
/// Any protocol violation or lost connection aborts the run: connected clients
/// get an ERROR frame and the error is returned.
pub fn serve_listener(
    listener: TcpListener,
    config: &ServerConfig,
    validation: &[Sample],
) -> Result<FederationOutcome> {
    config.fed.validate()?;
    config.train.validate()?;
    let mut peers = accept_clients(&listener, config)?;
    let result = run_rounds(&mut peers, config, validation);
    match &result {
        Ok(_) => {
            for p in &mut peers {
                if let Err(e) = write_frame(&mut p.stream, MsgType::Fin, &[]) {
                    log::warn!("FIN to {} failed: {e}", p.hello.client_id);
                }
            }
        }
        Err(e) => {
            log::error!("federation aborted: {e}");
            let msg = e.to_string();
            for p in &mut peers {
                let _ = write_frame(&mut p.stream, MsgType::Error, msg.as_bytes());
            }
        }
    }
    result
}

fn accept_clients(listener: &TcpListener, config: &ServerConfig) -> Result<Vec<Peer>> {
    let expected = config.fed.n_clients;
    let deadline = Instant::now() + config.join_timeout;
    let mut peers: Vec<Peer> = Vec::with_capacity(expected);
    let mut ids = HashSet::new();
    listener.set_nonblocking(true)?;
    while peers.len() < expected {
        match listener.accept() {
            Ok((mut stream, addr)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                let remaining = deadline
                    .saturating_duration_since(Instant::now())
                    .max(Duration::from_millis(1));
                stream.set_read_timeout(Some(remaining.min(config.idle_timeout)))?;
                let frame = read_frame(&mut stream)?;
                let hello = match frame.msg_type {
                    MsgType::Hello => Hello::decode(&frame.payload)?,
                    other => {
                        let msg = format!("expected HELLO from {addr}, got {other:?}");
                        let _ = write_frame(&mut stream, MsgType::Error, msg.as_bytes());
                        return Err(Error::ProtocolViolation(msg));
                    }
                };
                if hello.n_samples == 0 || !ids.insert(hello.client_id.clone()) {
                    let msg = format!("rejected HELLO {hello:?}: duplicate id or empty shard");
                    let _ = write_frame(&mut stream, MsgType::Error, msg.as_bytes());
                    return Err(Error::ProtocolViolation(msg));
                }
                stream.set_read_timeout(Some(config.idle_timeout))?;
                stream.set_write_timeout(Some(config.idle_timeout))?;
                log::info!(
                    "client {} joined from {addr} with {} samples",
                    hello.client_id,
                    hello.n_samples
                );
                peers.push(Peer { hello, stream });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    for p in &mut peers {
                        let _ = write_frame(&mut p.stream, MsgType::Error, b"not enough clients joined");
                    }
                    return Err(Error::ClientCountTimeout {
                        connected: peers.len(),
                        expected,
                    });
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(peers)
}

fn receive_update(peer: &mut Peer, round: u32, global: &ModelParams) -> Result<ClientUpdate> {
    let id = &peer.hello.client_id;
    let frame = read_frame(&mut peer.stream)
        .map_err(|e| Error::ProtocolViolation(format!("lost connection to {id} in round {round}: {e}")))?;
    match frame.msg_type {
        MsgType::Update => {}
        MsgType::Error => {
            return Err(Error::ProtocolViolation(format!(
                "client {id} reported: {}",
                String::from_utf8_lossy(&frame.payload)
            )))
        }
        other => {
            return Err(Error::ProtocolViolation(format!(
                "expected UPDATE from {id}, got {other:?}"
            )))
        }
    }
    let blob = WeightBlob::decode(&frame.payload)?;
    if blob.round != round {
        return Err(Error::ProtocolViolation(format!(
            "client {id} sent an update for round {} during round {round}",
            blob.round
        )));
    }
    if blob.n_samples != peer.hello.n_samples {
        return Err(Error::ProtocolViolation(format!(
            "client {id} announced {} samples but reported {}",
            peer.hello.n_samples, blob.n_samples
        )));
    }
    if !blob.params.same_shape(global) {
        return Err(Error::ProtocolViolation(format!(
            "client {id} sent parameters of the wrong shape"
        )));
    }
    Ok(ClientUpdate {
        client_id: id.clone(),
        round,
        params: blob.params,
        n_samples: blob.n_samples as u64,
        train_accuracy: None,
    })
}

fn run_rounds(peers: &mut [Peer], config: &ServerConfig, validation: &[Sample]) -> Result<FederationOutcome> {
    let mut global = ModelParams::init(config.train.side, config.fed.seed);
    let total: u32 = peers.iter().map(|p| p.hello.n_samples).sum();
    let mut rounds = Vec::with_capacity(config.fed.n_rounds as usize);
    for round in 1..=config.fed.n_rounds {
        let payload = WeightBlob {
            round,
            n_samples: total,
            params: global.clone(),
        }
        .encode();
        for p in peers.iter_mut() {
            write_frame(&mut p.stream, MsgType::Global, &payload)?;
        }
        let results: Vec<Result<ClientUpdate>> = thread::scope(|s| {
            let handles: Vec<_> = peers
                .iter_mut()
                .map(|p| {
                    let g = &global;
                    s.spawn(move || receive_update(p, round, g))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("receiver thread panicked"))
                .collect()
        });
        let updates = results.into_iter().collect::<Result<Vec<_>>>()?;
        global = aggregate(&updates)?;
        let validation = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&global, validation)?)
        };
        log::info!(
            "round {round}/{} aggregated from {} clients, val acc {:?}",
            config.fed.n_rounds,
            updates.len(),
            validation.as_ref().map(|v| v.accuracy)
        );
        rounds.push(RoundSummary {
            round,
            train_accuracy: None,
            validation,
        });
    }
    Ok(FederationOutcome { params: global, rounds })
}

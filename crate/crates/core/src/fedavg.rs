//! In-process federated averaging: sharding, local training, weighted
//! aggregation, and the round loop shared with the network transport.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, HistoryRow};
use crate::nn::{fit, predict_samples, ModelParams, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub round: u32,
    pub params: ModelParams,
    pub n_samples: u64,
    /// Training accuracy of the last local epoch, when known.
    pub train_accuracy: Option<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub n_clients: usize,
    pub n_rounds: u32,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// 0 gives an IID split; 1 sorts shards by label. Not used by default runs.
    pub label_skew: f32,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            n_clients: 3,
            n_rounds: 30,
            local_epochs: 30,
            batch_size: 64,
            learning_rate: 0.006,
            seed: 0,
            label_skew: 0.0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.n_rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "clients, rounds, local epochs and batch size must all be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.label_skew) {
            return Err(Error::InvalidConfig(format!(
                "label skew {} outside [0, 1]",
                self.label_skew
            )));
        }
        Ok(())
    }

    /// Per-client training settings; `seed` is the federation seed and is
    /// re-derived per client and round by [`round_config`].
    pub fn local_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.local_epochs,
            seed: self.seed,
            ..base.clone()
        }
    }
}

/// `seed XOR H(client_id, round)`, with H the first 8 bytes of SHA-256.
pub fn client_seed(seed: u64, client_id: &str, round: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(client_id.as_bytes());
    h.update(round.to_le_bytes());
    let digest = h.finalize();
    seed ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// The local configuration a client trains with in `round`.
pub fn round_config(local: &TrainConfig, client_id: &str, round: u32) -> TrainConfig {
    TrainConfig {
        seed: client_seed(local.seed, client_id, round),
        ..local.clone()
    }
}

pub fn client_id(index: usize) -> String {
    format!("client-{index:03}")
}

/// Shuffles `0..n_items` and cuts it into `n_clients` contiguous runs whose
/// sizes differ by at most one. Each run is returned in ascending order.
pub fn partition_indices(n_items: usize, n_clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::InvalidConfig("at least one client is required".into()));
    }
    if n_items < n_clients {
        return Err(Error::TooFewSamples {
            needed: n_clients,
            actual: n_items,
        });
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(cut(order, n_clients))
}

fn cut(order: Vec<usize>, n_clients: usize) -> Vec<Vec<usize>> {
    let base = order.len() / n_clients;
    let extra = order.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for k in 0..n_clients {
        let len = base + usize::from(k < extra);
        let mut shard = order[start..start + len].to_vec();
        shard.sort_unstable();
        shards.push(shard);
        start += len;
    }
    shards
}

/// Like [`partition_indices`] but biased toward label-homogeneous shards.
pub fn partition_indices_skewed(labels: &[u8], n_clients: usize, seed: u64, skew: f32) -> Result<Vec<Vec<usize>>> {
    if skew == 0.0 {
        return partition_indices(labels.len(), n_clients, seed);
    }
    partition_indices(labels.len(), n_clients, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skew = skew as f64;
    let mut keyed: Vec<(f64, usize)> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| ((1.0 - skew) * rng.gen::<f64>() + skew * l as f64, i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(cut(keyed.into_iter().map(|(_, i)| i).collect(), n_clients))
}

pub fn partition(dataset: &[Sample], n_clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    let groups = partition_indices(dataset.len(), n_clients, seed)?;
    Ok(shards_from_groups(dataset, groups))
}

fn shards_from_groups(dataset: &[Sample], groups: Vec<Vec<usize>>) -> Vec<ClientShard> {
    groups
        .into_iter()
        .enumerate()
        .map(|(k, idx)| ClientShard {
            client_id: client_id(k),
            samples: idx.into_iter().map(|i| dataset[i].clone()).collect(),
        })
        .collect()
}

/// Trains a copy of `global` on the shard. `config.seed` seeds this client's
/// shuffling and dropout for the round.
pub fn local_train(
    global: &ModelParams,
    shard: &ClientShard,
    round: u32,
    config: &TrainConfig,
) -> Result<ClientUpdate> {
    if shard.samples.is_empty() {
        return Err(Error::EmptyShard);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let outcome = fit(global, &shard.samples, None, config, &mut rng)?;
    Ok(ClientUpdate {
        client_id: shard.client_id.clone(),
        round,
        params: outcome.params,
        n_samples: shard.samples.len() as u64,
        train_accuracy: outcome.history.last().map(|h| h.train_accuracy),
    })
}

/// Sample-count weighted mean of the update parameters.
///
/// Updates are summed in `client_id` order in f64 and rounded once to f32, so
/// the result does not depend on the order the updates arrive in.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::EmptyUpdateSet)?;
    for u in updates {
        if u.round != first.round {
            return Err(Error::RoundMismatch {
                expected: first.round,
                actual: u.round,
            });
        }
        if !u.params.same_shape(&first.params) {
            return Err(Error::ShapeMismatch(format!(
                "update from {} has different shapes",
                u.client_id
            )));
        }
        if u.n_samples == 0 {
            return Err(Error::InvalidConfig(format!(
                "update from {} has no samples",
                u.client_id
            )));
        }
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::InvalidConfig(format!(
            "duplicate update from {}",
            w[0].client_id
        )));
    }
    let total: u64 = sorted.iter().map(|u| u.n_samples).sum();
    let weights: Vec<f64> = sorted.iter().map(|u| u.n_samples as f64 / total as f64).collect();

    let mut out = first.params.clone();
    for (t, dst) in out.tensors_mut().into_iter().enumerate() {
        let mut acc = vec![0.0f64; dst.len()];
        for (u, &w) in sorted.iter().zip(&weights) {
            let src = u.params.tensors()[t].1.values();
            for (a, &v) in acc.iter_mut().zip(src) {
                *a += w * v as f64;
            }
        }
        for (d, a) in dst.values_mut().iter_mut().zip(acc) {
            *d = a as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u32,
    /// n-weighted mean of the clients' last-epoch training accuracy.
    pub train_accuracy: Option<f32>,
    /// Global model evaluated on the held-out validation set.
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub params: ModelParams,
    pub rounds: Vec<RoundSummary>,
}

impl FederationOutcome {
    pub fn history(&self) -> Vec<HistoryRow> {
        self.rounds
            .iter()
            .map(|r| HistoryRow {
                index: r.round as usize,
                train_accuracy: r.train_accuracy,
                val_accuracy: r.validation.as_ref().map(|v| v.accuracy),
            })
            .collect()
    }
}

pub fn weighted_train_accuracy(updates: &[ClientUpdate]) -> Option<f32> {
    let total: u64 = updates.iter().map(|u| u.n_samples).sum();
    let mut acc = 0.0f64;
    for u in updates {
        acc += u.train_accuracy? as f64 * u.n_samples as f64;
    }
    (total > 0).then(|| (acc / total as f64) as f32)
}

pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<EvalReport> {
    let pred = predict_samples(params, samples, 0.5)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    EvalReport::from_predictions(&pred.labels, &labels)
}

/// Shards `train` IID across `fed.n_clients` clients and runs the federation.
pub fn run_federation(
    train: &[Sample],
    validation: &[Sample],
    fed: &FedConfig,
    train_config: &TrainConfig,
) -> Result<FederationOutcome> {
    fed.validate()?;
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    let groups = partition_indices_skewed(&labels, fed.n_clients, fed.seed, fed.label_skew)?;
    run_federation_on_shards(&shards_from_groups(train, groups), validation, fed, train_config)
}

/// Round loop over pre-built shards: broadcast, train locally, aggregate, evaluate.
pub fn run_federation_on_shards(
    shards: &[ClientShard],
    validation: &[Sample],
    fed: &FedConfig,
    train_config: &TrainConfig,
) -> Result<FederationOutcome> {
    fed.validate()?;
    train_config.validate()?;
    if shards.len() != fed.n_clients {
        return Err(Error::InvalidConfig(format!(
            "{} shards for {} clients",
            shards.len(),
            fed.n_clients
        )));
    }
    let local = fed.local_config(train_config);
    let mut global = ModelParams::init(train_config.side, fed.seed);
    let mut rounds = Vec::with_capacity(fed.n_rounds as usize);
    for round in 1..=fed.n_rounds {
        let updates = shards
            .par_iter()
            .map(|shard| local_train(&global, shard, round, &round_config(&local, &shard.client_id, round)))
            .collect::<Result<Vec<_>>>()?;
        global = aggregate(&updates)?;
        let summary = RoundSummary {
            round,
            train_accuracy: weighted_train_accuracy(&updates),
            validation: if validation.is_empty() {
                None
            } else {
                Some(evaluate(&global, validation)?)
            },
        };
        log::info!(
            "round {round}/{}: train acc {:?}, val acc {:?}",
            fed.n_rounds,
            summary.train_accuracy,
            summary.validation.as_ref().map(|v| v.accuracy)
        );
        rounds.push(summary);
    }
    Ok(FederationOutcome { params: global, rounds })
}

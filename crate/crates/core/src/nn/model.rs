//! The classifier: 3x3 same-padded convolution (32 filters) with ReLU,
//! inverted dropout, flatten, and a two-way dense layer with a softmax head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{conv_plane, conv_plane_grad, dropout_mask, pad_image, softmax_in_place, KERNEL};
use super::tensor::Tensor;
use crate::dataset::{check_label, one_hot, stack_images, Sample};
use crate::error::{Error, Result};
use crate::imagization::{DEFAULT_SIDE, MIN_SIDE};

pub const FILTERS: usize = 32;
pub const CLASSES: usize = 2;
const CONV_FAN_IN: usize = KERNEL * KERNEL;

/// Mini-batches are evaluated in chunks of at most this many samples to bound
/// the size of the cached activations.
const CHUNK: usize = 16;

pub const TENSOR_NAMES: [&str; 4] = ["conv.kernels", "conv.bias", "dense.weights", "dense.bias"];

/// Width of the flattened feature vector for a given image side.
pub const fn flatten_width(side: usize) -> usize {
    FILTERS * side * side
}

/// Total trainable parameter count for a given image side.
pub const fn parameter_count(side: usize) -> usize {
    FILTERS * CONV_FAN_IN + FILTERS + CLASSES * flatten_width(side) + CLASSES
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv_kernels: Tensor,
    pub conv_bias: Tensor,
    pub dense_weights: Tensor,
    pub dense_bias: Tensor,
}

impl ModelParams {
    pub fn zeros(side: usize) -> Self {
        Self {
            conv_kernels: Tensor::zeros(&[FILTERS, 1, KERNEL, KERNEL]),
            conv_bias: Tensor::zeros(&[FILTERS]),
            dense_weights: Tensor::zeros(&[CLASSES, flatten_width(side)]),
            dense_bias: Tensor::zeros(&[CLASSES]),
        }
    }

    /// Seeded uniform initialization: conv kernels in `±sqrt(6/9)`, dense
    /// weights in `±sqrt(6/(fan_in+fan_out))`, biases zero.
    pub fn init(side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(side);
        let conv_bound = (6.0 / CONV_FAN_IN as f32).sqrt();
        for v in p.conv_kernels.values_mut() {
            *v = rng.gen_range(-conv_bound..conv_bound);
        }
        let dense_bound = (6.0 / (flatten_width(side) + CLASSES) as f32).sqrt();
        for v in p.dense_weights.values_mut() {
            *v = rng.gen_range(-dense_bound..dense_bound);
        }
        p
    }

    /// Assembles parameters from tensors, checking every shape.
    pub fn from_tensors(
        conv_kernels: Tensor,
        conv_bias: Tensor,
        dense_weights: Tensor,
        dense_bias: Tensor,
    ) -> Result<Self> {
        let width = dense_weights.dims().get(1).copied().unwrap_or(0);
        let side = side_from_width(width)
            .ok_or_else(|| Error::ShapeMismatch(format!("dense width {width} is not 32*side^2")))?;
        let p = Self {
            conv_kernels,
            conv_bias,
            dense_weights,
            dense_bias,
        };
        if !p.same_shape(&Self::zeros(side)) {
            return Err(Error::ShapeMismatch(format!(
                "parameter shapes {:?} do not match the model at side {side}",
                p.tensors().map(|(_, t)| t.dims().to_vec())
            )));
        }
        Ok(p)
    }

    pub fn side(&self) -> usize {
        side_from_width(self.dense_weights.dims()[1]).expect("validated on construction")
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            (TENSOR_NAMES[0], &self.conv_kernels),
            (TENSOR_NAMES[1], &self.conv_bias),
            (TENSOR_NAMES[2], &self.dense_weights),
            (TENSOR_NAMES[3], &self.dense_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.conv_kernels,
            &mut self.conv_bias,
            &mut self.dense_weights,
            &mut self.dense_bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .all(|((_, a), (_, b))| a.same_shape(b))
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.same_shape(other)
            && self
                .tensors()
                .iter()
                .zip(other.tensors().iter())
                .all(|((_, a), (_, b))| {
                    a.values()
                        .iter()
                        .zip(b.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }
}

fn side_from_width(width: usize) -> Option<usize> {
    if width == 0 || !width.is_multiple_of(FILTERS) {
        return None;
    }
    let area = width / FILTERS;
    let side = (area as f64).sqrt().round() as usize;
    (side * side == area).then_some(side)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f32,
    pub side: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.006,
            batch_size: 64,
            epochs: 10,
            dropout_rate: 0.25,
            side: DEFAULT_SIDE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted: it freezes training, which the equivalence checks rely on.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidRate(self.dropout_rate));
        }
        if self.side < MIN_SIDE {
            return Err(Error::InvalidSide(self.side));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from a forward pass.
///
/// Per-sample tensors are `[N, 32, side, side]`; `flattened` is `[N, 32*side^2]`.
/// `dropout_mask` holds the multiplier applied to each activation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub pre_activations: Tensor,
    pub activations: Tensor,
    pub dropout_mask: Tensor,
    pub flattened: Tensor,
    pub logits: Tensor,
    pub probabilities: Tensor,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.logits.dims()[0]
    }
}

struct SampleForward {
    pre: Vec<f32>,
    act: Vec<f32>,
    mask: Vec<f32>,
    flat: Vec<f32>,
    logits: [f32; CLASSES],
}

fn sample_forward(params: &ModelParams, pixels: &[f32], side: usize, dropout: Option<(f32, u64)>) -> SampleForward {
    let hw = side * side;
    let padded = pad_image(pixels, side, side);
    let mut pre = vec![0.0f32; FILTERS * hw];
    let kernels = params.conv_kernels.values();
    let bias = params.conv_bias.values();
    for (f, plane) in pre.chunks_mut(hw).enumerate() {
        conv_plane(&padded, side, side, &kernels[f * 9..f * 9 + 9], bias[f], plane);
    }
    let act: Vec<f32> = pre.iter().map(|&v| v.max(0.0)).collect();
    let mask = match dropout {
        Some((rate, seed)) if rate > 0.0 => dropout_mask(act.len(), rate, &mut ChaCha8Rng::seed_from_u64(seed)),
        _ => vec![1.0; act.len()],
    };
    let flat: Vec<f32> = act.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    let width = flat.len();
    let weights = params.dense_weights.values();
    let mut logits = [0.0f32; CLASSES];
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = &weights[c * width..(c + 1) * width];
        let mut acc = 0.0f32;
        for (&w, &x) in row.iter().zip(&flat) {
            acc += w * x;
        }
        *logit = acc + params.dense_bias.values()[c];
    }
    SampleForward {
        pre,
        act,
        mask,
        flat,
        logits,
    }
}

fn check_batch(params: &ModelParams, batch: &Tensor) -> Result<(usize, usize)> {
    let side = params.side();
    match batch.dims() {
        [n, 1, h, w] if *h == side && *w == side => Ok((*n, side)),
        d => Err(Error::ShapeMismatch(format!(
            "batch must be [N,1,{side},{side}], got {d:?}"
        ))),
    }
}

/// Runs the network on `batch` (`[N, 1, side, side]`).
///
/// In training mode one seed per sample is drawn from `rng` for that sample's
/// dropout mask; in eval mode `rng` is untouched.
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Tensor,
    config: &TrainConfig,
    rng: &mut R,
    training: bool,
) -> Result<ForwardTrace> {
    let (n, side) = check_batch(params, batch)?;
    if !(0.0..1.0).contains(&config.dropout_rate) {
        return Err(Error::InvalidRate(config.dropout_rate));
    }
    let hw = side * side;
    let dropout: Vec<Option<(f32, u64)>> = (0..n)
        .map(|_| training.then(|| (config.dropout_rate, rng.gen::<u64>())))
        .collect();
    let outs: Vec<SampleForward> = (0..n)
        .into_par_iter()
        .map(|i| sample_forward(params, &batch.values()[i * hw..(i + 1) * hw], side, dropout[i]))
        .collect();

    let width = flatten_width(side);
    let mut pre = Vec::with_capacity(n * width);
    let mut act = Vec::with_capacity(n * width);
    let mut mask = Vec::with_capacity(n * width);
    let mut flat = Vec::with_capacity(n * width);
    let mut logits = Vec::with_capacity(n * CLASSES);
    for o in outs {
        pre.extend_from_slice(&o.pre);
        act.extend_from_slice(&o.act);
        mask.extend_from_slice(&o.mask);
        flat.extend_from_slice(&o.flat);
        logits.extend_from_slice(&o.logits);
    }
    let mut probs = logits.clone();
    for row in probs.chunks_mut(CLASSES) {
        softmax_in_place(row);
    }
    let plane_dims = vec![n, FILTERS, side, side];
    Ok(ForwardTrace {
        input: batch.clone(),
        pre_activations: Tensor::new(plane_dims.clone(), pre)?,
        activations: Tensor::new(plane_dims.clone(), act)?,
        dropout_mask: Tensor::new(plane_dims, mask)?,
        flattened: Tensor::new(vec![n, width], flat)?,
        logits: Tensor::new(vec![n, CLASSES], logits)?,
        probabilities: Tensor::new(vec![n, CLASSES], probs)?,
    })
}

/// Eval-mode forward pass that needs no random source.
pub fn forward_eval(params: &ModelParams, batch: &Tensor) -> Result<ForwardTrace> {
    let config = TrainConfig {
        dropout_rate: 0.0,
        ..TrainConfig::default()
    };
    forward(params, batch, &config, &mut ChaCha8Rng::seed_from_u64(0), false)
}

/// Mean categorical cross-entropy and its exact gradient w.r.t. every parameter.
pub fn loss_and_grad(trace: &ForwardTrace, labels: &Tensor, params: &ModelParams) -> Result<(f32, ModelParams)> {
    let n = trace.batch_len();
    if labels.dims() != [n, CLASSES] {
        return Err(Error::ShapeMismatch(format!(
            "labels must be [{n},{CLASSES}], got {:?}",
            labels.dims()
        )));
    }
    if trace.input.dims()[0] != n || trace.flattened.dims()[1] != params.dense_weights.dims()[1] {
        return Err(Error::ShapeMismatch("trace does not match parameters".into()));
    }
    for row in labels.values().chunks(CLASSES) {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != CLASSES - 1 {
            return Err(Error::ShapeMismatch(format!("label row {row:?} is not one-hot")));
        }
    }

    let side = params.side();
    let hw = side * side;
    let width = flatten_width(side);
    let inv_n = 1.0 / n as f32;

    let mut loss = 0.0f32;
    let mut dlogits = vec![0.0f32; n * CLASSES];
    for i in 0..n {
        let h = &trace.logits.values()[i * CLASSES..(i + 1) * CLASSES];
        let y = &labels.values()[i * CLASSES..(i + 1) * CLASSES];
        let z = &trace.probabilities.values()[i * CLASSES..(i + 1) * CLASSES];
        let max = h.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let log_sum = h.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
        for c in 0..CLASSES {
            if y[c] == 1.0 {
                loss -= h[c] - max - log_sum;
            }
            dlogits[i * CLASSES + c] = (z[c] - y[c]) * inv_n;
        }
    }
    loss *= inv_n;

    let mut grads = ModelParams::zeros(side);

    for c in 0..CLASSES {
        grads.dense_bias.values_mut()[c] = (0..n).map(|i| dlogits[i * CLASSES + c]).sum();
    }

    // Dense weights: parallel over columns, samples summed in ascending order.
    let flat = trace.flattened.values();
    let dw = grads.dense_weights.values_mut();
    let (row0, row1) = dw.split_at_mut(width);
    const COLS: usize = 4096;
    row0.par_chunks_mut(COLS)
        .zip(row1.par_chunks_mut(COLS))
        .enumerate()
        .for_each(|(chunk, (g0, g1))| {
            let start = chunk * COLS;
            for i in 0..n {
                let x = &flat[i * width + start..i * width + start + g0.len()];
                let (d0, d1) = (dlogits[i * CLASSES], dlogits[i * CLASSES + 1]);
                for ((a, b), &v) in g0.iter_mut().zip(g1.iter_mut()).zip(x) {
                    *a += d0 * v;
                    *b += d1 * v;
                }
            }
        });

    // Convolution: per-sample, per-filter partial gradients, then an ordered reduction.
    let weights = params.dense_weights.values();
    let per_sample: Vec<Vec<[f32; 10]>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let padded = pad_image(&trace.input.values()[i * hw..(i + 1) * hw], side, side);
            let (d0, d1) = (dlogits[i * CLASSES], dlogits[i * CLASSES + 1]);
            let pre = &trace.pre_activations.values()[i * width..(i + 1) * width];
            let mask = &trace.dropout_mask.values()[i * width..(i + 1) * width];
            let mut d_pre = vec![0.0f32; hw];
            (0..FILTERS)
                .map(|f| {
                    let off = f * hw;
                    for (k, g) in d_pre.iter_mut().enumerate() {
                        let j = off + k;
                        *g = if pre[j] > 0.0 {
                            (d0 * weights[j] + d1 * weights[width + j]) * mask[j]
                        } else {
                            0.0
                        };
                    }
                    let mut acc = [0.0f32; 10];
                    conv_plane_grad(&padded, side, side, &d_pre, &mut acc);
                    acc
                })
                .collect()
        })
        .collect();
    let gk = grads.conv_kernels.values_mut();
    for sample in &per_sample {
        for (f, acc) in sample.iter().enumerate() {
            for (k, &v) in acc[..9].iter().enumerate() {
                gk[f * 9 + k] += v;
            }
        }
    }
    let gb = grads.conv_bias.values_mut();
    for sample in &per_sample {
        for (f, acc) in sample.iter().enumerate() {
            gb[f] += acc[9];
        }
    }

    Ok((loss, grads))
}

/// `p - learning_rate * g`, elementwise.
pub fn sgd_step(params: &ModelParams, grads: &ModelParams, learning_rate: f32) -> Result<ModelParams> {
    let mut next = params.clone();
    apply_sgd(&mut next, grads, learning_rate)?;
    Ok(next)
}

pub(crate) fn apply_sgd(params: &mut ModelParams, grads: &ModelParams, learning_rate: f32) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::ShapeMismatch("gradient shapes differ from parameters".into()));
    }
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate {learning_rate} must be >= 0"
        )));
    }
    for (p, (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (pv, &gv) in p.values_mut().iter_mut().zip(g.values()) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f32,
    /// Accuracy of the training-mode predictions seen during the epoch.
    pub train_accuracy: f32,
    pub val_accuracy: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Mini-batch SGD over shuffled epochs. The final short batch is kept.
pub fn fit<R: Rng + ?Sized>(
    initial: &ModelParams,
    train: &[Sample],
    validation: Option<&[Sample]>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let side = initial.side();
    if side != config.side {
        return Err(Error::ShapeMismatch(format!(
            "model side {side} differs from configured side {}",
            config.side
        )));
    }
    check_samples(train, side)?;
    if let Some(val) = validation {
        check_samples(val, side)?;
    }

    let mut params = initial.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut total: Option<ModelParams> = None;
            for chunk in batch.chunks(CHUNK) {
                let input = stack_images(chunk.iter().map(|&i| &train[i].image))?;
                let labels: Vec<u8> = chunk.iter().map(|&i| train[i].label).collect();
                let trace = forward(&params, &input, config, rng, true)?;
                let (loss, mut grads) = loss_and_grad(&trace, &one_hot(&labels)?, &params)?;
                loss_sum += loss as f64 * chunk.len() as f64;
                correct += labels_from_probabilities(&trace.probabilities, 0.5)
                    .iter()
                    .zip(&labels)
                    .filter(|(p, l)| p == l)
                    .count();
                total = Some(match total {
                    None if chunk.len() == batch.len() => grads,
                    None => {
                        scale(&mut grads, chunk.len() as f32 / batch.len() as f32);
                        grads
                    }
                    Some(mut acc) => {
                        let w = chunk.len() as f32 / batch.len() as f32;
                        for (a, (_, g)) in acc.tensors_mut().into_iter().zip(grads.tensors()) {
                            for (av, &gv) in a.values_mut().iter_mut().zip(g.values()) {
                                *av += w * gv;
                            }
                        }
                        acc
                    }
                });
            }
            apply_sgd(&mut params, &total.expect("batch is non-empty"), config.learning_rate)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}")));
        }
        let val_accuracy = match validation {
            Some(val) if !val.is_empty() => Some(accuracy(&params, val)?),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            loss: (loss_sum / train.len() as f64) as f32,
            train_accuracy: correct as f32 / train.len() as f32,
            val_accuracy,
        };
        log::debug!("epoch {epoch}: {stats:?}");
        history.push(stats);
    }
    Ok(FitOutcome { params, history })
}

fn scale(p: &mut ModelParams, w: f32) {
    for t in p.tensors_mut() {
        for v in t.values_mut() {
            *v *= w;
        }
    }
}

fn check_samples(samples: &[Sample], side: usize) -> Result<()> {
    for s in samples {
        check_label(s.label)?;
        if s.image.side() != side {
            return Err(Error::ShapeMismatch(format!(
                "sample image side {} differs from model side {side}",
                s.image.side()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// `[N, 2]` class probabilities.
    pub probabilities: Tensor,
}

impl Prediction {
    pub fn ransomware_probability(&self, i: usize) -> f32 {
        self.probabilities.values()[i * CLASSES + 1]
    }
}

/// Class 1 only when its probability is strictly above `threshold`; ties go to class 0.
pub fn labels_from_probabilities(probabilities: &Tensor, threshold: f32) -> Vec<u8> {
    probabilities
        .values()
        .chunks(CLASSES)
        .map(|row| u8::from(row[1] > threshold))
        .collect()
}

/// Eval-mode classification of a `[N, 1, side, side]` batch.
pub fn predict(params: &ModelParams, batch: &Tensor, threshold: f32) -> Result<Prediction> {
    let (n, side) = check_batch(params, batch)?;
    let hw = side * side;
    predict_pixels(
        params,
        side,
        (0..n).map(|i| &batch.values()[i * hw..(i + 1) * hw]).collect(),
        threshold,
    )
}

pub fn predict_samples(params: &ModelParams, samples: &[Sample], threshold: f32) -> Result<Prediction> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let side = params.side();
    check_samples(samples, side)?;
    predict_pixels(
        params,
        side,
        samples.iter().map(|s| s.image.pixels()).collect(),
        threshold,
    )
}

fn predict_pixels(params: &ModelParams, side: usize, inputs: Vec<&[f32]>, threshold: f32) -> Result<Prediction> {
    let logits: Vec<[f32; CLASSES]> = inputs
        .par_iter()
        .map(|px| sample_forward(params, px, side, None).logits)
        .collect();
    let mut probs: Vec<f32> = logits.into_iter().flatten().collect();
    for row in probs.chunks_mut(CLASSES) {
        softmax_in_place(row);
    }
    let probabilities = Tensor::new(vec![inputs.len(), CLASSES], probs)?;
    Ok(Prediction {
        labels: labels_from_probabilities(&probabilities, threshold),
        probabilities,
    })
}

pub fn accuracy(params: &ModelParams, samples: &[Sample]) -> Result<f32> {
    let pred = predict_samples(params, samples, 0.5)?;
    let correct = pred.labels.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(correct as f32 / samples.len() as f32)
}

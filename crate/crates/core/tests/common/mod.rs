#![allow(dead_code)]

use fedransom::dataset::{one_hot, stack_images, Sample};
use fedransom::imagization::bytes_to_image;
use fedransom::nn::{forward, loss_and_grad, ModelParams, TrainConfig, FILTERS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line f64 re-derivation of the network's loss, written with explicit
/// bounds checks instead of a padded buffer. Used only as a finite-difference oracle.
pub struct ReferenceNet {
    pub side: usize,
    /// conv kernels [32*9], conv bias [32], dense [2*width], dense bias [2], concatenated.
    pub theta: Vec<f64>,
}

impl ReferenceNet {
    pub fn from_params(p: &ModelParams) -> Self {
        let theta = p
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.values().iter().map(|&v| v as f64))
            .collect();
        Self { side: p.side(), theta }
    }

    fn width(&self) -> usize {
        FILTERS * self.side * self.side
    }

    /// Mean cross-entropy over the batch; `masks[i]` multiplies sample i's activations.
    #[allow(clippy::needless_range_loop)]
    pub fn loss(&self, inputs: &[Vec<f64>], masks: &[Vec<f64>], labels: &[usize]) -> f64 {
        let s = self.side as isize;
        let width = self.width();
        let k = &self.theta[..FILTERS * 9];
        let kb = &self.theta[FILTERS * 9..FILTERS * 10];
        let w = &self.theta[FILTERS * 10..FILTERS * 10 + 2 * width];
        let wb = &self.theta[FILTERS * 10 + 2 * width..];
        let mut total = 0.0;
        for ((img, mask), &label) in inputs.iter().zip(masks).zip(labels) {
            let mut h = [wb[0], wb[1]];
            for f in 0..FILTERS {
                for y in 0..s {
                    for x in 0..s {
                        let mut z = kb[f];
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (yy, xx) = (y + dy, x + dx);
                                if yy >= 0 && yy < s && xx >= 0 && xx < s {
                                    let kidx = f * 9 + ((dy + 1) * 3 + (dx + 1)) as usize;
                                    z += k[kidx] * img[(yy * s + xx) as usize];
                                }
                            }
                        }
                        let j = f * (s * s) as usize + (y * s + x) as usize;
                        let a = if z > 0.0 { z } else { 0.0 } * mask[j];
                        h[0] += w[j] * a;
                        h[1] += w[width + j] * a;
                    }
                }
            }
            let m = h[0].max(h[1]);
            let lse = m + ((h[0] - m).exp() + (h[1] - m).exp()).ln();
            total += lse - h[label];
        }
        total / inputs.len() as f64
    }

    /// Central differences of `loss` w.r.t. every parameter.
    pub fn numeric_grad(&mut self, inputs: &[Vec<f64>], masks: &[Vec<f64>], labels: &[usize], delta: f64) -> Vec<f64> {
        (0..self.theta.len())
            .map(|i| {
                let orig = self.theta[i];
                self.theta[i] = orig + delta;
                let up = self.loss(inputs, masks, labels);
                self.theta[i] = orig - delta;
                let down = self.loss(inputs, masks, labels);
                self.theta[i] = orig;
                (up - down) / (2.0 * delta)
            })
            .collect()
    }
}

/// Images whose top half is uniform noise for class 1 and a low, smooth ramp for class 0.
pub fn separable_samples(n: usize, side: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let bytes: Vec<u8> = (0..side * side)
                .map(|j| {
                    if label == 1 {
                        rng.gen()
                    } else {
                        ((j % side) as u8 / 4).wrapping_add(rng.gen_range(0..8))
                    }
                })
                .collect();
            Sample::new(bytes_to_image(&bytes, side).unwrap(), label).unwrap()
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Max relative error between analytic gradients and f64 central differences
/// (delta 1e-3) on a 4-sample batch.
pub fn gradient_check_error(side: usize, seed: u64, dropout_rate: f32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Pixels in steps of 0.2, kernels in steps of 0.05 and biases at odd multiples
    // of 0.005 keep every pre-activation at least 5e-3 from the ReLU kink, so a
    // 1e-3 perturbation of any conv parameter never crosses it.
    let mut params = ModelParams::init(side, seed);
    for v in params.conv_kernels.values_mut() {
        *v = rng.gen_range(-16i32..=16) as f32 * 0.05;
    }
    for v in params.conv_bias.values_mut() {
        *v = (rng.gen_range(-30i32..30) as f32 + 0.5) * 0.01;
    }
    for v in params.dense_bias.values_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    let n = 4;
    let inputs: Vec<Vec<u8>> = (0..n)
        .map(|_| (0..side * side).map(|_| 51 * rng.gen_range(0u8..=5)).collect())
        .collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let images: Vec<_> = inputs
        .iter()
        .map(|bytes| bytes_to_image(bytes, side).unwrap())
        .collect();
    let batch = stack_images(&images).unwrap();
    let config = TrainConfig {
        side,
        dropout_rate,
        ..TrainConfig::default()
    };
    let trace = forward(&params, &batch, &config, &mut rng, true).unwrap();
    let (_, grads) = loss_and_grad(&trace, &one_hot(&labels).unwrap(), &params).unwrap();

    let width = 32 * side * side;
    let inputs64: Vec<Vec<f64>> = images
        .iter()
        .map(|im| im.pixels().iter().map(|&v| v as f64).collect())
        .collect();
    let masks: Vec<Vec<f64>> = trace
        .dropout_mask
        .values()
        .chunks(width)
        .map(|m| m.iter().map(|&v| v as f64).collect())
        .collect();
    let labels_usize: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let mut reference = ReferenceNet::from_params(&params);
    let numeric = reference.numeric_grad(&inputs64, &masks, &labels_usize, 1e-3);
    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.values().iter().map(|&v| v as f64))
        .collect();
    assert_eq!(analytic.len(), numeric.len());
    max_relative_error(&analytic, &numeric)
}

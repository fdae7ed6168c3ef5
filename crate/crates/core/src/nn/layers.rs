//! Stateless layer primitives used by the model.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Normalized exponential over the last axis, shifted by the row max.
///
/// Accepts a single logit vector `[M]` or a batch `[N, M]`.
pub fn softmax_output(h: &Tensor) -> Tensor {
    let m = *h.dims().last().expect("tensor has at least one dim");
    let mut out = h.clone();
    for row in out.values_mut().chunks_mut(m) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Stride-1, zero-padded 3x3 cross-correlation of a single-channel image.
///
/// `input` is `[1, H, W]`, `kernels` is `[F, 1, 3, 3]`, `bias` is `[F]`;
/// the result is `[F, H, W]`.
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (h, w) = match input.dims() {
        [1, h, w] if *h >= KERNEL && *w >= KERNEL => (*h, *w),
        d => {
            return Err(Error::ShapeMismatch(format!(
                "conv input must be [1,H>=3,W>=3], got {d:?}"
            )))
        }
    };
    let filters = match kernels.dims() {
        [f, 1, KERNEL, KERNEL] => *f,
        d => {
            return Err(Error::ShapeMismatch(format!(
                "conv kernels must be [F,1,3,3], got {d:?}"
            )))
        }
    };
    if bias.dims() != [filters] {
        return Err(Error::ShapeMismatch(format!(
            "conv bias must be [{filters}], got {:?}",
            bias.dims()
        )));
    }
    let padded = pad_image(input.values(), h, w);
    let mut out = vec![0.0f32; filters * h * w];
    for (f, plane) in out.chunks_mut(h * w).enumerate() {
        conv_plane(
            &padded,
            h,
            w,
            &kernels.values()[f * 9..f * 9 + 9],
            bias.values()[f],
            plane,
        );
    }
    Tensor::new(vec![filters, h, w], out)
}

/// Copies an `h x w` image into an `(h+2) x (w+2)` zero-bordered buffer.
pub(crate) fn pad_image(pixels: &[f32], h: usize, w: usize) -> Vec<f32> {
    let pw = w + 2;
    let mut padded = vec![0.0f32; (h + 2) * pw];
    for y in 0..h {
        padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&pixels[y * w..(y + 1) * w]);
    }
    padded
}

pub(crate) fn conv_plane(padded: &[f32], h: usize, w: usize, kernel: &[f32], bias: f32, out: &mut [f32]) {
    let pw = w + 2;
    for y in 0..h {
        let r0 = &padded[y * pw..y * pw + pw];
        let r1 = &padded[(y + 1) * pw..(y + 1) * pw + pw];
        let r2 = &padded[(y + 2) * pw..(y + 2) * pw + pw];
        let row = &mut out[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = bias;
            acc += kernel[0] * r0[x] + kernel[1] * r0[x + 1] + kernel[2] * r0[x + 2];
            acc += kernel[3] * r1[x] + kernel[4] * r1[x + 1] + kernel[5] * r1[x + 2];
            acc += kernel[6] * r2[x] + kernel[7] * r2[x + 1] + kernel[8] * r2[x + 2];
            *o = acc;
        }
    }
}

/// Accumulates the kernel and bias gradient of one filter plane.
///
/// `grad_out` is the gradient w.r.t. the pre-activation plane; writes 9 kernel
/// entries followed by the bias entry into `grad`.
pub(crate) fn conv_plane_grad(padded: &[f32], h: usize, w: usize, grad_out: &[f32], grad: &mut [f32; 10]) {
    let pw = w + 2;
    for y in 0..h {
        let g_row = &grad_out[y * w..(y + 1) * w];
        for ky in 0..KERNEL {
            let p_row = &padded[(y + ky) * pw..(y + ky) * pw + pw];
            for kx in 0..KERNEL {
                let mut acc = 0.0f32;
                for (x, &g) in g_row.iter().enumerate() {
                    acc += g * p_row[x + kx];
                }
                grad[ky * KERNEL + kx] += acc;
            }
        }
        grad[9] += g_row.iter().sum::<f32>();
    }
}

/// Inverted dropout. Returns the output and the per-element multiplier that
/// produced it (0 for dropped elements, `1/(1-rate)` for survivors).
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f32, rng: &mut R, training: bool) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), Tensor::filled(x.dims(), 1.0)));
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let out = x.values().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((
        Tensor::new(x.dims().to_vec(), out)?,
        Tensor::new(x.dims().to_vec(), mask)?,
    ))
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f32, rng: &mut R) -> Vec<f32> {
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { scale })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_cases() {
        let x = Tensor::from_slice(&[-1.0, 0.0, 2.5]);
        assert_eq!(relu(&x).values(), &[0.0, 0.0, 2.5]);
        let neg = Tensor::from_slice(&[-3.0, -0.1, -7.0]);
        assert!(relu(&neg).values().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_slice(&[0.0, 0.1, 7.0]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn softmax_cases() {
        let z = softmax_output(&Tensor::from_slice(&[0.0, 0.0]));
        assert_eq!(z.values(), &[0.5, 0.5]);

        let z = softmax_output(&Tensor::from_slice(&[2f32.ln(), 0.0]));
        assert!((z.values()[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((z.values()[1] - 1.0 / 3.0).abs() < 1e-6);

        let z = softmax_output(&Tensor::from_slice(&[1000.0, 0.0]));
        assert!(z.is_finite());
        assert!((z.values()[0] - 1.0).abs() < 1e-6);
        assert!(z.values()[1] < 1e-6);
    }

    #[test]
    fn conv_all_ones_hand_computed() {
        let input = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d_same(&input, &k, &b).unwrap();
        assert_eq!(out.dims(), &[1, 3, 3]);
        assert_eq!(out.values(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let vals: Vec<f32> = (0..35).map(|i| (i as f32 * 0.37).sin()).collect();
        let input = Tensor::new(vec![1, 5, 7], vals).unwrap();
        let mut kv = vec![0.0; 9];
        kv[4] = 1.0;
        let k = Tensor::new(vec![1, 1, 3, 3], kv).unwrap();
        let out = conv2d_same(&input, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.values(), input.values());
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let input = Tensor::zeros(&[1, 4, 4]);
        let k = Tensor::filled(&[2, 1, 3, 3], 0.7);
        let b = Tensor::from_slice(&[1.5, -2.0]);
        let out = conv2d_same(&input, &k, &b).unwrap();
        assert!(out.values()[..16].iter().all(|&v| v == 1.5));
        assert!(out.values()[16..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn conv_shape_errors() {
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_same(&Tensor::zeros(&[2, 4, 4]), &k, &b).is_err());
        assert!(conv2d_same(&Tensor::zeros(&[1, 2, 4]), &k, &b).is_err());
        assert!(conv2d_same(&Tensor::zeros(&[1, 4, 4]), &k, &Tensor::zeros(&[2])).is_err());
        assert!(conv2d_same(&Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[1, 1, 2, 2]), &b).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_slice(&[1.0, -2.0, 3.0]);
        let (y, m) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        assert!(m.values().iter().all(|&v| v == 1.0));
        let (y, m) = dropout(&x, 0.9, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(m.values().iter().all(|&v| v == 1.0));
        assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(Error::InvalidRate(_))));
        assert!(matches!(dropout(&x, -0.1, &mut rng, true), Err(Error::InvalidRate(_))));
    }

    #[test]
    fn dropout_large_sample_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let x = Tensor::new(vec![n], (0..n).map(|i| 1.0 + (i % 7) as f32).collect()).unwrap();
        let (y, m) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let kept = m.values().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((0.497..=0.503).contains(&kept), "kept {kept}");
        let mean_in = x.values().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let mean_out = y.values().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        assert!((mean_out - mean_in).abs() / mean_in < 0.01);
    }

    proptest! {
        #[test]
        fn relu_idempotent(v in prop::collection::vec(-100f32..100.0, 1..64)) {
            let x = Tensor::from_slice(&v);
            let once = relu(&x);
            prop_assert_eq!(relu(&once), once);
        }

        #[test]
        fn softmax_rows_normalized(v in prop::collection::vec(-50f32..50.0, 2..=2)) {
            let z = softmax_output(&Tensor::from_slice(&v));
            let s: f32 = z.values().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(z.values().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

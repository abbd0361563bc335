//! Central finite-difference check of [`backward`](crate::nn::backward).
//!
//! Perturbing all ~68k parameters of the full network is too slow to be
//! useful, so each weight matrix contributes a random sample of coordinates
//! while every bias is checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{backward, forward, softmax_xent, Batch, Mlp, DEFAULT_HIDDEN, INPUT_DIM, NUM_CLASSES};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor for the relative error; keeps exact zeros from dividing
/// by zero without hiding disagreement on gradients of meaningful size.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn loss_of(net: &Mlp, batch: &Batch) -> Result<f64> {
    Ok(softmax_xent(&forward(net, batch)?, batch.labels()).0)
}

fn param_mut(net: &mut Mlp, layer: usize, is_bias: bool, idx: usize) -> &mut f64 {
    let l = &mut net.layers_mut()[layer];
    if is_bias {
        &mut l.bias[idx]
    } else {
        &mut l.weights[idx]
    }
}

fn central_difference(
    probe: &mut Mlp,
    batch: &Batch,
    eps: f64,
    (layer, is_bias, idx): (usize, bool, usize),
) -> Result<f64> {
    let orig = *param_mut(probe, layer, is_bias, idx);
    *param_mut(probe, layer, is_bias, idx) = orig + eps;
    let plus = loss_of(probe, batch)?;
    *param_mut(probe, layer, is_bias, idx) = orig - eps;
    let minus = loss_of(probe, batch)?;
    *param_mut(probe, layer, is_bias, idx) = orig;
    Ok((plus - minus) / (2.0 * eps))
}

/// Compares analytic and central-difference gradients on `weight_samples`
/// random coordinates of every weight matrix plus all biases.
pub fn check<R: Rng + ?Sized>(
    net: &Mlp,
    batch: &Batch,
    eps: f64,
    weight_samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, grads) = backward(net, batch)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    for layer in 0..net.layers().len() {
        let n_w = net.layers()[layer].weights.len();
        let picks: Vec<usize> = if weight_samples >= n_w {
            (0..n_w).collect()
        } else {
            (0..weight_samples).map(|_| rng.random_range(0..n_w)).collect()
        };
        for idx in picks {
            let numeric = central_difference(&mut probe, batch, eps, (layer, false, idx))?;
            worst = worst.max(relative_error(grads.layers[layer].weights[idx], numeric));
            checked += 1;
        }
        for idx in 0..net.layers()[layer].bias.len() {
            let numeric = central_difference(&mut probe, batch, eps, (layer, true, idx))?;
            worst = worst.max(relative_error(grads.layers[layer].bias[idx], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        coords_checked: checked,
    })
}

/// Random 784-80-60-10 network with random biases, so every layer has
/// nonzero gradients, plus a random batch of `batch_size` images.
pub fn random_instance<R: Rng + ?Sized>(batch_size: usize, rng: &mut R) -> (Mlp, Batch) {
    let mut net = Mlp::new(&[INPUT_DIM, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], NUM_CLASSES], rng);
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let images = (0..batch_size * INPUT_DIM)
        .map(|_| if rng.random_bool(0.25) { rng.random::<f64>() } else { 0.0 })
        .collect();
    let labels = (0..batch_size).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
    let batch = Batch::new(images, labels, INPUT_DIM).expect("generated batch is valid");
    (net, batch)
}

/// Runs `instances` independent checks with 6-sample batches.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let (net, batch) = random_instance(6, &mut rng);
            check(&net, &batch, DEFAULT_EPSILON, 60, &mut rng)
        })
        .collect()
}

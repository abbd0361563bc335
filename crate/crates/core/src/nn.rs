//! Feed-forward network engine.
//!
//! Hidden layers use ELU (alpha = 1), the output layer is linear and softmax
//! is folded into the cross-entropy loss. Everything is `f64`.
//!
//! Two code paths exist on purpose:
//!
//! - the dense batch path ([`forward`], [`backward`], [`sgd_step`]) works on a
//!   [`Batch`] and materializes a full [`Gradients`] value;
//! - the per-sample path ([`Mlp::train_sample`], [`Mlp::sample_loss`],
//!   [`Mlp::predict`]) works on a [`SparseImage`] and fuses backprop with the
//!   SGD update. It is what the learners run millions of times.
//!
//! The verification tools (gradient checker, counterfactual oracle) use the
//! dense path so they stay independent of the fast one.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::permutation::LabelPermutation;

/// Pixels per MNIST image.
pub const INPUT_DIM: usize = 784;
/// Number of classes.
pub const NUM_CLASSES: usize = 10;
/// Hidden layer widths used throughout.
pub const DEFAULT_HIDDEN: [usize; 2] = [80, 60];

/// ELU with alpha = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`]; uses the right derivative (1) at zero.
#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// He-normal weight matrix, `fan_in x fan_out`, row-major by input unit.
pub fn he_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    assert!(fan_in >= 1 && fan_out >= 1, "layer dimensions must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect()
}

/// An image stored as its nonzero pixels.
///
/// MNIST digits are roughly 80% background, so the first layer only touches
/// the columns of the nonzero pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseImage {
    pub indices: Vec<u16>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SparseImage {
    pub fn from_dense(pixels: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &p) in pixels.iter().enumerate() {
            if p != 0.0 {
                indices.push(i as u16);
                values.push(p);
            }
        }
        SparseImage {
            indices,
            values,
            dim: pixels.len(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Dense images plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    images: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
}

impl Batch {
    /// Validates `images.len() == labels.len() * dim`, pixels in `[0, 1]`,
    /// labels in `0..10`, and `N >= 1`.
    pub fn new(images: Vec<f64>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidBatch("batch must contain at least one sample".into()));
        }
        if dim == 0 || images.len() != labels.len() * dim {
            return Err(Error::InvalidBatch(format!(
                "{} pixel values for {} labels of width {dim}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(p) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidBatch(format!("pixel {p} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidBatch(format!("label {l} outside 0..10")));
        }
        Ok(Batch { images, labels, dim })
    }

    pub fn from_sparse<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a SparseImage, u8)>,
    {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut dim = 0;
        for (img, label) in samples {
            dim = img.dim;
            images.extend(img.to_dense());
            labels.push(label);
        }
        Batch::new(images, labels, dim)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut images = self.images.clone();
        images.extend_from_slice(&other.images);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Batch::new(images, labels, self.dim)
    }
}

/// One fully connected layer. `weights[i * outputs + j]` connects input `i`
/// to output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }

    /// `out = bias + input * W` for a dense input.
    fn affine_dense(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &a) in input.iter().enumerate() {
            if a != 0.0 {
                axpy(a, self.row(i), out);
            }
        }
    }

    fn affine_sparse(&self, input: &SparseImage, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (&i, &a) in input.indices.iter().zip(&input.values) {
            axpy(a, self.row(i as usize), out);
        }
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Network parameters. Cloning gives an independent deep copy, which is what
/// the counterfactual branches train.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Partial derivatives of the mean batch loss, shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= k);
            l.bias.iter_mut().for_each(|b| *b *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.inputs == l.inputs && g.outputs == l.outputs)
    }
}

/// Reusable activation buffers for the per-sample path.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    pub fn for_net(net: &Mlp) -> Self {
        let mut s = Scratch::default();
        s.fit(net);
        s
    }

    fn fit(&mut self, net: &Mlp) {
        let n = net.layers.len();
        if self.pre.len() == n
            && self.pre.iter().zip(&net.layers).all(|(b, l)| b.len() == l.outputs)
        {
            return;
        }
        self.pre = net.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        self.post = self.pre.clone();
        self.delta = self.pre.clone();
    }
}

impl Mlp {
    /// He-initialized weights, zero biases. `dims` includes the input and
    /// output widths, e.g. `[784, 80, 60, 10]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least an input and an output width");
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: he_init(w[0], w[1], rng),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Mlp { layers }
    }

    /// Wraps existing layers; consecutive widths must agree.
    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty(), "need at least one layer");
        assert!(
            layers.windows(2).all(|w| w[0].outputs == w[1].inputs),
            "layer widths do not chain"
        );
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least an input and an output width");
        Mlp {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Default 784-80-60-10 architecture.
    pub fn mnist<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Mlp::new(&[INPUT_DIM, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], NUM_CLASSES], rng)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Deep copy of the parameters.
    pub fn snapshot(&self) -> Mlp {
        self.clone()
    }

    /// Overwrites the parameters with `saved`, reusing allocations.
    pub fn restore(&mut self, saved: &Mlp) {
        self.clone_from(saved);
    }

    fn forward_sample(&self, input: Input<'_>, scratch: &mut Scratch) {
        scratch.fit(self);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, rest) = scratch.post.split_at_mut(k);
            let pre = &mut scratch.pre[k];
            match (k, input) {
                (0, Input::Sparse(x)) => layer.affine_sparse(x, pre),
                (0, Input::Dense(x)) => layer.affine_dense(x, pre),
                _ => layer.affine_dense(&before[k - 1], pre),
            }
            let post = &mut rest[0];
            if k == last {
                post.copy_from_slice(pre);
            } else {
                for (o, &z) in post.iter_mut().zip(pre.iter()) {
                    *o = elu(z);
                }
            }
        }
    }

    /// Output of the last forward pass through `scratch`.
    fn output<'s>(&self, scratch: &'s Scratch) -> &'s [f64] {
        &scratch.post[self.layers.len() - 1]
    }

    /// Logits for one image.
    pub fn logits(&self, input: &SparseImage, scratch: &mut Scratch) -> Vec<f64> {
        self.forward_sample(Input::Sparse(input), scratch);
        self.output(scratch).to_vec()
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, input: &SparseImage, scratch: &mut Scratch) -> u8 {
        self.predict_input(Input::Sparse(input), scratch)
    }

    pub fn predict_input(&self, input: Input<'_>, scratch: &mut Scratch) -> u8 {
        self.forward_sample(input, scratch);
        argmax(self.output(scratch)) as u8
    }

    /// Cross-entropy of one labelled image.
    pub fn sample_loss(&self, input: &SparseImage, label: u8, scratch: &mut Scratch) -> f64 {
        self.input_loss(Input::Sparse(input), label, scratch)
    }

    pub fn input_loss(&self, input: Input<'_>, label: u8, scratch: &mut Scratch) -> f64 {
        self.forward_sample(input, scratch);
        xent_row(self.output(scratch), label as usize)
    }

    /// One SGD step on a single sample, fused with backprop. Returns the
    /// loss before the update. Equivalent to [`backward`] on a one-sample
    /// batch followed by [`sgd_step`].
    pub fn train_sample(
        &mut self,
        input: &SparseImage,
        label: u8,
        lr: f64,
        scratch: &mut Scratch,
    ) -> f64 {
        self.train_input(Input::Sparse(input), label, lr, scratch, None).0
    }

    /// [`train_sample`](Self::train_sample) that also returns the arg-max
    /// class of the pre-update logits.
    pub fn train_sample_with_prediction(
        &mut self,
        input: &SparseImage,
        label: u8,
        lr: f64,
        scratch: &mut Scratch,
    ) -> (f64, u8) {
        self.train_input(Input::Sparse(input), label, lr, scratch, None)
    }

    /// Fused backprop + SGD step on one sample. When `input_grad` is given it
    /// receives the loss gradient with respect to the input, computed with
    /// the pre-update weights. Returns `(loss, predicted class)` of the
    /// pre-update forward pass.
    pub fn train_input(
        &mut self,
        input: Input<'_>,
        label: u8,
        lr: f64,
        scratch: &mut Scratch,
        mut input_grad: Option<&mut [f64]>,
    ) -> (f64, u8) {
        self.forward_sample(input, scratch);
        let last = self.layers.len() - 1;
        let predicted = argmax(&scratch.post[last]) as u8;
        let loss = {
            let logits = &scratch.post[last];
            let delta = &mut scratch.delta[last];
            softmax_into(logits, delta);
            delta[label as usize] -= 1.0;
            xent_row(logits, label as usize)
        };

        for k in (0..=last).rev() {
            let (lower, upper) = scratch.delta.split_at_mut(k);
            let delta = &upper[0];
            let layer = &mut self.layers[k];
            let out = layer.outputs;
            if k > 0 {
                // Propagate through the old weights before touching them.
                let prev = &mut lower[k - 1];
                let pre_prev = &scratch.pre[k - 1];
                let post_prev = &scratch.post[k - 1];
                for i in 0..layer.inputs {
                    prev[i] = dot(layer.row(i), delta) * elu_grad_from(pre_prev[i], post_prev[i]);
                }
                for (i, &ai) in post_prev.iter().enumerate() {
                    if ai != 0.0 {
                        axpy(-lr * ai, delta, &mut layer.weights[i * out..(i + 1) * out]);
                    }
                }
            } else {
                if let Some(g) = input_grad.as_deref_mut() {
                    for (i, gi) in g.iter_mut().enumerate().take(layer.inputs) {
                        *gi = dot(layer.row(i), delta);
                    }
                }
                match input {
                    Input::Sparse(x) => {
                        for (&i, &ai) in x.indices.iter().zip(&x.values) {
                            let i = i as usize;
                            axpy(-lr * ai, delta, &mut layer.weights[i * out..(i + 1) * out]);
                        }
                    }
                    Input::Dense(x) => {
                        for (i, &ai) in x.iter().enumerate() {
                            if ai != 0.0 {
                                axpy(-lr * ai, delta, &mut layer.weights[i * out..(i + 1) * out]);
                            }
                        }
                    }
                }
            }
            axpy(-lr, delta, &mut layer.bias);
        }
        (loss, predicted)
    }

    /// Error signal at the first layer's pre-activations from the last
    /// [`train_input`](Self::train_input) call through `scratch`.
    pub fn first_layer_delta<'s>(&self, scratch: &'s Scratch) -> &'s [f64] {
        &scratch.delta[0]
    }
}

/// ELU derivative from a pre-activation and its already computed output,
/// avoiding a second `exp`.
#[inline]
pub(crate) fn elu_grad_from(pre: f64, post: f64) -> f64 {
    if pre >= 0.0 {
        1.0
    } else {
        post + 1.0
    }
}

/// Input to the per-sample path.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Sparse(&'a SparseImage),
    Dense(&'a [f64]),
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn xent_row(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Row-wise softmax of an `N x C` logit matrix.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        softmax_into(row, o);
    }
    out
}

/// Logits for every row of `batch`, `N x outputs` row-major.
pub fn forward(net: &Mlp, batch: &Batch) -> Result<Vec<f64>> {
    let (_, acts) = forward_trace(net, batch)?;
    Ok(acts.into_iter().last().expect("at least one layer"))
}

/// Pre-activations and post-activations of every layer, each `N x width`.
fn forward_trace(net: &Mlp, batch: &Batch) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if batch.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            actual: batch.dim(),
        });
    }
    let n = batch.len();
    let last = net.layers.len() - 1;
    let mut pres = Vec::with_capacity(net.layers.len());
    let mut posts: Vec<Vec<f64>> = Vec::with_capacity(net.layers.len());
    for (k, layer) in net.layers.iter().enumerate() {
        let mut pre = vec![0.0; n * layer.outputs];
        for s in 0..n {
            let input = if k == 0 {
                batch.image(s)
            } else {
                &posts[k - 1][s * layer.inputs..(s + 1) * layer.inputs]
            };
            layer.affine_dense(input, &mut pre[s * layer.outputs..(s + 1) * layer.outputs]);
        }
        let post = if k == last {
            pre.clone()
        } else {
            pre.iter().map(|&z| elu(z)).collect()
        };
        pres.push(pre);
        posts.push(post);
    }
    Ok((pres, posts))
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], labels: &[u8]) -> (f64, Vec<f64>) {
    let n = labels.len();
    assert!(n > 0 && logits.len() % n == 0, "logits must be N x C");
    let classes = logits.len() / n;
    let mut grad = softmax(logits, classes);
    let mut loss = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits[s * classes..(s + 1) * classes];
        loss += xent_row(row, y as usize);
        let g = &mut grad[s * classes..(s + 1) * classes];
        g[y as usize] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n as f64);
    }
    (loss / n as f64, grad)
}

/// Mean batch loss and its gradient by backpropagation.
pub fn backward(net: &Mlp, batch: &Batch) -> Result<(f64, Gradients)> {
    let (pres, posts) = forward_trace(net, batch)?;
    let last = net.layers.len() - 1;
    let (loss, mut delta) = softmax_xent(&posts[last], batch.labels());
    let n = batch.len();
    let mut grads = Gradients::zeros_like(net);
    for k in (0..=last).rev() {
        let layer = &net.layers[k];
        let g = &mut grads.layers[k];
        for s in 0..n {
            let d = &delta[s * layer.outputs..(s + 1) * layer.outputs];
            let input = if k == 0 {
                batch.image(s)
            } else {
                &posts[k - 1][s * layer.inputs..(s + 1) * layer.inputs]
            };
            for (i, &a) in input.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, d, &mut g.weights[i * layer.outputs..(i + 1) * layer.outputs]);
                }
            }
            axpy(1.0, d, &mut g.bias);
        }
        if k > 0 {
            let mut prev = vec![0.0; n * layer.inputs];
            for s in 0..n {
                let d = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                for i in 0..layer.inputs {
                    prev[s * layer.inputs + i] =
                        dot(layer.row(i), d) * elu_grad(pres[k - 1][s * layer.inputs + i]);
                }
            }
            delta = prev;
        }
    }
    Ok((loss, grads))
}

/// `p <- p - lr * g` for every parameter.
pub fn sgd_step(net: &mut Mlp, grads: &Gradients, lr: f64) -> Result<()> {
    if !grads.congruent(net) {
        return Err(Error::DimensionMismatch {
            expected: net.num_params(),
            actual: grads.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        axpy(-lr, &g.weights, &mut layer.weights);
        axpy(-lr, &g.bias, &mut layer.bias);
    }
    Ok(())
}

/// Accuracy and mean loss of `net` on labelled images, scoring against
/// `perm`-relabelled ground truth.
pub fn evaluate(
    net: &Mlp,
    images: &[SparseImage],
    labels: &[u8],
    perm: &LabelPermutation,
) -> (f64, f64) {
    assert!(!images.is_empty() && images.len() == labels.len());
    let mut scratch = Scratch::for_net(net);
    let mut correct = 0usize;
    let mut loss = 0.0;
    let last = net.layers.len() - 1;
    for (img, &raw) in images.iter().zip(labels) {
        let target = perm.relabel(raw) as usize;
        net.forward_sample(Input::Sparse(img), &mut scratch);
        let logits = &scratch.post[last];
        if argmax(logits) == target {
            correct += 1;
        }
        loss += xent_row(logits, target);
    }
    let n = images.len() as f64;
    (correct as f64 / n, loss / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(n: usize, dim: usize, seed: u64) -> Batch {
        let mut r = rng(seed);
        let images = (0..n * dim)
            .map(|_| if r.random_bool(0.3) { r.random::<f64>() } else { 0.0 })
            .collect();
        let labels = (0..n).map(|_| r.random_range(0..10u8)).collect();
        Batch::new(images, labels, dim).unwrap()
    }

    fn sparse_rows(b: &Batch) -> Vec<SparseImage> {
        (0..b.len()).map(|i| SparseImage::from_dense(b.image(i))).collect()
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(2.5), 2.5);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-12);
    }

    #[test]
    fn elu_grad_values() {
        assert_eq!(elu_grad(5.0), 1.0);
        assert_eq!(elu_grad(0.0), 1.0);
        assert!((elu_grad(-1.0) - 0.367_879_441_171_442_3).abs() < 1e-12);
        for x in [-0.001, -0.5, -3.0, -20.0] {
            assert!((elu_grad(x) - (elu(x) + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn he_init_std_matches_fan_in() {
        let w = he_init(784, 80, &mut rng(1));
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = (2.0f64 / 784.0).sqrt();
        assert!((sd / target - 1.0).abs() < 0.05, "sd {sd} vs {target}");
        assert_eq!(he_init(2, 3, &mut rng(9)), he_init(2, 3, &mut rng(9)));
    }

    #[test]
    fn biases_start_at_zero() {
        let net = Mlp::mnist(&mut rng(3));
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(net.dims(), vec![784, 80, 60, 10]);
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let net = Mlp::zeros(&[784, 80, 60, 10]);
        let b = random_batch(4, 784, 2);
        let logits = forward(&net, &b).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
        let p = softmax(&logits, 10);
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn batch_rows_match_single_samples() {
        let net = Mlp::new(&[784, 80, 60, 10], &mut rng(4));
        let b = random_batch(5, 784, 5);
        let all = forward(&net, &b).unwrap();
        let mut scratch = Scratch::for_net(&net);
        for (i, img) in sparse_rows(&b).iter().enumerate() {
            let single =
                forward(&net, &Batch::new(b.image(i).to_vec(), vec![0], 784).unwrap()).unwrap();
            assert_eq!(&all[i * 10..(i + 1) * 10], single.as_slice());
            let fast = net.logits(img, &mut scratch);
            for (a, f) in single.iter().zip(&fast) {
                assert!((a - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Mlp::zeros(&[784, 80, 60, 10]);
        let b = random_batch(2, 100, 1);
        assert!(matches!(
            forward(&net, &b),
            Err(Error::DimensionMismatch { expected: 784, actual: 100 })
        ));
    }

    #[test]
    fn xent_uniform_and_saturated() {
        let (loss, grad) = softmax_xent(&[0.0; 10], &[7]);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-15);
        let mut logits = [0.0; 10];
        logits[2] = 1000.0;
        let (loss, _) = softmax_xent(&logits, &[2]);
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn xent_gradient_rows_sum_to_zero() {
        let mut r = rng(8);
        let logits: Vec<f64> = (0..40).map(|_| r.random_range(-30.0..30.0)).collect();
        let (loss, grad) = softmax_xent(&logits, &[0, 3, 9, 4]);
        assert!(loss >= 0.0);
        for row in grad.chunks(10) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        for row in softmax(&logits, 10).chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let net = Mlp::new(&[20, 8, 6, 10], &mut rng(11));
        let b = random_batch(3, 20, 12);
        let doubled = b.concat(&b).unwrap();
        let (l1, g1) = backward(&net, &b).unwrap();
        let (l2, g2) = backward(&net, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (x, y) in a.weights.iter().chain(&a.bias).zip(b.weights.iter().chain(&b.bias)) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn zero_input_zero_weights_give_zero_hidden_grads() {
        let net = Mlp::zeros(&[784, 80, 60, 10]);
        let b = Batch::new(vec![0.0; 784 * 2], vec![1, 4], 784).unwrap();
        let (_, g) = backward(&net, &b).unwrap();
        for l in &g.layers[..2] {
            assert!(l.weights.iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn backward_loss_matches_forward_loss() {
        let net = Mlp::new(&[30, 8, 6, 10], &mut rng(21));
        let b = random_batch(7, 30, 22);
        let (loss, _) = backward(&net, &b).unwrap();
        let (expected, _) = softmax_xent(&forward(&net, &b).unwrap(), b.labels());
        assert_eq!(loss, expected);
    }

    #[test]
    fn concatenated_loss_is_weighted_mean() {
        let net = Mlp::new(&[30, 8, 6, 10], &mut rng(31));
        let a = random_batch(3, 30, 32);
        let b = random_batch(5, 30, 33);
        let la = backward(&net, &a).unwrap().0;
        let lb = backward(&net, &b).unwrap().0;
        let lab = backward(&net, &a.concat(&b).unwrap()).unwrap().0;
        assert!((lab - (3.0 * la + 5.0 * lb) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers_mut()[0].weights[0] = 1.0;
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[0] = 0.5;
        sgd_step(&mut net, &g, 0.005).unwrap();
        assert!((net.layers()[0].weights[0] - 0.9975).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_forward_then_back_restores() {
        let mut net = Mlp::new(&[30, 8, 6, 10], &mut rng(41));
        let orig = net.snapshot();
        let (_, g) = backward(&net, &random_batch(4, 30, 42)).unwrap();
        sgd_step(&mut net, &g, 0.05).unwrap();
        sgd_step(&mut net, &g, -0.05).unwrap();
        for (a, b) in net.layers().iter().zip(orig.layers()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-12));
            }
        }
        let zero = Gradients::zeros_like(&net);
        let before = net.clone();
        sgd_step(&mut net, &zero, 0.1).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_step_rejects_non_finite() {
        let mut net = Mlp::zeros(&[2, 2]);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].bias[1] = f64::NAN;
        assert!(matches!(sgd_step(&mut net, &g, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn fused_step_matches_backward_plus_sgd() {
        let mut fast = Mlp::new(&[784, 80, 60, 10], &mut rng(51));
        let mut slow = fast.clone();
        let b = random_batch(6, 784, 52);
        let mut scratch = Scratch::for_net(&fast);
        for (i, img) in sparse_rows(&b).iter().enumerate() {
            let one = Batch::new(b.image(i).to_vec(), vec![b.labels()[i]], 784).unwrap();
            let (l_slow, g) = backward(&slow, &one).unwrap();
            sgd_step(&mut slow, &g, 0.03).unwrap();
            let l_fast = fast.train_sample(img, b.labels()[i], 0.03, &mut scratch);
            assert!((l_fast - l_slow).abs() < 1e-12);
        }
        for (a, b) in fast.layers().iter().zip(slow.layers()) {
            for (x, y) in a.weights.iter().chain(&a.bias).zip(b.weights.iter().chain(&b.bias)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snapshot_isolated_and_restorable() {
        let mut net = Mlp::new(&[784, 80, 60, 10], &mut rng(61));
        let b = random_batch(10, 784, 62);
        let rows = sparse_rows(&b);
        let before = forward(&net, &b).unwrap();
        let mut copy = net.snapshot();
        assert_eq!(copy, net.snapshot());
        let mut scratch = Scratch::for_net(&copy);
        for (img, &y) in rows.iter().zip(b.labels()) {
            copy.train_sample(img, y, 0.1, &mut scratch);
        }
        assert_eq!(forward(&net, &b).unwrap(), before);
        let saved = net.snapshot();
        net.restore(&copy);
        assert_eq!(net, copy);
        net.restore(&saved);
        assert_eq!(forward(&net, &b).unwrap(), before);
    }

    #[test]
    fn evaluate_scores_against_permutation() {
        // Output bias favours class 3 for every input.
        let mut net = Mlp::zeros(&[784, 80, 60, 10]);
        net.layers_mut()[2].bias[3] = 1.0;
        let b = random_batch(8, 784, 71);
        let rows = sparse_rows(&b);
        let raw = vec![5u8; 8];
        let perm = LabelPermutation::identity().swapped(5, 3).unwrap();
        assert_eq!(evaluate(&net, &rows, &raw, &perm).0, 1.0);
        assert_eq!(evaluate(&net, &rows, &raw, &LabelPermutation::identity()).0, 0.0);

        let net = Mlp::new(&[784, 80, 60, 10], &mut rng(72));
        let twice = LabelPermutation::identity()
            .swapped(2, 7)
            .unwrap()
            .swapped(2, 7)
            .unwrap();
        assert_eq!(
            evaluate(&net, &rows, b.labels(), &twice),
            evaluate(&net, &rows, b.labels(), &LabelPermutation::identity())
        );
    }

    #[test]
    fn random_guessing_is_near_chance() {
        let mut r = rng(81);
        let n = 20_000;
        let hits = (0..n)
            .filter(|i| r.random_range(0..10u8) == (i % 10) as u8)
            .count();
        let acc = hits as f64 / n as f64;
        assert!((acc - 0.1).abs() < 0.01, "{acc}");
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let a = Mlp::mnist(&mut rng(5));
        let b = Mlp::mnist(&mut rng(5));
        let batch = random_batch(3, 784, 6);
        assert_eq!(forward(&a, &batch).unwrap(), forward(&b, &batch).unwrap());
    }
}

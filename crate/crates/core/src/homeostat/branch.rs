//! Counterfactual branch training without copying the first layer.
//!
//! A branch starts from the live weights and takes one SGD step per stored
//! sample. On sample `j` the first layer changes by `W1 -= lr x_j d_j^T`,
//! `b1 -= lr d_j`, so after any sequence of such steps the first-layer
//! pre-activation of stored sample `k` is
//!
//! ```text
//! base_k - lr * sum_j (x_k . x_j + 1) d_j,    base_k = x_k W1 + b1
//! ```
//!
//! with `W1`, `b1` the live weights. [`StoreCache`] keeps `base` and the
//! shifted Gram matrix `x_k . x_j + 1` current as the live network trains
//! and the store rolls over, so a branch never touches the 784-wide weight
//! matrix. Only the layers above it are copied and trained.

use crate::homeostat::ReplayStore;
use crate::nn::{axpy, elu, elu_grad_from, Dense, Input, Mlp, Scratch, SparseImage};

/// Per-slot quantities derived from the live network and the store.
#[derive(Debug, Clone)]
pub(crate) struct StoreCache {
    capacity: usize,
    width: usize,
    /// `capacity x capacity`, entry `(k, j)` is `x_k . x_j + 1`.
    gram: Vec<f64>,
    /// `capacity x width`, row `k` is `x_k W1 + b1`.
    base: Vec<f64>,
    scatter: Vec<f64>,
    dots: Vec<f64>,
}

impl StoreCache {
    pub fn build(net: &Mlp, store: &ReplayStore) -> Self {
        let capacity = store.capacity();
        let width = net.layers()[0].outputs;
        let mut cache = StoreCache {
            capacity,
            width,
            gram: vec![0.0; capacity * capacity],
            base: vec![0.0; capacity * width],
            scatter: vec![0.0; net.input_dim()],
            dots: vec![0.0; capacity],
        };
        let slots: Vec<usize> = store.order().collect();
        for &k in &slots {
            cache.refresh_slot(net, store, k, &slots);
        }
        cache
    }

    /// Recomputes row/column `k` of the Gram matrix and `base_k`.
    fn refresh_slot(&mut self, net: &Mlp, store: &ReplayStore, k: usize, present: &[usize]) {
        let x = &store.slot(k).0;
        self.fill_dots(store, x, present);
        for &j in present {
            let g = self.dots[j] + 1.0;
            self.gram[k * self.capacity + j] = g;
            self.gram[j * self.capacity + k] = g;
        }
        let first = &net.layers()[0];
        let row = &mut self.base[k * self.width..(k + 1) * self.width];
        first_layer_affine(first, x, row);
    }

    /// `dots[j] = x . x_j` for every slot in `present`.
    fn fill_dots(&mut self, store: &ReplayStore, x: &SparseImage, present: &[usize]) {
        for (&i, &v) in x.indices.iter().zip(&x.values) {
            self.scatter[i as usize] = v;
        }
        for &j in present {
            let xj = &store.slot(j).0;
            self.dots[j] = xj
                .indices
                .iter()
                .zip(&xj.values)
                .map(|(&i, &v)| self.scatter[i as usize] * v)
                .sum();
        }
        for &i in &x.indices {
            self.scatter[i as usize] = 0.0;
        }
    }

    /// Brings the cache in line with a live SGD step on `(image, label)` at
    /// `lr` whose first-layer error signal was `delta1`, then pushes the
    /// sample into `store`. `net` must already hold the updated weights.
    pub fn record_live_step(
        &mut self,
        net: &Mlp,
        store: &mut ReplayStore,
        image: &SparseImage,
        label: u8,
        delta1: &[f64],
        lr: f64,
    ) {
        if store.capacity() == 0 {
            return;
        }
        let before: Vec<usize> = store.order().collect();
        self.fill_dots(store, image, &before);
        for &k in &before {
            let g = self.dots[k] + 1.0;
            axpy(-lr * g, delta1, &mut self.base[k * self.width..(k + 1) * self.width]);
        }
        let slot = store.push(image.clone(), label);
        let cap = self.capacity;
        for &j in &before {
            if j != slot {
                let g = self.dots[j] + 1.0;
                self.gram[slot * cap + j] = g;
                self.gram[j * cap + slot] = g;
            }
        }
        let own: f64 = image.values.iter().map(|v| v * v).sum();
        self.gram[slot * cap + slot] = own + 1.0;
        let row = &mut self.base[slot * self.width..(slot + 1) * self.width];
        first_layer_affine(&net.layers()[0], image, row);
    }

    #[cfg(test)]
    pub fn max_abs_diff(&self, other: &StoreCache, store: &ReplayStore) -> f64 {
        let slots: Vec<usize> = store.order().collect();
        let mut worst: f64 = 0.0;
        for &k in &slots {
            for &j in &slots {
                let i = k * self.capacity + j;
                worst = worst.max((self.gram[i] - other.gram[i]).abs());
            }
            for c in 0..self.width {
                let i = k * self.width + c;
                worst = worst.max((self.base[i] - other.base[i]).abs());
            }
        }
        worst
    }
}

fn first_layer_affine(layer: &Dense, x: &SparseImage, out: &mut [f64]) {
    out.copy_from_slice(&layer.bias);
    for (&i, &v) in x.indices.iter().zip(&x.values) {
        let i = i as usize;
        axpy(v, &layer.weights[i * layer.outputs..(i + 1) * layer.outputs], out);
    }
}

/// Reusable buffers for one branch evaluation.
#[derive(Debug, Clone)]
pub(crate) struct BranchBuffers {
    tail: Mlp,
    scratch: Scratch,
    acc: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    g1: Vec<f64>,
}

impl BranchBuffers {
    pub fn new(net: &Mlp, capacity: usize) -> Self {
        assert!(net.layers().len() >= 2, "counterfactual branches need a hidden layer");
        let tail = Mlp::from_layers(net.layers()[1..].to_vec());
        let width = net.layers()[0].outputs;
        BranchBuffers {
            scratch: Scratch::for_net(&tail),
            tail,
            acc: vec![0.0; capacity * width],
            z1: vec![0.0; width],
            h1: vec![0.0; width],
            g1: vec![0.0; width],
        }
    }

    fn hidden(&mut self, cache: &StoreCache, k: usize, lr: f64) {
        let w = cache.width;
        let base = &cache.base[k * w..(k + 1) * w];
        let acc = &self.acc[k * w..(k + 1) * w];
        for c in 0..w {
            self.z1[c] = base[c] - lr * acc[c];
            self.h1[c] = elu(self.z1[c]);
        }
    }
}

/// Mean store loss after training a branch copy of `net` on the store at
/// `lr` for `passes` passes, one SGD step per sample in storage order.
pub(crate) fn branch_loss(
    net: &Mlp,
    store: &ReplayStore,
    cache: &StoreCache,
    lr: f64,
    passes: usize,
    buf: &mut BranchBuffers,
) -> f64 {
    let slots: Vec<usize> = store.order().collect();
    let w = cache.width;
    let cap = cache.capacity;
    if buf.acc.len() < cap * w {
        buf.acc.resize(cap * w, 0.0);
    }
    for (dst, src) in buf.tail.layers_mut().iter_mut().zip(&net.layers()[1..]) {
        dst.clone_from(src);
    }
    for &k in &slots {
        buf.acc[k * w..(k + 1) * w].fill(0.0);
    }
    for _ in 0..passes {
        for &s in &slots {
            let label = store.slot(s).1;
            buf.hidden(cache, s, lr);
            buf.tail.train_input(
                Input::Dense(&buf.h1),
                label,
                lr,
                &mut buf.scratch,
                Some(&mut buf.g1),
            );
            for c in 0..w {
                buf.g1[c] *= elu_grad_from(buf.z1[c], buf.h1[c]);
            }
            for &k in &slots {
                let g = cache.gram[k * cap + s];
                axpy(g, &buf.g1, &mut buf.acc[k * w..(k + 1) * w]);
            }
        }
    }
    let mut total = 0.0;
    for &s in &slots {
        buf.hidden(cache, s, lr);
        total += buf
            .tail
            .input_loss(Input::Dense(&buf.h1), store.slot(s).1, &mut buf.scratch);
    }
    total / slots.len() as f64
}

//! Brute-force reference for [`counterfactual_decide`].
//!
//! Materializes both candidate networks with the dense batch path
//! ([`backward`] on one-sample batches, then [`sgd_step`]) and scores each on
//! the whole store as one batch. Shares no training code with the fused
//! per-sample path used by the learners.
//!
//! [`counterfactual_decide`]: crate::homeostat::counterfactual_decide

use rand::Rng;

use crate::drift::random_pair;
use crate::error::Result;
use crate::homeostat::{
    counterfactual_decide, effect_of, Choice, Controller, HomeostatState, LrPolicy, Workspace,
};
use crate::nn::{backward, forward, sgd_step, softmax_xent, Batch, Mlp, SparseImage, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVerdict {
    pub choice: Choice,
    pub loss_ingest: Option<f64>,
    pub loss_reject: Option<f64>,
}

fn candidate_loss(net: &Mlp, state: &HomeostatState, lr: f64, store: &Batch) -> Result<f64> {
    let mut candidate = net.clone();
    for _ in 0..state.passes {
        for (img, label) in state.store.iter() {
            let one = Batch::new(img.to_dense(), vec![*label], img.dim)?;
            let (_, grads) = backward(&candidate, &one)?;
            if !grads.is_finite() {
                return Ok(f64::NAN);
            }
            sgd_step(&mut candidate, &grads, lr)?;
        }
    }
    Ok(softmax_xent(&forward(&candidate, store)?, store.labels()).0)
}

/// The decision rule written out directly: ingest iff the ingest candidate's
/// store loss is strictly lower.
pub fn decide(net: &Mlp, state: &HomeostatState, predicted: u8) -> Result<OracleVerdict> {
    if state.store.is_empty() {
        return Ok(OracleVerdict {
            choice: Choice::Reject,
            loss_ingest: None,
            loss_reject: None,
        });
    }
    let store = Batch::from_sparse(state.store.iter().map(|(i, l)| (i, *l)))?;
    let lr_ingest = state
        .policy
        .apply_effect(state.lr, effect_of(predicted, &state.effects));
    let a = candidate_loss(net, state, lr_ingest, &store)?;
    let b = candidate_loss(net, state, state.lr, &store)?;
    Ok(OracleVerdict {
        choice: if a < b { Choice::Ingest } else { Choice::Reject },
        loss_ingest: Some(a),
        loss_reject: Some(b),
    })
}

/// A randomized decision problem.
#[derive(Debug, Clone)]
pub struct OracleState {
    pub net: Mlp,
    pub state: HomeostatState,
    pub predicted: u8,
}

fn random_image<R: Rng + ?Sized>(rng: &mut R) -> SparseImage {
    let density = rng.random_range(0.05..0.35);
    let dense: Vec<f64> = (0..crate::nn::INPUT_DIM)
        .map(|_| if rng.random_bool(density) { rng.random::<f64>() } else { 0.0 })
        .collect();
    SparseImage::from_dense(&dense)
}

/// Random network, store of `0..=max_store` samples, learning rate
/// log-uniform over the policy bounds (sometimes pinned to a bound), random
/// prediction.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, max_store: usize) -> OracleState {
    let net = Mlp::mnist(rng);
    let policy = LrPolicy::default();
    let mut state = HomeostatState::new(Controller::Homeostatic, policy, max_store.max(1));
    state.lr = match rng.random_range(0..10) {
        0 => policy.lr_min,
        1 => policy.lr_max,
        _ => (rng.random_range(policy.lr_min.ln()..policy.lr_max.ln())).exp(),
    };
    let n = rng.random_range(0..=max_store);
    // Labels sometimes follow a swapped concept to mimic a drifting store.
    let (a, b) = random_pair(rng);
    for _ in 0..n {
        let mut label = rng.random_range(0..NUM_CLASSES as u8);
        if rng.random_bool(0.3) {
            label = if label == a { b } else if label == b { a } else { label };
        }
        state.store.push(random_image(rng), label);
    }
    OracleState {
        net,
        state,
        predicted: rng.random_range(0..NUM_CLASSES as u8),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleSummary {
    pub states: usize,
    pub mismatches: usize,
    pub ingests: usize,
}

/// Compares the fast decision with [`decide`] on `states` random problems.
pub fn run_suite<R: Rng + ?Sized>(rng: &mut R, states: usize, max_store: usize) -> Result<OracleSummary> {
    let mut summary = OracleSummary {
        states,
        mismatches: 0,
        ingests: 0,
    };
    for _ in 0..states {
        let s = random_state(rng, max_store);
        let mut ws = Workspace::new(&s.net);
        let fast = counterfactual_decide(&s.net, &s.state, s.predicted, &mut ws);
        let slow = decide(&s.net, &s.state, s.predicted)?;
        if fast.choice != slow.choice {
            summary.mismatches += 1;
        }
        if slow.choice == Choice::Ingest {
            summary.ingests += 1;
        }
    }
    Ok(summary)
}

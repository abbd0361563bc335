//! Learning-rate self-regulation.
//!
//! Every class has an effect on the learner: inhibitory classes push the
//! learning rate down, excitatory ones push it up. After classifying an
//! object the homeostatic learner decides whether to ingest it (accept its
//! effect) or reject it. The decision is counterfactual: two copies of the
//! network are trained on the replay store, one at the learning rate that
//! ingesting the *predicted* class would produce and one at the current
//! rate, and the copy with the lower store loss wins. If the learner ingests,
//! the effect actually applied comes from the object's *true* class, so a
//! misclassification turns into a mis-predicted consequence.
//!
//! Two control learners share the same step interface: a random walk that
//! applies a coin-flip effect every presentation, and a constant learning
//! rate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, Scratch, SparseImage, NUM_CLASSES};

mod branch;

use branch::{branch_loss, BranchBuffers, StoreCache};

/// Direction of a class's effect on the learning rate, `-1` or `+1`.
pub type Direction = i8;

pub const INHIBITORY: Direction = -1;
pub const EXCITATORY: Direction = 1;

/// Per-class effect directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectMap([Direction; NUM_CLASSES]);

impl Default for EffectMap {
    /// Classes 0-4 inhibitory, 5-9 excitatory.
    fn default() -> Self {
        let mut d = [INHIBITORY; NUM_CLASSES];
        d[5..].fill(EXCITATORY);
        EffectMap(d)
    }
}

impl EffectMap {
    pub fn new(directions: [Direction; NUM_CLASSES]) -> Result<Self> {
        if directions.iter().any(|&d| d != INHIBITORY && d != EXCITATORY) {
            return Err(Error::Config {
                line: 0,
                key: "effects".into(),
                message: format!("{directions:?}: every entry must be -1 or +1"),
            });
        }
        Ok(EffectMap(directions))
    }

    pub fn directions(&self) -> &[Direction; NUM_CLASSES] {
        &self.0
    }
}

#[inline]
pub fn effect_of(label: u8, map: &EffectMap) -> Direction {
    map.0[label as usize]
}

/// Functional form of one effect step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `lr + direction * delta * lr_init`
    Additive,
    /// `lr * (1 + direction * delta)`
    Multiplicative,
}

/// Learning-rate bounds and step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrPolicy {
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub delta: f64,
    pub rule: StepRule,
}

impl Default for LrPolicy {
    fn default() -> Self {
        LrPolicy {
            lr_init: 0.005,
            lr_min: 1e-5,
            lr_max: 0.5,
            delta: 0.2,
            rule: StepRule::Additive,
        }
    }
}

impl LrPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                line: 0,
                key: key.into(),
                message,
            })
        };
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(
                "lr_min",
                format!("need 0 < lr_min <= lr_max, got [{}, {}]", self.lr_min, self.lr_max),
            );
        }
        if !(self.lr_min..=self.lr_max).contains(&self.lr_init) {
            return bad("lr_init", format!("{} outside [lr_min, lr_max]", self.lr_init));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta", format!("{} must be positive", self.delta));
        }
        Ok(())
    }

    /// New learning rate after one effect in `direction`, clamped to the
    /// bounds.
    pub fn apply_effect(&self, lr: f64, direction: Direction) -> f64 {
        let d = direction as f64;
        let next = match self.rule {
            StepRule::Additive => lr + d * self.delta * self.lr_init,
            StepRule::Multiplicative => lr * (1.0 + d * self.delta),
        };
        next.clamp(self.lr_min, self.lr_max)
    }
}

/// Fixed-capacity FIFO of recently presented `(image, label)` pairs. Labels
/// are stored as served and never rewritten by later swaps.
///
/// Backed by a ring of physical slots so that per-slot caches stay valid
/// while the store rolls over.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    capacity: usize,
    slots: Vec<(SparseImage, u8)>,
    /// Physical slot of the oldest item once the ring is full.
    head: usize,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Self {
        ReplayStore {
            capacity,
            slots: Vec::with_capacity(capacity),
            head: 0,
        }
    }

    /// Appends a sample, evicting the oldest when full. Returns the physical
    /// slot written (0 for a zero-capacity store, which keeps nothing).
    pub fn push(&mut self, image: SparseImage, label: u8) -> usize {
        if self.capacity == 0 {
            return 0;
        }
        if self.slots.len() < self.capacity {
            self.slots.push((image, label));
            return self.slots.len() - 1;
        }
        let slot = self.head;
        self.slots[slot] = (image, label);
        self.head = (self.head + 1) % self.capacity;
        slot
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Physical slots, oldest first.
    pub fn order(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.slots.len();
        (0..n).map(move |i| (self.head + i) % n.max(1))
    }

    pub fn slot(&self, k: usize) -> &(SparseImage, u8) {
        &self.slots[k]
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &(SparseImage, u8)> {
        self.order().map(move |k| &self.slots[k])
    }
}

/// Which label's effect is applied when the learner ingests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealizedEffect {
    TrueLabel,
    PredictedLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Controller {
    Homeostatic,
    RandomWalk,
    Constant,
}

impl Controller {
    pub const ALL: [Controller; 3] = [
        Controller::Homeostatic,
        Controller::RandomWalk,
        Controller::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Homeostatic => "homeostatic",
            Controller::RandomWalk => "random",
            Controller::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "homeostatic" | "homeostat" => Some(Controller::Homeostatic),
            "random" | "random-walk" | "random_walk" => Some(Controller::RandomWalk),
            "constant" => Some(Controller::Constant),
            _ => None,
        }
    }
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything the controllers regulate or consult besides the weights.
#[derive(Debug, Clone)]
pub struct HomeostatState {
    pub lr: f64,
    pub policy: LrPolicy,
    pub effects: EffectMap,
    pub store: ReplayStore,
    pub controller: Controller,
    pub realized: RealizedEffect,
    /// Passes over the store when training each counterfactual branch.
    pub passes: usize,
}

impl HomeostatState {
    pub fn new(controller: Controller, policy: LrPolicy, store_capacity: usize) -> Self {
        HomeostatState {
            lr: policy.lr_init,
            policy,
            effects: EffectMap::default(),
            store: ReplayStore::new(store_capacity),
            controller,
            realized: RealizedEffect::TrueLabel,
            passes: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Ingest,
    Reject,
}

/// Result of comparing the ingest and reject branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counterfactual {
    pub choice: Choice,
    pub predicted_label: u8,
    pub expected_direction: Direction,
    pub lr_ingest: f64,
    pub lr_reject: f64,
    /// `None` when the store is empty.
    pub loss_ingest: Option<f64>,
    pub loss_reject: Option<f64>,
}

/// A homeostatic decision together with the effect it actually had.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub counterfactual: Counterfactual,
    pub realized_direction: Direction,
}

impl Decision {
    pub fn choice(&self) -> Choice {
        self.counterfactual.choice
    }
}

/// Record of one presentation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub presentation_index: u64,
    pub predicted: u8,
    pub true_label: u8,
    pub correct: bool,
    pub decision: Option<Decision>,
    pub lr_before: f64,
    pub lr_after: f64,
    pub loss: f64,
}

/// Buffers reused across decisions so the hot loop does not allocate.
#[derive(Debug, Clone)]
pub struct Workspace {
    branch: BranchBuffers,
    scratch: Scratch,
}

impl Workspace {
    pub fn new(net: &Mlp) -> Self {
        Workspace {
            branch: BranchBuffers::new(net, 0),
            scratch: Scratch::for_net(net),
        }
    }
}

/// Ingest iff the ingest branch ends with strictly lower store loss. An
/// empty store or a tie means reject. `net` is never modified.
pub fn counterfactual_decide(
    net: &Mlp,
    state: &HomeostatState,
    predicted_label: u8,
    ws: &mut Workspace,
) -> Counterfactual {
    let cache = (!state.store.is_empty()).then(|| StoreCache::build(net, &state.store));
    decide_with_cache(net, state, predicted_label, cache.as_ref(), ws)
}

fn decide_with_cache(
    net: &Mlp,
    state: &HomeostatState,
    predicted_label: u8,
    cache: Option<&StoreCache>,
    ws: &mut Workspace,
) -> Counterfactual {
    let expected_direction = effect_of(predicted_label, &state.effects);
    let lr_ingest = state.policy.apply_effect(state.lr, expected_direction);
    let lr_reject = state.lr;
    let mut cf = Counterfactual {
        choice: Choice::Reject,
        predicted_label,
        expected_direction,
        lr_ingest,
        lr_reject,
        loss_ingest: None,
        loss_reject: None,
    };
    let Some(cache) = cache.filter(|_| !state.store.is_empty()) else {
        return cf;
    };
    let a = branch_loss(net, &state.store, cache, lr_ingest, state.passes, &mut ws.branch);
    let b = branch_loss(net, &state.store, cache, lr_reject, state.passes, &mut ws.branch);
    cf.loss_ingest = Some(a);
    cf.loss_reject = Some(b);
    if a < b {
        cf.choice = Choice::Ingest;
    }
    cf
}

/// A network plus the state regulating its learning rate.
#[derive(Debug, Clone)]
pub struct Learner {
    net: Mlp,
    state: HomeostatState,
    rng: ChaCha8Rng,
    ws: Workspace,
    /// Kept in step with `net` and the store for the homeostatic controller.
    cache: Option<StoreCache>,
}

impl Learner {
    pub fn new(net: Mlp, state: HomeostatState, rng: ChaCha8Rng) -> Self {
        let ws = Workspace::new(&net);
        let cache = (state.controller == Controller::Homeostatic)
            .then(|| StoreCache::build(&net, &state.store));
        Learner {
            net,
            state,
            rng,
            ws,
            cache,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn state(&self) -> &HomeostatState {
        &self.state
    }

    pub fn controller(&self) -> Controller {
        self.state.controller
    }

    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    /// Dispatches to the step for this learner's controller.
    pub fn step(&mut self, index: u64, image: &SparseImage, label: u8) -> Result<StepLog> {
        match self.state.controller {
            Controller::Homeostatic => self.homeostat_step(index, image, label),
            Controller::RandomWalk => self.random_step(index, image, label),
            Controller::Constant => self.constant_step(index, image, label),
        }
    }

    fn supervised(&mut self, index: u64, image: &SparseImage, label: u8, lr: f64) -> Result<(f64, u8)> {
        let (loss, predicted) = self
            .net
            .train_sample_with_prediction(image, label, lr, &mut self.ws.scratch);
        if !loss.is_finite() {
            return Err(Error::ReplicateAborted {
                presentation: index,
                reason: format!("non-finite training loss at lr {lr}"),
            });
        }
        Ok((loss, predicted))
    }

    /// Predict, decide counterfactually, apply the realized effect if
    /// ingesting, train on the sample, remember it.
    fn homeostat_step(&mut self, index: u64, image: &SparseImage, label: u8) -> Result<StepLog> {
        let predicted = self.net.predict(image, &mut self.ws.scratch);
        let cf = decide_with_cache(&self.net, &self.state, predicted, self.cache.as_ref(), &mut self.ws);
        let realized_direction = match self.state.realized {
            RealizedEffect::TrueLabel => effect_of(label, &self.state.effects),
            RealizedEffect::PredictedLabel => cf.expected_direction,
        };
        let lr_before = self.state.lr;
        if cf.choice == Choice::Ingest {
            self.state.lr = self.state.policy.apply_effect(lr_before, realized_direction);
        }
        let lr = self.state.lr;
        let (loss, _) = self.supervised(index, image, label, lr)?;
        match &mut self.cache {
            Some(cache) => {
                let delta1 = self.net.first_layer_delta(&self.ws.scratch);
                cache.record_live_step(&self.net, &mut self.state.store, image, label, delta1, lr);
            }
            None => {
                self.state.store.push(image.clone(), label);
            }
        }
        Ok(StepLog {
            presentation_index: index,
            predicted,
            true_label: label,
            correct: predicted == label,
            decision: Some(Decision {
                counterfactual: cf,
                realized_direction,
            }),
            lr_before,
            lr_after: lr,
            loss,
        })
    }

    /// Coin-flip effect, then train. Pushes to the store so memory use
    /// matches the homeostat, but never reads it.
    fn random_step(&mut self, index: u64, image: &SparseImage, label: u8) -> Result<StepLog> {
        let lr_before = self.state.lr;
        let direction = if self.rng.random_bool(0.5) {
            EXCITATORY
        } else {
            INHIBITORY
        };
        self.state.lr = self.state.policy.apply_effect(lr_before, direction);
        let lr = self.state.lr;
        let (loss, predicted) = self.supervised(index, image, label, lr)?;
        self.state.store.push(image.clone(), label);
        Ok(StepLog {
            presentation_index: index,
            predicted,
            true_label: label,
            correct: predicted == label,
            decision: None,
            lr_before,
            lr_after: lr,
            loss,
        })
    }

    /// Plain SGD at `lr_init`.
    fn constant_step(&mut self, index: u64, image: &SparseImage, label: u8) -> Result<StepLog> {
        let lr = self.state.policy.lr_init;
        self.state.lr = lr;
        let (loss, predicted) = self.supervised(index, image, label, lr)?;
        Ok(StepLog {
            presentation_index: index,
            predicted,
            true_label: label,
            correct: predicted == label,
            decision: None,
            lr_before: lr,
            lr_after: lr,
            loss,
        })
    }
}

//! Named parameter storage and the Adam update rule.
//!
//! Parameters live in a [`ParamSet`] outside any tape, keyed by stable
//! names (for checkpoints) and dense [`ParamId`]s (for everything else).
//! Each training step copies the current values onto a fresh [`Tape`]
//! through a [`Binding`]: a trainable binding records which tape variable
//! mirrors which parameter so the optimizer can route gradients back, a
//! frozen binding enters plain constants so the surrounding network takes
//! part in the forward pass but is invisible to the gradient sweep.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Stable handle to one parameter of a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// All trainable state of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a parameter under a unique name. Duplicate names are a coding
    /// error (they would collide in checkpoints), so they panic.
    pub fn register(&mut self, name: impl Into<String>, init: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.values.push(init);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Look a parameter up by its checkpoint name.
    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// Records how parameters were entered onto a tape for one forward pass.
pub struct Binding {
    pairs: Vec<(ParamId, Var)>,
    trainable: bool,
}

impl Binding {
    /// Parameters bound through this binding become gradient leaves and are
    /// updated by [`AdamState::step`].
    pub fn trainable() -> Self {
        Binding {
            pairs: Vec::new(),
            trainable: true,
        }
    }

    /// Parameters bound through this binding enter the tape as constants:
    /// they contribute to the forward value but the gradient sweep skips
    /// their entire subgraph.
    pub fn frozen() -> Self {
        Binding {
            pairs: Vec::new(),
            trainable: false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn bind(&mut self, tape: &Tape, params: &ParamSet, id: ParamId) -> Var {
        let value = params.get(id).clone();
        if self.trainable {
            let var = tape.leaf(value);
            self.pairs.push((id, var));
            var
        } else {
            tape.constant(value)
        }
    }

    pub fn pairs(&self) -> &[(ParamId, Var)] {
        &self.pairs
    }
}

/// Adam optimizer state: first/second moment estimates per parameter plus
/// a shared step counter, with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Fresh state (zero moments) sized to the given parameter set.
    pub fn new(lr: f32, params: &ParamSet) -> Self {
        let m = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        let v = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        AdamState { lr, t: 0, m, v }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.v
    }

    /// Rebuild from checkpointed state. Lengths are the caller's problem;
    /// the checkpoint reader validates them against the parameter set.
    pub fn restore(lr: f32, t: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Self {
        AdamState { lr, t, m, v }
    }

    /// Apply one update using the gradients currently stored on `tape`.
    /// Parameters whose bound variable received no gradient (for example a
    /// network block that was not part of the active resolution level) are
    /// skipped entirely: their moments and values stay untouched.
    pub fn step(&mut self, params: &mut ParamSet, tape: &Tape, binding: &Binding) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for &(id, var) in binding.pairs() {
            let Some(grad) = tape.grad(var)? else {
                continue;
            };
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let value = params.get_mut(id);
            for ((p, g), (mi, vi)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = (BETA1 as f32) * *mi + (1.0 - BETA1 as f32) * g;
                *vi = (BETA2 as f32) * *vi + (1.0 - BETA2 as f32) * g * g;
                let m_hat = *mi / bc1 as f32;
                let v_hat = *vi / bc2 as f32;
                *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

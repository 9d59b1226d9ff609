//! Named trainable parameters, batch-norm buffers, and the forward context
//! that bridges both onto a tape.

use rand::Rng;

use super::{Mode, Result, Tape, ValueId};

/// One named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for 2-D shapes.
    GlorotUniform,
    /// Gaussian with the given standard deviation.
    Normal(f64),
}

/// Ordered collection of trainable tensors. Allocation order is the model's
/// canonical parameter order; checkpoints and optimizers rely on it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::GlorotUniform => {
                let (fan_in, fan_out) = match shape.len() {
                    2 => (shape[0], shape[1]),
                    _ => (numel, numel),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Normal(std) => (0..numel).map(|_| std * gaussian(rng)).collect(),
        };
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// Box-Muller transform over the rng's uniform stream.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Running statistics for one batch-norm site.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnState {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnId(pub usize);

/// Mutable per-model buffers: one [`BnState`] per batch-norm site, in
/// allocation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BnBuffers {
    states: Vec<BnState>,
}

impl BnBuffers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, width: usize) -> BnId {
        self.states.push(BnState::new(width));
        BnId(self.states.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, id: BnId) -> &BnState {
        &self.states[id.0]
    }

    pub fn get_mut(&mut self, id: BnId) -> &mut BnState {
        &mut self.states[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BnState> {
        self.states.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut BnState> {
        self.states.iter_mut()
    }
}

/// One forward pass: a fresh tape plus lazily created parameter leaves, so a
/// parameter used twice (tied weights) maps to a single leaf whose gradient
/// accumulates.
pub struct Forward<'a> {
    pub tape: Tape,
    pub mode: Mode,
    params: &'a ParamSet,
    pub buffers: &'a mut BnBuffers,
    leaf_ids: Vec<Option<ValueId>>,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a ParamSet, buffers: &'a mut BnBuffers, mode: Mode) -> Self {
        let leaf_ids = vec![None; params.len()];
        Self {
            tape: Tape::new(),
            mode,
            params,
            buffers,
            leaf_ids,
        }
    }

    /// Tape leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> ValueId {
        if let Some(v) = self.leaf_ids[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let v = self
            .tape
            .leaf(p.data.clone(), &p.shape, true)
            .expect("parameter shape is consistent by construction");
        self.leaf_ids[id.0] = Some(v);
        v
    }

    /// Batch norm against a buffered state.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ParamId,
        beta: ParamId,
        bn: BnId,
    ) -> Result<ValueId> {
        let g = self.param(gamma);
        let b = self.param(beta);
        self.tape
            .batch_norm(x, g, b, self.buffers.get_mut(bn), self.mode)
    }

    /// Gradient per parameter after a backward pass. `None` for parameters
    /// the forward never touched.
    pub fn param_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.leaf_ids
            .iter()
            .map(|slot| slot.and_then(|v| self.tape.grad(v).map(|g| g.to_vec())))
            .collect()
    }

    /// Which parameters were used by this forward.
    pub fn touched(&self) -> Vec<bool> {
        self.leaf_ids.iter().map(|s| s.is_some()).collect()
    }

    /// Named gradient lookup for a single parameter.
    pub fn grad_of(&self, id: ParamId) -> Option<&[f64]> {
        self.leaf_ids[id.0].and_then(|v| self.tape.grad(v))
    }
}

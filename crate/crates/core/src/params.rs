//! Named parameter storage and its binding onto a tape.

use indexmap::IndexMap;

use crate::error::{contract, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Ordered name → tensor map. Order is insertion order and is part of a
/// model's identity (checkpoints and bake preserve it).
pub type ParamMap = IndexMap<String, Tensor>;

/// Parameters and buffers recorded as leaves on one tape.
pub struct Bound<'t> {
    vars: IndexMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Trainable `params` become gradient leaves, `buffers` become constants.
    pub fn new(tape: &'t Tape, params: &ParamMap, buffers: &ParamMap) -> Self {
        let mut vars = IndexMap::with_capacity(params.len() + buffers.len());
        for (name, t) in params {
            vars.insert(name.clone(), tape.param(t.clone()));
        }
        for (name, t) in buffers {
            vars.insert(name.clone(), tape.constant(t.clone()));
        }
        Self { vars }
    }

    /// Everything as constants, for inference.
    pub fn frozen(tape: &'t Tape, params: &ParamMap, buffers: &ParamMap) -> Self {
        let vars = params
            .iter()
            .chain(buffers)
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .collect();
        Self { vars }
    }

    /// Binds explicit vars, e.g. the probe points of a gradient check.
    pub fn from_vars(vars: IndexMap<String, Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}

pub(crate) fn numel(params: &ParamMap) -> usize {
    params.values().map(Tensor::numel).sum()
}

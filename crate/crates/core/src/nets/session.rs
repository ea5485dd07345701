use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use xreg_autograd::{Graph, Parameter, Tensor, Var};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Encoder, decoders and transformation networks.
    Generator,
    Discriminator,
}

/// Which parameter group receives gradients in a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Only(ParamGroup),
    Everything,
}

impl Trainable {
    fn includes(self, group: ParamGroup) -> bool {
        match self {
            Trainable::Nothing => false,
            Trainable::Only(g) => g == group,
            Trainable::Everything => true,
        }
    }
}

/// One computation graph plus the model parameters bound into it. Each
/// parameter is bound at most once, so every use of a shared network refers
/// to the same leaf and gradients from all uses accumulate there.
pub struct Session {
    pub graph: Graph<f32>,
    trainable: Trainable,
    bound: BTreeMap<String, Var>,
}

impl Session {
    pub fn new(trainable: Trainable) -> Self {
        Session {
            graph: Graph::new(),
            trainable,
            bound: BTreeMap::new(),
        }
    }

    pub fn trainable(&self) -> Trainable {
        self.trainable
    }

    pub fn bind(&mut self, p: &Parameter, group: ParamGroup) -> Result<Var> {
        if let Some(&v) = self.bound.get(p.name()) {
            return Ok(v);
        }
        let v = self.graph.leaf(p.tensor.clone(), self.trainable.includes(group))?;
        self.bound.insert(p.name().to_string(), v);
        Ok(v)
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        Ok(self.graph.constant(t)?)
    }

    /// Gradients of every bound trainable parameter reached by backward.
    pub fn gradients(&self) -> HashMap<String, Tensor> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| self.graph.grad(v).map(|g| (name.clone(), g)))
            .collect()
    }
}

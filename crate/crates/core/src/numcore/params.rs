use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{GresError, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Glorot,
    Zeros,
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// All parameters of a model, addressable by id or dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Glorot => {
                let (fan_in, fan_out) = match shape {
                    [n] => (*n, 1),
                    [a, b] => (*a, *b),
                    _ => {
                        return Err(GresError::Contract(format!(
                            "cannot derive fan-in/out for shape {shape:?}"
                        )))
                    }
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape.to_vec(), data)?
            }
        };
        self.insert(name, tensor)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(GresError::Contract(format!(
                "parameter {name} registered twice"
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id);
        let grad = vec![0.0; tensor.numel()];
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            grad,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Parameters in name order, the order used on disk.
    pub fn sorted(&self) -> impl Iterator<Item = &Parameter> {
        self.by_name.values().map(|id| &self.params[id.0])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces every value with one loaded from disk; the name sets and shapes must match.
    pub fn assign(&mut self, loaded: Vec<(String, Tensor)>) -> Result<()> {
        if loaded.len() != self.params.len() {
            return Err(GresError::Compatibility(format!(
                "checkpoint has {} parameters, model expects {}",
                loaded.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in loaded {
            let id = self.id(&name).ok_or_else(|| {
                GresError::Compatibility(format!("unexpected parameter {name} in checkpoint"))
            })?;
            let param = &mut self.params[id.0];
            if param.tensor.shape() != tensor.shape() {
                return Err(GresError::Compatibility(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    tensor.shape(),
                    param.tensor.shape()
                )));
            }
            param.tensor = tensor;
        }
        Ok(())
    }
}

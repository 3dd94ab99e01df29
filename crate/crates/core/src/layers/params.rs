use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{grad_check_many, GradCheck, GradCheckOptions, Tape, Tensor, Var};

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on ±sqrt(6 / fan_in).
    HeUniform { fan_in: usize },
    Zeros,
}

/// Declaration of one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn he(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::HeUniform { fan_in },
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Anything that owns named parameters.
pub trait Module {
    fn param_specs(&self) -> Vec<ParamSpec>;

    fn count_params(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Checks that names and shapes agree exactly with `specs`.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.params.len() {
            return Err(Error::Config(format!(
                "model declares {} parameter tensors, store holds {}",
                specs.len(),
                self.params.len()
            )));
        }
        for spec in specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape("parameter", &spec.shape, t.shape()));
            }
        }
        Ok(())
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Deterministic initialisation: specs are filled in declaration order from
/// one seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in specs {
        if spec.shape.is_empty() || spec.shape.contains(&0) {
            return Err(Error::Config(format!(
                "parameter `{}` has invalid shape {:?}",
                spec.name, spec.shape
            )));
        }
        if store.params.contains_key(&spec.name) {
            return Err(Error::Config(format!("duplicate parameter `{}`", spec.name)));
        }
        let n = spec.numel();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
    }
    Ok(store)
}

/// Parameter leaves of one tape.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients after `tape.backward`, keyed by parameter name.
    pub fn grads(&self, tape: &Tape) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                tape.grad(v)
                    .map(|g| (k.clone(), g.to_vec()))
                    .ok_or_else(|| Error::Backward(format!("no gradient for `{k}`")))
            })
            .collect()
    }
}

/// Central-difference check of `f` with respect to every scalar in `store`.
pub fn grad_check_params<F>(store: &ParamStore, opts: GradCheckOptions, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let names: Vec<String> = store.params.keys().cloned().collect();
    let values: Vec<Tensor> = store.params.values().cloned().collect();
    grad_check_many(
        |tape, vars| {
            let bound = Bound {
                vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
            };
            f(tape, &bound)
        },
        &values,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;

    #[test]
    fn linear_has_weights_plus_bias() {
        let l = Linear::new("fc", 4, 3);
        assert_eq!(l.count_params(), 15);
        let store = init_params(&l.param_specs(), 0).unwrap();
        assert_eq!(store.numel(), 15);
        assert!(store.get("fc.bias").unwrap().data().iter().all(|&b| b == 0.0));
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(store
            .get("fc.weight")
            .unwrap()
            .data()
            .iter()
            .all(|w| w.abs() <= bound));
    }

    #[test]
    fn same_seed_same_parameters() {
        let l = Linear::new("fc", 7, 5);
        let a = init_params(&l.param_specs(), 42).unwrap();
        let b = init_params(&l.param_specs(), 42).unwrap();
        let c = init_params(&l.param_specs(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        let specs = vec![ParamSpec::he("w", &[0, 3], 1)];
        assert!(init_params(&specs, 0).is_err());
        let dup = vec![ParamSpec::zeros("w", &[1]), ParamSpec::zeros("w", &[1])];
        assert!(init_params(&dup, 0).is_err());
    }

    #[test]
    fn validate_catches_shape_drift() {
        let l = Linear::new("fc", 2, 2);
        let mut store = init_params(&l.param_specs(), 1).unwrap();
        store.validate(&l.param_specs()).unwrap();
        store.insert("fc.bias", Tensor::zeros(&[3]));
        assert!(store.validate(&l.param_specs()).is_err());
    }
}

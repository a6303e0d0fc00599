use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
///
/// Layers hold [`ParamId`]s rather than tensors, so one architecture can be
/// evaluated with stores of different element types.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    values: Vec<Rc<Tensor<T>>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    /// Mutable access; copies the buffer if a bound `Var` still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Rc::new(v.cast())).collect(),
        }
    }

    /// Replaces the value of `id`, which must keep its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        self.values[id.0].expect_same_shape(&value, "set_param")?;
        self.values[id.0] = Rc::new(value);
        Ok(())
    }

    /// Copies values from `other` by name. Every parameter must be present
    /// with the same shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.len() {
            let src = other
                .find(&self.names[i])
                .ok_or_else(|| Error::Format(format!("missing parameter {}", self.names[i])))?;
            let value = (*other.values[src.0]).clone();
            self.set(ParamId(i), value)?;
        }
        Ok(())
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf_rc(Rc::clone(v))).collect(),
        }
    }

    /// Wraps every parameter as an untracked constant.
    pub fn bind_constants(&self) -> Bound<T> {
        Bound {
            vars: self.values.iter().map(|v| Var::constant_rc(Rc::clone(v))).collect(),
        }
    }
}

/// Parameters of one forward pass, as graph variables.
pub struct Bound<T: Element = f32> {
    vars: Vec<Var<T>>,
}

impl<T: Element> Bound<T> {
    pub fn get(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

/// Gain for a leaky ReLU with the trunk's negative slope of 0.1.
fn leaky_gain() -> f64 {
    (2.0 / (1.0 + 0.1f64 * 0.1)).sqrt()
}

/// Kaiming-uniform fan-in initialization: `U(-b, b)`, `b = gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = leaky_gain() * (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}

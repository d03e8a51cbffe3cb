use std::collections::HashMap;
use std::ops::Index;
use std::rc::Rc;

use rand::Rng;

use crate::{Float, Tape, Tensor, Var};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Rc<Tensor<T>>>,
    lookup: HashMap<String, usize>,
}

impl<T: Float> std::fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.len())
            .field("scalars", &self.num_scalars())
            .finish()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        self.lookup.insert(name.clone(), self.values.len());
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

    /// Total number of scalars over all tensors.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), self.names[i].as_str(), v.as_ref()))
    }

    /// Binds every parameter for one forward pass: those selected by
    /// `trainable` become tape leaves, the rest constants.
    pub fn bind(&self, tape: &Rc<Tape<T>>, trainable: impl Fn(&str) -> bool) -> ParamVars<T> {
        let vars = self
            .values
            .iter()
            .zip(&self.names)
            .map(|(v, n)| {
                if trainable(n) {
                    tape.leaf_shared(v.clone())
                } else {
                    Var::constant_shared(v.clone())
                }
            })
            .collect();
        ParamVars { vars }
    }

    /// Binds every parameter as a constant (inference).
    pub fn constants(&self) -> ParamVars<T> {
        ParamVars {
            vars: self.values.iter().map(|v| Var::constant_shared(v.clone())).collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Rc::new(v.cast())).collect(),
            lookup: self.lookup.clone(),
        }
    }
}

/// Parameters bound to variables for one forward pass.
pub struct ParamVars<T> {
    vars: Vec<Var<T>>,
}

impl<T: Float> ParamVars<T> {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Var<T>)> {
        self.vars.iter().enumerate().map(|(i, v)| (ParamId(i), v))
    }
}

impl<T> Index<ParamId> for ParamVars<T> {
    type Output = Var<T>;
    fn index(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }
}

/// Registers parameters under a hierarchical name prefix and initialises
/// them from a caller-owned generator.
pub struct ParamBuilder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Float, R: Rng> ParamBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A builder whose names are prefixed by `scope.`.
    pub fn scope(&mut self, scope: &str) -> ParamBuilder<'_, T, R> {
        let prefix = if self.prefix.is_empty() {
            scope.to_string()
        } else {
            format!("{}.{}", self.prefix, scope)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn uniform(&mut self, name: &str, shape: [usize; 4], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::cast_from(self.rng.gen_range(-bound..=bound)))
            .collect();
        let full = self.full_name(name);
        self.store.add(full, Tensor::from_vec(shape, data))
    }

    pub fn constant(&mut self, name: &str, shape: [usize; 4], value: f64) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, Tensor::full(shape, T::cast_from(value)))
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, value)
    }

    pub fn rng(&mut self) -> &mut R {
        self.rng
    }
}

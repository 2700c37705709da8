use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub trainable: bool,
    /// Subject to decoupled weight decay.
    pub decay: bool,
}

impl<T> Param<T> {
    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Rows/cols when viewed as a matrix: the last dimension is the column count.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            dims => {
                let cols = *dims.last().unwrap();
                (self.value.len() / cols, cols)
            }
        }
    }
}

/// Ordered collection of named parameters. Order is insertion order and is the
/// canonical order for checkpoints, gradient reduction and optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, param: Param<T>) -> ParamId {
        assert_eq!(
            param.shape.iter().product::<usize>(),
            param.value.len(),
            "shape does not match value length for {}",
            param.name
        );
        assert!(
            !self.index.contains_key(&param.name),
            "duplicate parameter {}",
            param.name
        );
        let id = self.params.len();
        self.index.insert(param.name.clone(), id);
        self.params.push(param);
        ParamId(id)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            trainable: true,
            decay: false,
        })
    }

    pub fn add_const(&mut self, name: &str, shape: &[usize], value: T) -> ParamId {
        let id = self.add_zeros(name, shape);
        self.params[id.0].value.iter_mut().for_each(|x| *x = value);
        id
    }

    pub fn add_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, decay: bool, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).unwrap();
        let value = (0..n).map(|_| T::c(dist.sample(rng))).collect();
        self.add(Param {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            trainable: true,
            decay,
        })
    }

    pub fn add_frozen(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> ParamId {
        self.add(Param {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            trainable: false,
            decay: false,
        })
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|&x| U::c(x.f64())).collect(),
                    trainable: p.trainable,
                    decay: p.decay,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient accumulators aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Grads {
            data: store.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.data[id.0]
    }

    /// Element-wise sum, in a fixed order.
    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .map(|x| {
                let v = x.f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }
}

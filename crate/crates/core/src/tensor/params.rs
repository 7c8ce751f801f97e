use rand::Rng;

use super::{numel, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor owned by a model. Non-trainable entries hold running
/// statistics and never receive gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        data: Vec<T>,
        trainable: bool,
    ) -> ParamId {
        assert_eq!(
            data.len(),
            numel(shape),
            "parameter data does not match its shape"
        );
        let grad = vec![T::zero(); data.len()];
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            data,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn constant(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: f64,
        trainable: bool,
    ) -> ParamId {
        self.add(name, shape, vec![T::of(value); numel(shape)], trainable)
    }

    /// Kaiming-uniform initialization, bound `sqrt(6 / fan_in)`.
    pub fn kaiming_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..numel(shape))
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        self.add(name, shape, data, true)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    /// Convert to another precision (gradients are reset).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.as_f64())).collect(),
                    grad: vec![U::zero(); p.data.len()],
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Gradients, NumericsError, Scalar, Tape, Tensor, Var};

/// Parameter group; decides learning rate, weight decay and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Group {
    Trunk,
    DatasetMlp(u32),
    DatasetHead(u32),
    Latents,
    PosEnc,
}

impl Group {
    pub fn dataset(self) -> Option<u32> {
        match self {
            Group::DatasetMlp(g) | Group::DatasetHead(g) => Some(g),
            _ => None,
        }
    }

    pub fn tag(self) -> String {
        match self {
            Group::Trunk => "trunk".to_string(),
            Group::DatasetMlp(g) => alloc::format!("dataset_mlp:{}", g),
            Group::DatasetHead(g) => alloc::format!("dataset_head:{}", g),
            Group::Latents => "latents".to_string(),
            Group::PosEnc => "pos_enc".to_string(),
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "trunk" => Some(Group::Trunk),
            "latents" => Some(Group::Latents),
            "pos_enc" => Some(Group::PosEnc),
            _ => {
                let (kind, id) = tag.split_once(':')?;
                let id = id.parse().ok()?;
                match kind {
                    "dataset_mlp" => Some(Group::DatasetMlp(id)),
                    "dataset_head" => Some(Group::DatasetHead(id)),
                    _ => None,
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
    pub group: Group,
    /// Excluded from weight decay (norm gains/biases, biases, latents).
    pub no_decay: bool,
}

/// Named parameters with gradient slots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(
        &mut self,
        name: &str,
        value: Tensor<T>,
        group: Group,
        no_decay: bool,
    ) -> Result<ParamId, NumericsError> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name: name.to_string(), value, grad, trainable: true, group, no_decay });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable(&mut self, pred: impl Fn(&Param<T>) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(p);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = T::zero();
            }
        }
    }

    /// Records every parameter on `tape` as a leaf; trainable ones need grads.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone(), p.trainable)).collect();
        Bound { vars }
    }

    /// Overwrites the gradient slots with `grads` (absent entries become zero).
    pub fn load_grads(&mut self, grads: &GradSet<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            match g {
                Some(g) => p.grad.data_mut().copy_from_slice(g.data()),
                None => p.grad.data_mut().iter_mut().for_each(|x| *x = T::zero()),
            }
        }
    }
}

/// Parameter leaves recorded on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Extracts per-parameter gradients from a reverse pass.
    pub fn collect<T: Scalar>(&self, mut grads: Gradients<T>) -> GradSet<T> {
        GradSet { grads: self.vars.iter().map(|&v| grads.take(v)).collect() }
    }
}

/// Per-parameter gradient buffers, aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradSet<T> {
    pub grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradSet<T> {
    pub fn empty(len: usize) -> Self {
        Self { grads: (0..len).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// `self += other`, element by element, in parameter order.
    pub fn accumulate(&mut self, other: &GradSet<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}

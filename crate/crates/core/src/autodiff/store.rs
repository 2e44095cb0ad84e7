use super::tensor::{Scalar, Tensor};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamMeta {
    pub name: String,
    /// Rows of this matrix are rescaled by the l2 max-norm constraint.
    pub constrained: bool,
    /// Gradients arrive as sparse row updates (embedding tables).
    pub row_sparse: bool,
    /// Frozen parameters keep their gradients but skip optimizer steps.
    pub trainable: bool,
}

/// Owns every trainable tensor of a model, keyed by [`ParamId`].
///
/// Registration order is the canonical parameter order: initialization
/// draws, checkpoint layout, and gradient application all follow it.
#[derive(Clone)]
pub struct ParamStore<F> {
    tensors: Vec<Tensor<F>>,
    metas: Vec<ParamMeta>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            metas: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &str, mut tensor: Tensor<F>, meta: RegisterOpts) -> ParamId {
        debug_assert!(
            !self.metas.iter().any(|m| m.name == name),
            "duplicate parameter name {name}"
        );
        tensor.enable_grad();
        let id = ParamId(self.tensors.len());
        self.tensors.push(tensor);
        self.metas.push(ParamMeta {
            name: name.to_string(),
            constrained: meta.constrained,
            row_sparse: meta.row_sparse,
            trainable: meta.trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn meta(&self, id: ParamId) -> &ParamMeta {
        &self.metas[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.metas.iter().position(|m| m.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamMeta, &Tensor<F>)> {
        self.metas
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (m, t))| (ParamId(i), m, t))
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Deep copy of all parameter values (used for best-epoch snapshots).
    pub fn snapshot(&self) -> Vec<Tensor<F>> {
        self.tensors.clone()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<F>]) {
        assert_eq!(snapshot.len(), self.tensors.len());
        for (dst, src) in self.tensors.iter_mut().zip(snapshot) {
            assert_eq!(dst.shape(), src.shape());
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegisterOpts {
    pub constrained: bool,
    pub row_sparse: bool,
    pub trainable: bool,
}

impl Default for RegisterOpts {
    fn default() -> Self {
        RegisterOpts {
            constrained: false,
            row_sparse: false,
            trainable: true,
        }
    }
}

impl RegisterOpts {
    pub fn constrained() -> Self {
        RegisterOpts {
            constrained: true,
            ..Self::default()
        }
    }

    pub fn row_sparse() -> Self {
        RegisterOpts {
            row_sparse: true,
            ..Self::default()
        }
    }
}

enum GradSlot<F> {
    Empty,
    Dense(Vec<F>),
    /// (row index, d-vector) contributions in arrival order.
    Rows(Vec<(usize, Vec<F>)>),
}

/// Gradient contributions from one or more graphs, aligned with a
/// [`ParamStore`], applied in deterministic parameter order.
pub struct GradBuffer<F> {
    slots: Vec<GradSlot<F>>,
}

impl<F: Scalar> GradBuffer<F> {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        GradBuffer {
            slots: (0..store.len()).map(|_| GradSlot::Empty).collect(),
        }
    }

    pub fn add_dense(&mut self, id: ParamId, grad: &[F]) {
        match &mut self.slots[id.0] {
            GradSlot::Dense(acc) => {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a = *a + *g;
                }
            }
            slot @ GradSlot::Empty => *slot = GradSlot::Dense(grad.to_vec()),
            GradSlot::Rows(_) => panic!("mixed dense and sparse gradients for one parameter"),
        }
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, grad: Vec<F>) {
        match &mut self.slots[id.0] {
            GradSlot::Rows(rows) => rows.push((row, grad)),
            slot @ GradSlot::Empty => *slot = GradSlot::Rows(vec![(row, grad)]),
            GradSlot::Dense(_) => panic!("mixed dense and sparse gradients for one parameter"),
        }
    }

    /// Adds the buffered contributions into the store's gradient
    /// accumulators.
    pub fn apply_to(&self, store: &mut ParamStore<F>) {
        for (i, slot) in self.slots.iter().enumerate() {
            let tensor = store.get_mut(ParamId(i));
            let cols = tensor.shape().last().copied().unwrap_or(1);
            let grad = tensor.grad_mut().expect("parameter without gradient");
            match slot {
                GradSlot::Empty => {}
                GradSlot::Dense(g) => {
                    for (a, v) in grad.iter_mut().zip(g) {
                        *a = *a + *v;
                    }
                }
                GradSlot::Rows(rows) => {
                    for (row, g) in rows {
                        let dst = &mut grad[row * cols..row * cols + cols];
                        for (a, v) in dst.iter_mut().zip(g) {
                            *a = *a + *v;
                        }
                    }
                }
            }
        }
    }
}

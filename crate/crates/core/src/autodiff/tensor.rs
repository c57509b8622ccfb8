use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::Op;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static RECORDING: Cell<bool> = const { Cell::new(true) };
    // Minimum differentiation order stamped on newly recorded nodes.
    static LEVEL: Cell<u8> = const { Cell::new(0) };
}

pub(crate) fn recording() -> bool {
    RECORDING.with(|r| r.get())
}

/// Runs `f` with graph recording switched off.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = RECORDING.with(|r| r.replace(false));
    let out = f();
    RECORDING.with(|r| r.set(prev));
    out
}

pub(crate) fn with_recording_level<R>(record: bool, level: u8, f: impl FnOnce() -> R) -> R {
    let prev_rec = RECORDING.with(|r| r.replace(record));
    let prev_lvl = LEVEL.with(|l| l.replace(level));
    let out = f();
    RECORDING.with(|r| r.set(prev_rec));
    LEVEL.with(|l| l.set(prev_lvl));
    out
}

pub(crate) enum NodeKind {
    Leaf,
    Op { op: Op, inputs: Vec<Tensor> },
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) order: u8,
    pub(crate) kind: NodeKind,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    node: Option<Node>,
}

/// Dense row-major `f64` tensor, optionally recorded in a differentiation graph.
///
/// Cloning is cheap (shared storage). A tensor is tracked when it is a
/// gradient leaf or was produced by an operation with a tracked input while
/// recording was enabled.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner { shape, data, node }))
    }

    /// Untracked tensor. Panics if `data.len()` disagrees with `shape`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Self::build(shape.to_vec(), data, None)
    }

    /// Gradient leaf (a parameter or an input we differentiate with respect to).
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::new(data, shape).requires_grad()
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(Vec::new(), vec![v], None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![0.0; shape.iter().product()], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new(vec![1.0; shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::new(vec![v; shape.iter().product()], shape)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(data, &[n, n])
    }

    /// Fresh gradient leaf sharing this tensor's values.
    pub fn requires_grad(&self) -> Self {
        let node = Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            order: 0,
            kind: NodeKind::Leaf,
        };
        Self::build(self.0.shape.clone(), self.0.data.clone(), Some(node))
    }

    /// Untracked copy of the values.
    pub fn detach(&self) -> Self {
        if self.0.node.is_none() {
            return self.clone();
        }
        Self::build(self.0.shape.clone(), self.0.data.clone(), None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[&Tensor]) -> Self {
        let tracked = recording() && inputs.iter().any(|t| t.is_tracked());
        if !tracked {
            return Self::build(shape, data, None);
        }
        let order = inputs
            .iter()
            .filter_map(|t| t.node().map(|n| n.order))
            .max()
            .unwrap_or(0)
            .max(LEVEL.with(|l| l.get()));
        let node = Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            order,
            kind: NodeKind::Op {
                op,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            },
        };
        Self::build(shape, data, Some(node))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.0.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    pub(crate) fn id(&self) -> Option<u64> {
        self.0.node.as_ref().map(|n| n.id)
    }

    /// Differentiation order of the recorded node (0 for a first-order graph).
    pub fn order(&self) -> Option<u8> {
        self.0.node.as_ref().map(|n| n.order)
    }

    /// `(rows, cols)` of a 2-d tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let (_, c) = self.dims2().expect("at2 on non-matrix");
        self.0.data[i * c + j]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("tracked", &self.is_tracked())
            .field("data", &self.0.data)
            .finish()
    }
}

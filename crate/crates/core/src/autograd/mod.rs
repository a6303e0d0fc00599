//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every differentiable operation is a method on [`Var`]. When at least one
//! operand is attached to a recording [`Tape`], the result is appended to that
//! tape together with a closure computing the vector-Jacobian product for each
//! operand. [`Tape::backward`] walks the nodes in reverse insertion order, which
//! is a valid reverse topological order because parents are always recorded
//! before their children.
//!
//! ```
//! use vesrnet::autograd::Tape;
//! use vesrnet::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = x.mul(&x).unwrap().sum().scale(0.5);
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).data(), &[1.0, -2.0, 0.5]);
//! ```

mod ops;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{Element, Tensor};

type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Element> {
    op: &'static str,
    /// One entry per operand; `None` for operands that are constants.
    parents: Vec<Option<usize>>,
    shape: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    generation: Cell<u64>,
    backward_done: Cell<bool>,
}

/// Append-only record of the operations of one forward pass.
///
/// A tape is single-threaded and is normally created fresh for every
/// training step.
pub struct Tape<T: Element = f32> {
    inner: Rc<TapeInner<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that never records: leaves are plain constants and no
    /// intermediate values are retained beyond their `Var` handles.
    pub fn no_grad() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Self {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                recording,
                generation: Cell::new(0),
                backward_done: Cell::new(false),
            }),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.recording
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a gradient-requiring input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.leaf_rc(Rc::new(value))
    }

    pub fn leaf_rc(&self, value: Rc<Tensor<T>>) -> Var<T> {
        if !self.inner.recording {
            return Var { value, node: None };
        }
        let id = self.push(Node {
            op: "leaf",
            parents: Vec::new(),
            shape: value.shape().to_vec(),
            backward: None,
        });
        Var {
            value,
            node: Some(self.node_ref(id)),
        }
    }

    /// Drops every recorded node. Handles created before the reset become
    /// detached from this tape and are rejected if combined with new ones.
    pub fn reset(&self) {
        self.inner.nodes.borrow_mut().clear();
        self.inner.generation.set(self.inner.generation.get() + 1);
        self.inner.backward_done.set(false);
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn node_ref(&self, id: usize) -> NodeRef<T> {
        NodeRef {
            tape: Rc::clone(&self.inner),
            generation: self.inner.generation.get(),
            id,
        }
    }

    /// Runs the reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().to_vec()).into());
        }
        let node = loss.node.as_ref().ok_or(TensorError::Detached)?;
        if !Rc::ptr_eq(&node.tape, &self.inner) || node.generation != self.inner.generation.get()
        {
            return Err(TensorError::TapeMismatch.into());
        }
        if self.inner.backward_done.replace(true) {
            return Err(TensorError::BackwardTwice.into());
        }

        let mut nodes = self.inner.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[node.id] = Some(Tensor::ones(loss.shape()));

        for i in (0..=node.id).rev() {
            let Some(upstream) = grads[i].as_ref() else {
                continue;
            };
            let Some(backward) = nodes[i].backward.take() else {
                continue;
            };
            let local = backward(upstream)?;
            debug_assert_eq!(local.len(), nodes[i].parents.len(), "{}", nodes[i].op);
            for (parent, g) in nodes[i].parents.iter().zip(local) {
                let (Some(p), Some(g)) = (parent, g) else {
                    continue;
                };
                debug_assert!(*p < i);
                match &mut grads[*p] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }

        Ok(Gradients {
            tape: Rc::clone(&self.inner),
            generation: self.inner.generation.get(),
            shapes: nodes.iter().map(|n| n.shape.clone()).collect(),
            grads,
        })
    }
}

#[derive(Clone)]
struct NodeRef<T: Element> {
    tape: Rc<TapeInner<T>>,
    generation: u64,
    id: usize,
}

/// A tensor value, optionally tracked on a tape.
#[derive(Clone)]
pub struct Var<T: Element = f32> {
    value: Rc<Tensor<T>>,
    node: Option<NodeRef<T>>,
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.value)
            .field("node", &self.node.as_ref().map(|n| n.id))
            .finish()
    }
}

impl<T: Element> Var<T> {
    /// An untracked value; no gradient flows into it.
    pub fn constant(value: Tensor<T>) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn constant_rc(value: Rc<Tensor<T>>) -> Self {
        Self { value, node: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_rc(&self) -> &Rc<Tensor<T>> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Tape position, when tracked.
    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self {
            value: Rc::clone(&self.value),
            node: None,
        }
    }

    /// Convenience for `tape.backward(self)` on the tape this var lives on.
    pub fn backward(&self) -> Result<Gradients<T>> {
        let node = self.node.as_ref().ok_or(TensorError::Detached)?;
        Tape {
            inner: Rc::clone(&node.tape),
        }
        .backward(self)
    }
}

/// Appends `value` as the result of `op` over `inputs`.
///
/// `backward` receives the upstream gradient and returns one gradient per
/// input (or `None` where an input needs none).
pub(crate) fn record<T, F>(
    op: &'static str,
    inputs: &[&Var<T>],
    value: Tensor<T>,
    backward: F,
) -> Result<Var<T>>
where
    T: Element,
    F: FnOnce(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> + 'static,
{
    if cfg!(debug_assertions) && !value.is_finite() && inputs.iter().all(|v| v.value.is_finite()) {
        panic!("{op} produced a non-finite value from finite inputs");
    }

    let mut tape: Option<&NodeRef<T>> = None;
    for node in inputs.iter().filter_map(|v| v.node.as_ref()) {
        match tape {
            None => tape = Some(node),
            Some(t) if Rc::ptr_eq(&t.tape, &node.tape) && t.generation == node.generation => {}
            Some(_) => return Err(TensorError::TapeMismatch.into()),
        }
    }
    let Some(anchor) = tape else {
        return Ok(Var::constant(value));
    };
    if anchor.generation != anchor.tape.generation.get() {
        return Err(TensorError::TapeMismatch.into());
    }

    let tape = Tape {
        inner: Rc::clone(&anchor.tape),
    };
    let id = tape.push(Node {
        op,
        parents: inputs.iter().map(|v| v.node.as_ref().map(|n| n.id)).collect(),
        shape: value.shape().to_vec(),
        backward: Some(Box::new(backward)),
    });
    Ok(Var {
        value: Rc::new(value),
        node: Some(tape.node_ref(id)),
    })
}

/// Result of a reverse sweep.
pub struct Gradients<T: Element = f32> {
    tape: Rc<TapeInner<T>>,
    generation: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` is not on this tape.
    pub fn wrt(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        let node = self.own_node(v)?;
        self.grads.get(node).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`; zero when the loss does not depend on it.
    pub fn get(&self, v: &Var<T>) -> Tensor<T> {
        match self.own_node(v) {
            Some(id) => match &self.grads[id] {
                Some(g) => g.clone(),
                None => Tensor::zeros(&self.shapes[id]),
            },
            None => Tensor::zeros(v.shape()),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, v: &Var<T>) -> Tensor<T> {
        match self.own_node(v) {
            Some(id) => self.grads[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[id])),
            None => Tensor::zeros(v.shape()),
        }
    }

    fn own_node(&self, v: &Var<T>) -> Option<usize> {
        let node = v.node.as_ref()?;
        (Rc::ptr_eq(&node.tape, &self.tape) && node.generation == self.generation).then_some(node.id)
    }

    /// Number of nodes that received a gradient buffer.
    pub fn reached(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    /// Checks the post-backward invariant: every buffer matches its node's shape.
    pub fn shapes_consistent(&self) -> bool {
        self.grads
            .iter()
            .zip(&self.shapes)
            .all(|(g, s)| g.as_ref().is_none_or(|g| g.shape() == s.as_slice()))
    }
}

//! Tape-free dynamic graph: every [`Var`] remembers the inputs it was built
//! from and a closure that maps its output gradient to input gradients.
//!
//! Backward closures are written in terms of [`Var`] operations, so when
//! [`grad`] is asked to `create_graph`, the gradients it returns are
//! themselves differentiable. That is what makes gradient penalties
//! (a loss on a gradient norm) trainable.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) type BackwardFn = Box<dyn Fn(&[Var], &Var, &Var) -> Result<Vec<Option<Var>>>>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Restores the previous grad mode when dropped.
pub struct GradModeGuard {
    previous: bool,
}

impl GradModeGuard {
    pub fn set(enabled: bool) -> Self {
        let previous = GRAD_ENABLED.with(|c| c.replace(enabled));
        GradModeGuard { previous }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.previous));
    }
}

/// Run `f` without recording any graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = GradModeGuard::set(false);
    f()
}

struct Node {
    id: u64,
    value: RefCell<Tensor>,
    requires_grad: bool,
    op: &'static str,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A tensor-valued node in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Var#{}({}, grad={}, {:?})",
            self.0.id,
            self.0.op,
            self.0.requires_grad,
            self.0.value.borrow()
        )
    }
}

impl Var {
    fn leaf(value: Tensor, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            requires_grad,
            op: if requires_grad { "param" } else { "const" },
            inputs: Vec::new(),
            backward: None,
        }))
    }

    /// A value no gradient flows into.
    pub fn constant(value: Tensor) -> Self {
        Var::leaf(value, false)
    }

    /// A trainable leaf.
    pub fn parameter(value: Tensor) -> Self {
        Var::leaf(value, true)
    }

    /// A leaf that gradients can be taken with respect to (for example the
    /// interpolated point of a gradient penalty).
    pub fn input(value: Tensor) -> Self {
        Var::leaf(value, true)
    }

    pub(crate) fn from_op(
        value: Tensor,
        op: &'static str,
        inputs: Vec<Var>,
        backward: BackwardFn,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|v| v.requires_grad());
        if !track {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            requires_grad: true,
            op,
            inputs,
            backward: Some(backward),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn value(&self) -> Tensor {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    pub fn item(&self) -> f32 {
        self.0.value.borrow().item()
    }

    /// Replace the value of a leaf in place (optimizer updates, checkpoint
    /// loads). The shape must not change.
    pub fn set_value(&self, value: Tensor) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::Grad("set_value on a non-leaf node".into()));
        }
        if value.shape() != self.0.value.borrow().shape() {
            return Err(Error::Shape(format!(
                "set_value with {:?} on {:?}",
                value.shape(),
                self.shape()
            )));
        }
        *self.0.value.borrow_mut() = value;
        Ok(())
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.value())
    }

    pub fn same_node(&self, other: &Var) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

/// Gradients of `output` (summed over its elements) with respect to each of
/// `wrt`. Inputs that `output` does not depend on get a zero gradient.
///
/// With `create_graph`, the returned gradients are graph nodes and can be
/// differentiated again.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Result<Vec<Var>> {
    let seed = Var::constant(Tensor::ones(&output.shape()));
    grad_with_seed(output, &seed, wrt, create_graph)
}

pub fn grad_with_seed(
    output: &Var,
    seed: &Var,
    wrt: &[&Var],
    create_graph: bool,
) -> Result<Vec<Var>> {
    if seed.shape() != output.shape() {
        return Err(Error::Shape(format!(
            "seed {:?} for output {:?}",
            seed.shape(),
            output.shape()
        )));
    }
    let wanted: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();

    // Node ids increase with creation order and every node is created after
    // its inputs, so descending id is a valid reverse topological order.
    let mut nodes: Vec<Var> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.id()) {
            continue;
        }
        for input in &v.0.inputs {
            stack.push(input.clone());
        }
        nodes.push(v);
    }
    nodes.sort_by_key(|v| std::cmp::Reverse(v.id()));

    let _mode = GradModeGuard::set(create_graph);
    let mut grads: HashMap<u64, Var> = HashMap::new();
    let mut kept: HashMap<u64, Var> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.id(), seed.clone());
    }
    for node in &nodes {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if wanted.contains(&node.id()) {
            kept.insert(node.id(), g.clone());
        }
        let Some(backward) = &node.0.backward else {
            continue;
        };
        let input_grads = backward(&node.0.inputs, node, &g)?;
        for (input, ig) in node.0.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !input.requires_grad() {
                continue;
            }
            let acc = match grads.remove(&input.id()) {
                Some(prev) => prev.add(&ig)?,
                None => ig,
            };
            grads.insert(input.id(), acc);
        }
    }

    wrt.iter()
        .map(|v| {
            Ok(kept
                .get(&v.id())
                .cloned()
                .unwrap_or_else(|| Var::constant(Tensor::zeros(&v.shape()))))
        })
        .collect()
}

/// First-order gradients as plain tensors.
pub fn gradients(output: &Var, wrt: &[&Var]) -> Result<Vec<Tensor>> {
    Ok(grad(output, wrt, false)?.iter().map(Var::value).collect())
}

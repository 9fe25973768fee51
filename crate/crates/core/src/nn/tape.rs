//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every operation appends a node holding its value and, when gradients are
//! enabled, a closure that maps the node's output gradient onto its inputs.
//! Nodes are created in evaluation order, so a reverse sweep visits each
//! node once after all of its consumers.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient buffers indexed by node.
pub struct Grads {
    bufs: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Grads {
    /// Mutable gradient buffer of `v`, zero-initialized on first use.
    pub fn of(&mut self, v: Var) -> &mut [f64] {
        let n = self.lens[v.0];
        self.bufs[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    pub fn accumulate(&mut self, v: Var, g: &[f64]) {
        let buf = self.of(v);
        for (a, b) in buf.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.bufs[v.0].as_deref()
    }

    /// Gradient of `v` as a tensor shaped like its value (zeros if unreached).
    pub fn tensor(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.value(v).shape.clone();
        match &self.bufs[v.0] {
            Some(g) => Tensor { shape, data: g.clone() },
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.bufs[v.0].take()
    }
}

pub type BackwardFn = Box<dyn Fn(&Tape, &[f64], &mut Grads)>;

struct Node {
    value: Tensor,
    backward: Option<BackwardFn>,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            backward: None,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (parameter or input of interest).
    pub fn variable(&mut self, value: Tensor) -> Var {
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            value,
            backward: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an operation result computed from `parents`. `backward`
    /// receives the output gradient and accumulates into the gradients of
    /// the parents; it is dropped when no parent needs a gradient.
    pub fn push(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            backward: needs_grad.then_some(backward),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Reverse sweep from a scalar `loss`, seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with(loss, &[1.0])
    }

    pub fn backward_with(&self, out: Var, seed: &[f64]) -> Result<Grads> {
        if !self.grad_enabled {
            return Err(Error::invalid("backward on an inference tape"));
        }
        let mut grads = Grads {
            bufs: vec![None; self.nodes.len()],
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
        };
        grads.accumulate(out, seed);
        for i in (0..=out.0).rev() {
            let Some(back) = &self.nodes[i].backward else {
                continue;
            };
            let Some(g) = grads.bufs[i].take() else {
                continue;
            };
            // Interior gradients are released once propagated; only leaves keep theirs.
            back(self, &g, &mut grads);
        }
        Ok(grads)
    }
}

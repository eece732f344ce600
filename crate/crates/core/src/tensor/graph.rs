//! Reverse-mode tape.
//!
//! Every operator evaluates eagerly and pushes a node holding its output and
//! a backward closure object. [`Graph::backward`] replays the tape in reverse
//! and returns the gradient of every node that depends on a gradient leaf.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::NdArray;
use super::param::ParamStore;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward half of a catalog operator.
///
/// Returns one entry per input; `None` means no gradient flows to it.
pub trait Backward {
    fn backward(&self, inputs: &[&NdArray], output: &NdArray, grad: &NdArray)
        -> Vec<Option<NdArray>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct Node {
    value: NdArray,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    param: Option<String>,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl Graph {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: NdArray, requires_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            param,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: NdArray) -> Var {
        self.leaf(value, true, None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.leaf(value, false, None)
    }

    /// Copies a parameter onto the tape. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(self.leaf(p.value.clone(), p.trainable, Some(name.to_string())))
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push<B: Backward + 'static>(
        &mut self,
        value: NdArray,
        inputs: &[Var],
        op: B,
    ) -> Var {
        // non-finite values propagate; training checks the loss and the
        // updated parameters
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: requires_grad.then(|| Box::new(op) as Box<dyn Backward>),
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient of `root` (seeded with ones) with respect to every node.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<NdArray>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(NdArray::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&NdArray> = node.inputs.iter().map(|v| self.value(*v)).collect();
            let input_grads = op.backward(&inputs, &node.value, &g);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn param_nodes(&self) -> impl Iterator<Item = (usize, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.as_deref().map(|p| (i, p)))
    }
}

pub struct Grads {
    grads: Vec<Option<NdArray>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&NdArray> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter-leaf gradients into the store's gradient slots.
    pub fn accumulate(&self, graph: &Graph, store: &mut ParamStore) {
        for (i, name) in graph.param_nodes() {
            if let (Some(g), Some(p)) = (self.grads[i].as_ref(), store.get_mut(name)) {
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
    }
}

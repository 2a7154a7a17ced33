use std::collections::HashMap;

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local derivative of one recorded operation.
///
/// Given the gradient flowing into the op's output, returns the gradient
/// contribution for each input that needs one.
pub(crate) trait Backward {
    fn backward(&self, g: &Graph, out: Var, grad: &Tensor) -> Vec<(Var, Tensor)>;
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    backward: Option<Box<dyn Backward>>,
}

/// Append-only tape of tensor operations.
///
/// Every op evaluates eagerly; when any input requires a gradient the op's
/// derivative is recorded so [`Graph::backward`] can replay the tape in reverse.
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    param_vars: HashMap<String, Var>,
    param_order: Vec<String>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph that records derivatives.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            param_vars: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    /// Graph that never records derivatives; parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Free input that receives a gradient (when recording).
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = self.recording;
        self.push_leaf(t, rg)
    }

    /// Named parameter from `store`. Repeated lookups of the same name return
    /// the same node so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.param_vars.get(name) {
            return v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = self.input(t);
        self.param_vars.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        v
    }

    /// Same value as `v`, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(
        &mut self,
        value: Tensor,
        inputs: &[Var],
        backward: impl Backward + 'static,
    ) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value,
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be a scalar, got {:?}",
            self.shape(root)
        );
        self.backward_with(root, Tensor::ones(self.shape(root)))
    }

    /// Reverse pass seeded with an arbitrary output gradient.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(root));
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(seed);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].as_ref() else {
                continue;
            };
            for (parent, pg) in op.backward(self, Var(i), g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.shape(parent), "gradient shape for {parent:?}");
                match grads[parent.0].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[parent.0] = Some(pg),
                }
            }
        }
        let params = self
            .param_order
            .iter()
            .map(|n| (n.clone(), self.param_vars[n]))
            .collect();
        Gradients { grads, params }
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter touched by the graph, by name.
    /// Parameters that received no gradient are omitted.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.get(*v).map(|g| (n.as_str(), g)))
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.get(*v))
    }
}

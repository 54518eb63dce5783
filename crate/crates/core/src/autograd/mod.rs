//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every training step. Each operation pushes a
//! node holding its forward value and, when any input requires a gradient,
//! a backward rule. [`Tape::backward`] walks the nodes in reverse recording
//! order, which is a valid topological order by construction.

pub(crate) mod linalg;
mod ops;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::optim::Parameter;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Gradients of named trainable parameters.
pub type GradMap = BTreeMap<String, Tensor>;

/// What a backward rule sees: input values, the upstream gradient, and
/// which inputs actually need a gradient.
pub(crate) struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub grad: &'a Tensor,
    pub needs: Vec<bool>,
}

impl BackwardCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

/// Vector-Jacobian product of one recorded operation. Returns one entry per
/// input; `None` where no gradient was requested.
pub(crate) trait Backward: Send {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>>;
}

struct Rule {
    op: &'static str,
    inputs: Vec<Var>,
    backward: Box<dyn Backward>,
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    rule: Option<Rule>,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes carrying a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.rule.is_some()).count()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, rule: Option<Rule>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            rule,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    /// A free variable whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    /// Binds a parameter to this tape. Binding the same name twice returns
    /// the existing node so gradients accumulate across uses.
    pub fn parameter(&mut self, param: &Parameter) -> Var {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == param.name()) {
            return *v;
        }
        let v = self.push(param.value().clone(), param.trainable(), None);
        self.params.push((param.name().to_string(), v));
        v
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Backward(format!("variable {v:?} is not on this tape")));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Records an operation output. The backward rule is dropped when no
    /// input requires a gradient, so inference passes build no graph.
    pub(crate) fn record<B: Backward + 'static>(
        &mut self,
        op: &'static str,
        value: Tensor,
        inputs: &[Var],
        backward: B,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let value = value.ensure_finite(op)?;
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.index].requires_grad);
        let rule = requires_grad.then(|| Rule {
            op,
            inputs: inputs.to_vec(),
            backward: Box::new(backward),
        });
        Ok(self.push(value, requires_grad, rule))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.index].value;
        if !loss_value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                loss_value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(loss_value.shape().to_vec(), 1.0));

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = &node.rule else { continue };
            let Some(grad) = grads[idx].take() else { continue };
            let ctx = BackwardCtx {
                inputs: rule.inputs.iter().map(|v| &self.nodes[v.index].value).collect(),
                grad: &grad,
                needs: rule
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.index].requires_grad)
                    .collect(),
            };
            let input_grads = rule.backward.backward(&ctx)?;
            debug_assert_eq!(input_grads.len(), rule.inputs.len());
            for (v, g) in rule.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[v.index].requires_grad {
                    continue;
                }
                let g = g.ensure_finite(rule.op)?;
                match &mut grads[v.index] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // keep the gradient of recorded nodes available for inspection
            grads[idx] = Some(grad);
        }

        let mut params = GradMap::new();
        for (name, v) in &self.params {
            if !self.nodes[v.index].requires_grad {
                continue;
            }
            let g = grads[v.index]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.index].value.shape().to_vec()));
            params.insert(name.clone(), g);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params,
        })
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
    params: GradMap,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable belongs to another tape");
        self.grads[v.index]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.index].clone()))
    }

    /// Gradients of every trainable parameter bound on the tape.
    pub fn params(&self) -> &GradMap {
        &self.params
    }

    pub fn into_params(self) -> GradMap {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0; 6]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
        assert_eq!(g.wrt(s).data(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn foreign_loss_is_rejected() {
        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0));
        let tape = Tape::new();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let y = tape.leaf(Tensor::from_vec(vec![5.0, 6.0, 7.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(y).data(), &[0.0; 3]);
    }

    #[test]
    fn constants_build_no_graph() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
        assert_eq!(tape.recorded_ops(), 0);
    }

    #[test]
    fn non_finite_output_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![f32::MAX]));
        let err = tape.scale(a, 10.0).unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn parameters_accumulate_across_uses() {
        let p = Parameter::new("w", Tensor::from_vec(vec![2.0]), true);
        let frozen = Parameter::new("f", Tensor::from_vec(vec![3.0]), false);
        let mut tape = Tape::new();
        let w1 = tape.parameter(&p);
        let w2 = tape.parameter(&p);
        assert_eq!(w1, w2);
        let f = tape.parameter(&frozen);
        let prod = tape.mul(w1, f).unwrap();
        let sum = tape.add(prod, w2).unwrap();
        let loss = tape.sum(sum).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.params()["w"].data(), &[4.0]);
        assert!(!g.params().contains_key("f"));
    }
}

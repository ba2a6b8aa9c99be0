use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: input values, the forward output, the upstream
/// gradient, and which inputs actually need a gradient.
pub struct BackwardCtx<'a, F> {
    pub inputs: &'a [&'a Tensor<F>],
    pub output: &'a Tensor<F>,
    pub grad: &'a [F],
    pub needs: &'a [bool],
}

type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>>>;

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<F>>,
}

/// Wengert tape. Operations are appended in execution order, so every
/// operation's inputs precede it.
pub struct Graph<F: Element = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t, requires_grad, Vec::new(), None)
    }

    /// A leaf that always tracks gradients.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, true, Vec::new(), None)
    }

    /// A leaf that never tracks gradients.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, false, Vec::new(), None)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated at `v` by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Records an operation output. When no input requires a gradient the
    /// backward rule is dropped and the output is treated as a constant.
    pub fn record<B>(&mut self, value: Tensor<F>, inputs: &[Var], backward: B) -> Var
    where
        B: Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>> + 'static,
    {
        debug_assert!(
            inputs.iter().all(|v| v.0 < self.nodes.len()),
            "inputs must precede the operation"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if requires_grad {
            self.push(value, true, inputs.to_vec(), Some(Box::new(backward)))
        } else {
            self.push(value, false, inputs.to_vec(), None)
        }
    }

    fn push(
        &mut self,
        value: Tensor<F>,
        requires_grad: bool,
        inputs: Vec<Var>,
        backward: Option<BackwardFn<F>>,
    ) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            inputs,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `∂loss/∂·` to every node that requires a gradient. Each
    /// operation is visited once, in reverse recording order; gradients from
    /// several consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let input_grads = {
                let node = &self.nodes[i];
                match &node.backward {
                    None => None,
                    Some(rule) => {
                        let inputs: Vec<&Tensor<F>> =
                            node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                        let needs: Vec<bool> = node
                            .inputs
                            .iter()
                            .map(|v| self.nodes[v.0].requires_grad)
                            .collect();
                        let ctx = BackwardCtx {
                            inputs: &inputs,
                            output: &node.value,
                            grad: &grad_out,
                            needs: &needs,
                        };
                        Some(rule(&ctx))
                    }
                }
            };
            self.nodes[i].grad = Some(grad_out);

            if let Some(grads) = input_grads {
                let inputs = self.nodes[i].inputs.clone();
                debug_assert_eq!(grads.len(), inputs.len());
                for (v, g) in inputs.into_iter().zip(grads) {
                    let Some(g) = g else { continue };
                    let target = &mut self.nodes[v.0];
                    if !target.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.len(), target.value.numel());
                    match &mut target.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(vec![3]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
        let s = ops::sum(&mut g, x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gives_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 3.5]).unwrap());
        let sq = ops::mul(&mut g, x, x).unwrap();
        let s = ops::sum(&mut g, sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(3x) + sum(x*x); d/dx = 3 + 2x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![2], vec![0.5, -1.0]).unwrap());
        let a = ops::scale(&mut g, x, 3.0);
        let b = ops::mul(&mut g, x, x).unwrap();
        let sa = ops::sum(&mut g, a);
        let sb = ops::sum(&mut g, b);
        let l = ops::add(&mut g, sa, sb).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 1.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::full(vec![2], 2.0));
        let x = g.param(Tensor::full(vec![2], 1.0));
        let m = ops::mul(&mut g, c, x).unwrap();
        let s = ops::sum(&mut g, m);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }
}

//! Reverse sweep over the recorded graph.

use std::collections::{HashMap, HashSet};

use super::tensor::{with_recording_level, NodeKind, Tensor};
use crate::error::{Error, Result};

/// Adjoints of the gradient leaves reached by a backward pass.
#[derive(Default, Debug)]
pub struct Gradients {
    by_id: HashMap<u64, Tensor>,
}

impl Gradients {
    /// Gradient for `t`; `None` if `t` is untracked or unreachable from the loss.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        t.id().and_then(|id| self.by_id.get(&id))
    }

    /// Gradient for `t`, or zeros of its shape when the loss does not depend on it.
    pub fn get_or_zeros(&self, t: &Tensor) -> Tensor {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Reachable tracked tensors, sorted by descending node id (reverse recording order).
fn reverse_topo(loss: &Tensor) -> Vec<Tensor> {
    let mut seen = HashSet::new();
    let mut stack = vec![loss.clone()];
    let mut out = Vec::new();
    while let Some(t) = stack.pop() {
        let Some(node) = t.node() else { continue };
        if !seen.insert(node.id) {
            continue;
        }
        if let NodeKind::Op { inputs, .. } = &node.kind {
            for i in inputs {
                if i.is_tracked() {
                    stack.push(i.clone());
                }
            }
        }
        out.push(t);
    }
    out.sort_unstable_by_key(|t| std::cmp::Reverse(t.id().unwrap()));
    out
}

fn accumulate(adj: &mut HashMap<u64, Tensor>, id: u64, g: Tensor) -> Result<()> {
    match adj.remove(&id) {
        Some(prev) => {
            adj.insert(id, prev.add(&g)?);
        }
        None => {
            adj.insert(id, g);
        }
    }
    Ok(())
}

/// Core sweep. `targets = None` returns adjoints for every leaf; otherwise only
/// nodes that lead to a target are visited.
fn sweep(loss: &Tensor, targets: Option<&HashSet<u64>>, create_graph: bool) -> Result<HashMap<u64, Tensor>> {
    if !loss.is_scalar() {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    let Some(loss_order) = loss.order() else {
        return Ok(HashMap::new());
    };
    if create_graph && loss_order >= 1 {
        return Err(Error::NestingDepth);
    }
    let nodes = reverse_topo(loss);

    // needed[id]: node lies on a path to a requested target.
    let mut needed: HashSet<u64> = HashSet::new();
    for t in nodes.iter().rev() {
        let node = t.node().unwrap();
        let hit = match (&node.kind, targets) {
            (_, Some(ts)) if ts.contains(&node.id) => true,
            (NodeKind::Leaf, None) => true,
            (NodeKind::Leaf, Some(_)) => false,
            (NodeKind::Op { inputs, .. }, _) => inputs
                .iter()
                .any(|i| i.id().is_some_and(|id| needed.contains(&id))),
        };
        if hit {
            needed.insert(node.id);
        }
    }

    let level = if create_graph { loss_order + 1 } else { 0 };
    with_recording_level(create_graph, level, || {
        let mut adj: HashMap<u64, Tensor> = HashMap::new();
        adj.insert(loss.id().unwrap(), Tensor::ones(loss.shape()));
        let mut result = HashMap::new();
        for t in &nodes {
            let node = t.node().unwrap();
            if !needed.contains(&node.id) {
                continue;
            }
            let Some(g) = adj.remove(&node.id) else { continue };
            let is_target = match targets {
                Some(ts) => ts.contains(&node.id),
                None => matches!(node.kind, NodeKind::Leaf),
            };
            if let NodeKind::Op { op, inputs } = &node.kind {
                let need: Vec<bool> = inputs
                    .iter()
                    .map(|i| i.id().is_some_and(|id| needed.contains(&id)))
                    .collect();
                if need.iter().any(|&b| b) {
                    let grads = op.vjp(inputs, &g, &need)?;
                    for (inp, gi) in inputs.iter().zip(grads) {
                        if let (Some(id), Some(gi)) = (inp.id(), gi) {
                            accumulate(&mut adj, id, gi)?;
                        }
                    }
                }
            }
            if is_target {
                result.insert(node.id, g);
            }
        }
        Ok(result)
    })
}

/// Gradients of a scalar loss with respect to every leaf it depends on.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    Ok(Gradients {
        by_id: sweep(loss, None, false)?,
    })
}

/// Gradients of a scalar `loss` with respect to each tensor in `wrt`, which
/// may be leaves or intermediate results. With `create_graph` the returned
/// gradients are recorded and can be differentiated again (once).
pub fn grad(loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    let targets: HashSet<u64> = wrt.iter().filter_map(|t| t.id()).collect();
    let mut map = sweep(loss, Some(&targets), create_graph)?;
    Ok(wrt
        .iter()
        .map(|t| {
            t.id()
                .and_then(|id| map.remove(&id))
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let x = Tensor::param(vec![3.0], &[1]);
        let y = x.mul(&x).unwrap().sum();
        let g = backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn elu_derivative_at_minus_one() {
        let x = Tensor::param(vec![-1.0], &[1]);
        let g = grad(&x.elu().sum(), &[&x], false).unwrap();
        assert!((g[0].item() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        assert!(matches!(backward(&x.scale(2.0)), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn third_order_rejected() {
        let x = Tensor::param(vec![2.0], &[1]);
        let y = x.mul(&x).unwrap().mul(&x).unwrap().sum();
        let g1 = grad(&y, &[&x], true).unwrap().remove(0).sum();
        assert_eq!(g1.order(), Some(1));
        assert!(matches!(grad(&g1, &[&x], true), Err(Error::NestingDepth)));
        let g2 = grad(&g1, &[&x], false).unwrap();
        assert_eq!(g2[0].item(), 12.0);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::param(vec![1.5], &[1]);
        let s = x.sin();
        let y = s.mul(&s).unwrap().add(&s).unwrap().sum();
        let g = grad(&y, &[&x], false).unwrap()[0].item();
        let expect = (2.0 * 1.5f64.sin() + 1.0) * 1.5f64.cos();
        assert!((g - expect).abs() < 1e-14);
    }

    #[test]
    fn gradient_wrt_intermediate() {
        let x = Tensor::param(vec![2.0], &[1]);
        let h = x.scale(3.0);
        let y = h.mul(&h).unwrap().sum();
        let g = grad(&y, &[&h], false).unwrap();
        assert_eq!(g[0].item(), 12.0);
    }

    #[test]
    fn unreachable_gets_zeros() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        let z = Tensor::param(vec![1.0], &[1]);
        let g = grad(&x.sum(), &[&z], false).unwrap();
        assert_eq!(g[0].data(), &[0.0]);
    }
}

//! Jacobians and second-order products built on [`grad`].

use super::graph::grad;
use super::tensor::Tensor;
use crate::error::Result;

/// Jacobian of `f: R^n -> R^m` at a 1-d `x`, shape `[m, n]`, assembled from
/// `m` vector-Jacobian products.
pub fn jacobian<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n = x.numel();
    let xl = x.detach().requires_grad();
    let y = f(&xl)?;
    let m = y.numel();
    let y_row = y.reshape(&[1, m])?;
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let yi = y_row.slice_cols(i, i + 1)?.sum();
        let g = grad(&yi, &[&xl], false)?.remove(0);
        data.extend_from_slice(g.data());
    }
    Ok(Tensor::new(data, &[m, n]))
}

/// Per-sample Jacobians of a row-wise map `f: [b, n] -> [b, m]`, returned as
/// `m` recorded tensors of shape `[b, n]`; entry `i` holds row `i` of every
/// sample's Jacobian. With `create_graph` the rows stay differentiable with
/// respect to whatever `f` closes over.
pub fn batch_jacobian_rows(output: &Tensor, input: &Tensor, create_graph: bool) -> Result<Vec<Tensor>> {
    let (_, m) = output.dims2().ok_or_else(|| crate::Error::Rank {
        op: "batch_jacobian_rows",
        expected: 2,
        shape: output.shape().to_vec(),
    })?;
    (0..m)
        .map(|i| {
            let yi = output.slice_cols(i, i + 1)?.sum();
            Ok(grad(&yi, &[input], create_graph)?.remove(0))
        })
        .collect()
}

/// Hessian-vector product `∇(⟨∇f(x), v⟩)`, exact via nested reverse mode.
pub fn grad_of_grad<F>(f: F, x: &Tensor, v: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let xl = x.detach().requires_grad();
    let y = f(&xl)?;
    let g = grad(&y, &[&xl], true)?.remove(0);
    let gv = g.mul(&v.detach())?.sum();
    Ok(grad(&gv, &[&xl], false)?.remove(0))
}

/// Dense Hessian of a scalar `f` at a 1-d `x`, one Hessian-vector product per column.
pub fn hessian<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n = x.numel();
    let xl = x.detach().requires_grad();
    let y = f(&xl)?;
    let g = grad(&y, &[&xl], true)?.remove(0);
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let gj = g.mul(&Tensor::new(e, x.shape()))?.sum();
        cols.push(grad(&gj, &[&xl], false)?.remove(0));
    }
    let mut data = vec![0.0; n * n];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            data[i * n + j] = c.data()[i];
        }
    }
    Ok(Tensor::new(data, &[n, n]))
}

/// Per-sample Jacobian-vector products `J v` of a row-wise map, via the
/// transpose-of-VJP construction. Values only; not differentiable further.
pub fn batch_jvp<F>(f: F, x: &Tensor, v: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let xl = x.detach().requires_grad();
    let y = f(&xl)?;
    let u = Tensor::zeros(y.shape()).requires_grad();
    let vjp = grad(&y.mul(&u)?.sum(), &[&xl], true)?.remove(0);
    let inner = vjp.mul(&v.detach())?.sum();
    Ok(grad(&inner, &[&u], false)?.remove(0))
}

/// Agreement between reverse-mode gradients and central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Largest `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖)` over the inputs.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub entries: usize,
}

/// Compares `∇f` at `inputs` with central differences of step `step`.
///
/// `f` must return a scalar and may differentiate internally; it is called
/// with tracked leaves once and with plain tensors for every perturbation.
/// Inputs whose gradient and difference quotient are both exactly zero count as agreeing.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let analytic = grad(&f(&leaves)?, &refs, false)?;
    let mut plain: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let (mut max_rel, mut max_abs, mut entries) = (0.0f64, 0.0f64, 0usize);
    for (i, a) in analytic.iter().enumerate() {
        let base = inputs[i].to_vec();
        let shape = inputs[i].shape().to_vec();
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for (j, &aj) in a.data().iter().enumerate() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut d = base.clone();
                d[j] += delta;
                plain[i] = Tensor::new(d, &shape);
                Ok(f(&plain)?.item())
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            diff_sq += (aj - numeric) * (aj - numeric);
            a_sq += aj * aj;
            n_sq += numeric * numeric;
            max_abs = max_abs.max((aj - numeric).abs());
            entries += 1;
        }
        plain[i] = inputs[i].detach();
        let scale = a_sq.sqrt().max(n_sq.sqrt());
        if scale > 0.0 {
            max_rel = max_rel.max(diff_sq.sqrt() / scale);
        }
    }
    Ok(GradCheck {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        entries,
    })
}

//! Op table and helpers shared by the gradient suites.

#![allow(dead_code)]

use jacnuc::autodiff::{grad, Tensor};
use jacnuc::Result;

pub type OpFn = fn(&[Tensor]) -> Result<Tensor>;

/// `(name, input shapes, op)`; each op maps its inputs to a tensor that is
/// contracted with fixed weights into a scalar.
pub fn ops() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |t| t[0].add(&t[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], |t| t[0].sub(&t[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t| t[0].mul(&t[1])),
        ("add_row", vec![vec![3, 4], vec![1, 4]], |t| t[0].add_row(&t[1])),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t| t[0].matmul(&t[1])),
        ("matmul_tn", vec![vec![4, 3], vec![4, 2]], |t| t[0].matmul_t(&t[1], true, false)),
        ("matmul_nt", vec![vec![3, 4], vec![2, 4]], |t| t[0].matmul_t(&t[1], false, true)),
        ("matmul_tt", vec![vec![4, 3], vec![2, 4]], |t| t[0].matmul_t(&t[1], true, true)),
        ("transpose", vec![vec![3, 4]], |t| t[0].transpose()),
        ("sum", vec![vec![3, 4]], |t| Ok(t[0].sum())),
        ("mean", vec![vec![3, 4]], |t| Ok(t[0].mean())),
        ("expand", vec![vec![1]], |t| t[0].expand(&[3, 4])),
        ("sum_rows", vec![vec![3, 4]], |t| t[0].sum_rows()),
        ("expand_rows", vec![vec![1, 4]], |t| t[0].expand_rows(3)),
        ("scale", vec![vec![3, 4]], |t| Ok(t[0].scale(-1.7))),
        ("neg", vec![vec![3, 4]], |t| Ok(t[0].neg())),
        ("scale_by", vec![vec![3, 4], vec![1]], |t| t[0].scale_by(&t[1])),
        ("sq_norm", vec![vec![3, 4]], |t| Ok(t[0].sq_norm())),
        ("elu", vec![vec![3, 4]], |t| Ok(t[0].elu())),
        ("sin", vec![vec![3, 4]], |t| Ok(t[0].sin())),
        ("cos", vec![vec![3, 4]], |t| Ok(t[0].cos())),
        ("concat_cols", vec![vec![3, 2], vec![3, 3]], |t| t[0].concat_cols(&t[1])),
        ("slice_cols", vec![vec![3, 5]], |t| t[0].slice_cols(1, 4)),
        ("pad_cols", vec![vec![3, 2]], |t| t[0].pad_cols(1, 5)),
        ("reshape", vec![vec![3, 4]], |t| t[0].reshape(&[2, 6])),
        ("mlp_block", vec![vec![3, 4], vec![4, 4], vec![1, 4]], |t| {
            t[0].matmul(&t[1])?.add_row(&t[2]).map(|z| z.elu().sin())
        }),
    ]
}

pub fn contract(y: &Tensor, w: &[f64]) -> Result<Tensor> {
    let wt = Tensor::new(w[..y.numel()].to_vec(), y.shape());
    Ok(y.mul(&wt)?.sum())
}

pub fn tensors(shapes: &[Vec<usize>], values: &[f64]) -> Vec<Tensor> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(values[offset..offset + n].to_vec(), s);
            offset += n;
            t
        })
        .collect()
}

/// `⟨∇ₓ f(x), v⟩` built with a recorded first derivative.
pub fn directional_grad(op: OpFn, inputs: &[Tensor], w: &[f64], v: &[f64]) -> Result<Tensor> {
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|t| if t.is_tracked() { t.clone() } else { t.requires_grad() })
        .collect();
    let y = contract(&op(&leaves)?, w)?;
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let gs = grad(&y, &refs, true)?;
    let mut total = Tensor::scalar(0.0);
    let mut offset = 0;
    for g in gs {
        let n = g.numel();
        let vt = Tensor::new(v[offset..offset + n].to_vec(), g.shape());
        total = total.add(&g.mul(&vt)?.sum())?;
        offset += n;
    }
    Ok(total)
}

//! Differentiable operations and their adjoint rules.
//!
//! Every adjoint rule is written in terms of the public tensor operations, so
//! that when a backward pass runs with `create_graph` the adjoints are
//! themselves recorded and can be differentiated once more.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    AddRow,
    Matmul { ta: bool, tb: bool },
    Sum,
    Expand { shape: Vec<usize> },
    SumRows,
    ExpandRows,
    Scale(f64),
    ScaleBy,
    SqNorm,
    /// `slope` caches `elu'(x)` from the forward pass.
    Elu { slope: Arc<Vec<f64>> },
    EluGrad { slope: Arc<Vec<f64>> },
    Sin,
    Cos,
    ConcatCols { left: usize },
    SliceCols { start: usize, total: usize },
    PadCols { start: usize },
    Reshape { from: Vec<usize> },
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    a.dims2().ok_or_else(|| Error::Rank {
        op,
        expected: 2,
        shape: a.shape().to_vec(),
    })
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.data().iter().map(|&x| f(x)).collect()
}

/// `(elu(x), elu'(x))`. `exp(x) - 1` is exact enough once `x < -0.25`.
fn elu_with_slope(x: f64) -> (f64, f64) {
    if x > 0.0 {
        (x, 1.0)
    } else if x < -0.25 {
        let e = x.exp();
        (e - 1.0, e)
    } else {
        let y = x.exp_m1();
        (y, y + 1.0)
    }
}

/// `C = op(A) op(B)` where `op` optionally transposes a row-major operand.
pub(crate) fn gemm(
    a: &[f64],
    a_dims: (usize, usize),
    ta: bool,
    b: &[f64],
    b_dims: (usize, usize),
    tb: bool,
) -> (usize, usize, Vec<f64>) {
    let (m, k) = if ta { (a_dims.1, a_dims.0) } else { a_dims };
    let n = if tb { b_dims.0 } else { b_dims.1 };
    let (rsa, csa) = if ta { (1, a_dims.1) } else { (a_dims.1, 1) };
    let (rsb, csb) = if tb { (1, b_dims.1) } else { (b_dims.1, 1) };
    let mut c = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: strides describe the row-major buffers of the stated
        // dimensions and `c` is an exclusively borrowed m*n buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    (m, n, c)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = zip_map(self, other, |x, y| x + y);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Add, &[self, other]))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = zip_map(self, other, |x, y| x - y);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sub, &[self, other]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = zip_map(self, other, |x, y| x * y);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Mul, &[self, other]))
    }

    /// Adds a `[1, k]` row to every row of a `[b, k]` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (b, k) = matrix("add_row", self)?;
        if row.shape() != [1, k] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let r = row.data();
        let mut data = self.to_vec();
        for i in 0..b {
            for (x, &y) in data[i * k..(i + 1) * k].iter_mut().zip(r) {
                *x += y;
            }
        }
        Ok(Tensor::from_op(vec![b, k], data, Op::AddRow, &[self, row]))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` with optional transposes, no copies made.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        let ad = matrix("matmul", self)?;
        let bd = matrix("matmul", other)?;
        let inner_a = if ta { ad.0 } else { ad.1 };
        let inner_b = if tb { bd.1 } else { bd.0 };
        if inner_a != inner_b {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, n, data) = gemm(self.data(), ad, ta, other.data(), bd, tb);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            Op::Matmul { ta, tb },
            &[self, other],
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, _) = matrix("transpose", self)?;
        // A^T = A^T · I, recorded as a matmul so it stays differentiable.
        self.matmul_t(&Tensor::eye(r), true, false)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::Sum, &[self])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        if !self.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "expand",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = self.data()[0];
        let data = vec![v; shape.iter().product()];
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            Op::Expand {
                shape: self.shape().to_vec(),
            },
            &[self],
        ))
    }

    /// Column sums of a `[b, k]` matrix, shape `[1, k]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (b, k) = matrix("sum_rows", self)?;
        let mut out = vec![0.0; k];
        for row in self.data().chunks_exact(k.max(1)).take(b) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Ok(Tensor::from_op(vec![1, k], out, Op::SumRows, &[self]))
    }

    /// Repeats a `[1, k]` row `rows` times.
    pub fn expand_rows(&self, rows: usize) -> Result<Tensor> {
        let (one, k) = matrix("expand_rows", self)?;
        if one != 1 {
            return Err(Error::ShapeMismatch {
                op: "expand_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![rows, k],
            });
        }
        let mut data = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            data.extend_from_slice(self.data());
        }
        Ok(Tensor::from_op(
            vec![rows, k],
            data,
            Op::ExpandRows,
            &[self],
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = map(self, |x| c * x);
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(c), &[self])
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Multiplies every element by a one-element tensor `s`.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        if !s.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "scale_by",
                lhs: self.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let c = s.data()[0];
        let data = map(self, |x| c * x);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::ScaleBy,
            &[self, s],
        ))
    }

    /// Squared Euclidean norm of all elements.
    pub fn sq_norm(&self) -> Tensor {
        let s = self.data().iter().map(|x| x * x).sum();
        Tensor::from_op(Vec::new(), vec![s], Op::SqNorm, &[self])
    }

    /// ELU with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&self) -> Tensor {
        let (data, slope): (Vec<f64>, Vec<f64>) = self.data().iter().map(|&x| elu_with_slope(x)).unzip();
        Tensor::from_op(self.shape().to_vec(), data, Op::Elu { slope: Arc::new(slope) }, &[self])
    }

    fn elu_grad(&self, slope: &Arc<Vec<f64>>) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            slope.to_vec(),
            Op::EluGrad { slope: slope.clone() },
            &[self],
        )
    }

    pub fn sin(&self) -> Tensor {
        let data = map(self, f64::sin);
        Tensor::from_op(self.shape().to_vec(), data, Op::Sin, &[self])
    }

    pub fn cos(&self) -> Tensor {
        let data = map(self, f64::cos);
        Tensor::from_op(self.shape().to_vec(), data, Op::Cos, &[self])
    }

    /// `[b, p] ++ [b, q] -> [b, p + q]`.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (b, p) = matrix("concat_cols", self)?;
        let (b2, q) = matrix("concat_cols", other)?;
        if b != b2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(b * (p + q));
        for i in 0..b {
            data.extend_from_slice(&self.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&other.data()[i * q..(i + 1) * q]);
        }
        Ok(Tensor::from_op(
            vec![b, p + q],
            data,
            Op::ConcatCols { left: p },
            &[self, other],
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (b, t) = matrix("slice_cols", self)?;
        if start > end || end > t {
            return Err(Error::InvalidArgument(format!(
                "column range {start}..{end} out of bounds for width {t}"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(b * w);
        for i in 0..b {
            data.extend_from_slice(&self.data()[i * t + start..i * t + end]);
        }
        Ok(Tensor::from_op(
            vec![b, w],
            data,
            Op::SliceCols { start, total: t },
            &[self],
        ))
    }

    /// Embeds a `[b, w]` matrix at column `start` of a zero `[b, total]` matrix.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Tensor> {
        let (b, w) = matrix("pad_cols", self)?;
        if start + w > total {
            return Err(Error::InvalidArgument(format!(
                "cannot pad width {w} at {start} into {total}"
            )));
        }
        let mut data = vec![0.0; b * total];
        for i in 0..b {
            data[i * total + start..i * total + start + w]
                .copy_from_slice(&self.data()[i * w..(i + 1) * w]);
        }
        Ok(Tensor::from_op(
            vec![b, total],
            data,
            Op::PadCols { start },
            &[self],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape {
                from: self.shape().to_vec(),
            },
            &[self],
        ))
    }
}

impl Op {
    /// Maps the output adjoint `g` to input adjoints. Only inputs flagged in
    /// `need` are computed; the rest come back as `None`.
    pub(crate) fn vjp(&self, inputs: &[Tensor], g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| need.get(i).copied().unwrap_or(false);
        let out = match self {
            Op::Add => vec![want(0).then(|| g.clone()), want(1).then(|| g.clone())],
            Op::Sub => vec![want(0).then(|| g.clone()), want(1).then(|| g.neg())],
            Op::Mul => vec![
                if want(0) { Some(g.mul(&inputs[1])?) } else { None },
                if want(1) { Some(g.mul(&inputs[0])?) } else { None },
            ],
            Op::AddRow => vec![
                want(0).then(|| g.clone()),
                if want(1) { Some(g.sum_rows()?) } else { None },
            ],
            Op::Matmul { ta, tb } => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let da = if want(0) {
                    Some(match (ta, tb) {
                        (false, false) => g.matmul_t(b, false, true)?,
                        (false, true) => g.matmul_t(b, false, false)?,
                        (true, false) => b.matmul_t(g, false, true)?,
                        (true, true) => b.matmul_t(g, true, true)?,
                    })
                } else {
                    None
                };
                let db = if want(1) {
                    Some(match (ta, tb) {
                        (false, false) => a.matmul_t(g, true, false)?,
                        (false, true) => g.matmul_t(a, true, false)?,
                        (true, false) => a.matmul_t(g, false, false)?,
                        (true, true) => g.matmul_t(a, true, true)?,
                    })
                } else {
                    None
                };
                vec![da, db]
            }
            Op::Sum => vec![if want(0) {
                Some(g.expand(inputs[0].shape())?)
            } else {
                None
            }],
            Op::Expand { shape } => vec![if want(0) {
                Some(g.sum().reshape(shape)?)
            } else {
                None
            }],
            Op::SumRows => vec![if want(0) {
                Some(g.expand_rows(inputs[0].shape()[0])?)
            } else {
                None
            }],
            Op::ExpandRows => vec![if want(0) { Some(g.sum_rows()?) } else { None }],
            Op::Scale(c) => vec![want(0).then(|| g.scale(*c))],
            Op::ScaleBy => {
                let (a, s) = (&inputs[0], &inputs[1]);
                vec![
                    if want(0) { Some(g.scale_by(s)?) } else { None },
                    if want(1) {
                        Some(g.mul(a)?.sum().reshape(s.shape())?)
                    } else {
                        None
                    },
                ]
            }
            Op::SqNorm => vec![if want(0) {
                Some(inputs[0].scale_by(&g.reshape(&[])?)?.scale(2.0))
            } else {
                None
            }],
            Op::Elu { slope } => vec![if want(0) {
                Some(g.mul(&inputs[0].elu_grad(slope))?)
            } else {
                None
            }],
            Op::EluGrad { slope } => vec![if want(0) {
                // elu'' equals elu' for x <= 0 and vanishes otherwise; third
                // derivatives are never requested, so it enters as a constant.
                let second = inputs[0]
                    .data()
                    .iter()
                    .zip(slope.iter())
                    .map(|(&x, &s)| if x > 0.0 { 0.0 } else { s })
                    .collect();
                Some(g.mul(&Tensor::new(second, inputs[0].shape()))?)
            } else {
                None
            }],
            Op::Sin => vec![if want(0) {
                Some(g.mul(&inputs[0].cos())?)
            } else {
                None
            }],
            Op::Cos => vec![if want(0) {
                Some(g.mul(&inputs[0].sin())?.neg())
            } else {
                None
            }],
            Op::ConcatCols { left } => {
                let total = g.shape()[1];
                vec![
                    if want(0) { Some(g.slice_cols(0, *left)?) } else { None },
                    if want(1) {
                        Some(g.slice_cols(*left, total)?)
                    } else {
                        None
                    },
                ]
            }
            Op::SliceCols { start, total } => vec![if want(0) {
                Some(g.pad_cols(*start, *total)?)
            } else {
                None
            }],
            Op::PadCols { start, .. } => {
                let w = inputs[0].shape()[1];
                vec![if want(0) {
                    Some(g.slice_cols(*start, start + w)?)
                } else {
                    None
                }]
            }
            Op::Reshape { from } => vec![if want(0) { Some(g.reshape(from)?) } else { None }],
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        let x = Tensor::new(vec![-0.0, -1.0, 2.0], &[3]);
        let y = x.elu();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y.data()[1] + 0.6321).abs() < 1e-4);
        assert_eq!(y.data()[2], 2.0);
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let c = a.matmul(&Tensor::eye(2)).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = Tensor::new((0..6).map(|x| x as f64).collect(), &[2, 3]);
        let b = Tensor::new((0..12).map(|x| (x as f64).sin()).collect(), &[3, 4]);
        let c = a.matmul(&b).unwrap();
        let at = a.transpose().unwrap();
        let bt = b.transpose().unwrap();
        let c2 = at.matmul_t(&bt, true, true).unwrap();
        let c3 = at.matmul_t(&b, true, false).unwrap();
        let c4 = a.matmul_t(&bt, false, true).unwrap();
        for other in [c2, c3, c4] {
            for (x, y) in c.data().iter().zip(other.data()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        let msg = a.matmul(&a).unwrap_err().to_string();
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn concat_slice_pad() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::new(vec![5.0, 6.0], &[2, 1]);
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.slice_cols(1, 3).unwrap().data(), &[2.0, 5.0, 4.0, 6.0]);
        assert_eq!(b.pad_cols(1, 3).unwrap().data(), &[0.0, 5.0, 0.0, 0.0, 6.0, 0.0]);
    }

    #[test]
    fn untracked_inputs_record_nothing() {
        let a = Tensor::ones(&[2, 2]);
        assert!(!a.add(&a).unwrap().is_tracked());
        let p = a.requires_grad();
        assert!(p.add(&a).unwrap().is_tracked());
    }
}

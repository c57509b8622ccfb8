//! Jacobian penalties for composite models `f = g ∘ h`.
//!
//! * exact: `‖Jf[x]‖_*` from an explicit Jacobian and its SVD;
//! * Frobenius split: `½(‖Jg[h(x)]‖_F² + ‖Jh[x]‖_F²)`, an upper bound on the
//!   exact penalty that is tight for balanced factorizations;
//! * Hutchinson: a forward-only estimate of the split penalty from randomly
//!   perturbed evaluations of `g` and `h`.
//!
//! All penalties take a batch `[b, n]` and return the batch mean as a scalar
//! tensor that is differentiable with respect to the model parameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{batch_jacobian_rows, no_grad, Tensor};
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::CompositeModel;
use crate::rng::{self, Rng64};

/// Largest explicit Jacobian (entries) the exact penalties will build.
pub const JACOBIAN_GUARD: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    ExactNuclear,
    FrobeniusSplit,
    Hutchinson,
}

/// Whether the `g`-term and `h`-term of one Hutchinson sample use the same
/// standard-normal draw (prefix-shared when the dimensions differ).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSharing {
    /// Shared for a single sample, independent otherwise.
    #[default]
    Auto,
    Shared,
    Independent,
}

impl ProbeSharing {
    fn shared(self, samples: usize) -> bool {
        match self {
            ProbeSharing::Auto => samples == 1,
            ProbeSharing::Shared => true,
            ProbeSharing::Independent => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub eta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub sharing: ProbeSharing,
}

fn default_sigma() -> f64 {
    1e-2
}

fn default_samples() -> usize {
    1
}

impl RegularizerSpec {
    pub fn exact(eta: f64) -> Self {
        Self {
            kind: RegularizerKind::ExactNuclear,
            eta,
            sigma: default_sigma(),
            samples: 1,
            sharing: ProbeSharing::Auto,
        }
    }

    pub fn split(eta: f64) -> Self {
        Self {
            kind: RegularizerKind::FrobeniusSplit,
            ..Self::exact(eta)
        }
    }

    pub fn hutchinson(eta: f64, sigma: f64, samples: usize) -> Self {
        Self {
            kind: RegularizerKind::Hutchinson,
            eta,
            sigma,
            samples,
            sharing: ProbeSharing::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Config(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if self.kind == RegularizerKind::Hutchinson {
            if !self.sigma.is_finite() || self.sigma <= 0.0 {
                return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
            }
            if self.samples == 0 {
                return Err(Error::Config("samples must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Forward evaluation of `x` that the penalty can reuse.
    pub fn forward(&self, model: &CompositeModel, x: &Tensor) -> Result<ForwardPass> {
        if self.kind == RegularizerKind::ExactNuclear {
            guard(model.output_dim(), model.input_dim())?;
            let (hx, fx, rows) = model.jacobian_rows(x, true)?;
            return Ok(ForwardPass {
                hx,
                fx,
                jacobian_rows: Some(rows),
            });
        }
        ForwardPass::plain(model, x)
    }

    /// Unweighted penalty (no `η`) for a batch, reusing `pass` when it was built from the same `x`.
    pub fn penalty(&self, model: &CompositeModel, x: &Tensor, pass: Option<&ForwardPass>, rng: &mut Rng64) -> Result<Tensor> {
        match self.kind {
            RegularizerKind::ExactNuclear => match pass.and_then(|p| p.jacobian_rows.as_ref()) {
                Some(rows) => nuclear_from_rows(rows, batch_of(x, model.input_dim())?, model.input_dim()),
                None => exact_nuclear_penalty(model, x),
            },
            RegularizerKind::FrobeniusSplit => frobenius_split_energy(model, x),
            RegularizerKind::Hutchinson => {
                let probes = draw_probes(model, batch_of(x, model.input_dim())?, self.samples, self.sharing, rng);
                match pass {
                    Some(p) => hutchinson_from_forward(model, x, &p.hx, &p.fx, self.sigma, &probes),
                    None => hutchinson_with_probes(model, x, self.sigma, &probes),
                }
            }
        }
    }
}

/// `h(x)`, `f(x)` and, for the exact penalty, the recorded rows of `Jf[x]`.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub hx: Tensor,
    pub fx: Tensor,
    pub jacobian_rows: Option<Vec<Tensor>>,
}

impl ForwardPass {
    pub fn plain(model: &CompositeModel, x: &Tensor) -> Result<Self> {
        let hx = model.forward_h(x)?;
        let fx = model.forward_g(&hx)?;
        Ok(Self {
            hx,
            fx,
            jacobian_rows: None,
        })
    }
}

fn guard(rows: usize, cols: usize) -> Result<()> {
    if rows * cols > JACOBIAN_GUARD {
        return Err(Error::JacobianTooLarge {
            rows,
            cols,
            limit: JACOBIAN_GUARD,
        });
    }
    Ok(())
}

fn batch_of(x: &Tensor, n: usize) -> Result<usize> {
    match x.dims2() {
        Some((b, c)) if c == n && b > 0 => Ok(b),
        _ => Err(Error::ShapeMismatch {
            op: "penalty batch",
            lhs: x.shape().to_vec(),
            rhs: vec![0, n],
        }),
    }
}

/// Per-sample Jacobians `[b][m × n]` as plain matrices from the recorded rows.
fn assemble(rows: &[Tensor], b: usize, n: usize) -> Vec<DMatrix<f64>> {
    let m = rows.len();
    (0..b)
        .map(|s| DMatrix::from_fn(m, n, |i, j| rows[i].data()[s * n + j]))
        .collect()
}

/// Mean over the batch of `‖Jf[x]‖_*`.
///
/// The parameter gradient is that of `⟨U Vᵀ, Jf[x]⟩` with the polar factor
/// `U Vᵀ` of each sample's Jacobian held constant, a valid subgradient of the
/// nuclear norm.
pub fn exact_nuclear_penalty(model: &CompositeModel, x: &Tensor) -> Result<Tensor> {
    let n = model.input_dim();
    let m = model.output_dim();
    guard(m, n)?;
    let b = batch_of(x, n)?;
    let (_, _, rows) = model.jacobian_rows(x, true)?;
    nuclear_from_rows(&rows, b, n)
}

/// [`exact_nuclear_penalty`] from Jacobian rows already recorded with `create_graph`.
pub fn nuclear_from_rows(rows: &[Tensor], b: usize, n: usize) -> Result<Tensor> {
    let m = rows.len();
    guard(m, n)?;
    let mut coeffs = vec![vec![0.0; b * n]; m];
    if m == 1 || n == 1 {
        // Vector Jacobian: the polar factor is J / ‖J‖.
        let jacs = assemble(rows, b, n);
        for (s, j) in jacs.iter().enumerate() {
            let norm = j.norm();
            if norm > 0.0 {
                for i in 0..m {
                    for k in 0..n {
                        coeffs[i][s * n + k] = j[(i, k)] / norm;
                    }
                }
            }
        }
    } else {
        for (s, j) in assemble(rows, b, n).iter().enumerate() {
            let polar = linalg::svd(j)?.polar_factor();
            for i in 0..m {
                for k in 0..n {
                    coeffs[i][s * n + k] = polar[(i, k)];
                }
            }
        }
    }
    let mut total: Option<Tensor> = None;
    for (row, c) in rows.iter().zip(coeffs) {
        let term = row.mul(&Tensor::new(c, &[b, n]))?.sum();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("model output has at least one coordinate").scale(1.0 / b as f64))
}

/// Batch mean of `‖Jg[h(x)]‖_F² + ‖Jh[x]‖_F²` with explicit, recorded Jacobians.
fn split_sums(model: &CompositeModel, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = model.input_dim();
    let d = model.inner_dim();
    let m = model.output_dim();
    guard(d, n)?;
    guard(m, d)?;
    let b = batch_of(x, n)?;
    let (hx, jh_rows) = model.h_jacobian_rows(x, true)?;
    let gx = model.forward_g(&hx)?;
    let sum_sq = |rows: Vec<Tensor>| -> Result<Tensor> {
        let mut acc = Tensor::scalar(0.0);
        for r in rows {
            acc = acc.add(&r.sq_norm())?;
        }
        Ok(acc.scale(1.0 / b as f64))
    };
    let jg = sum_sq(batch_jacobian_rows(&gx, &hx, true)?)?;
    let jh = sum_sq(jh_rows)?;
    Ok((jg, jh))
}

/// `½(‖Jg[h(x)]‖_F² + ‖Jh[x]‖_F²)`, batch mean.
pub fn frobenius_split_energy(model: &CompositeModel, x: &Tensor) -> Result<Tensor> {
    let (jg, jh) = split_sums(model, x)?;
    Ok(jg.add(&jh)?.scale(0.5))
}

/// `(η/2)(‖Jg[h(x)]‖_F² + ‖Jh[x]‖_F²)`, batch mean, differentiable through
/// nested reverse mode.
pub fn frobenius_split_penalty(model: &CompositeModel, x: &Tensor, eta: f64) -> Result<Tensor> {
    Ok(frobenius_split_energy(model, x)?.scale(eta))
}

/// The two squared-Frobenius terms separately (values only), `(‖Jg‖_F², ‖Jh‖_F²)` batch means.
pub fn split_terms(model: &CompositeModel, x: &Tensor) -> Result<(f64, f64)> {
    let (jg, jh) = split_sums(model, x)?;
    Ok((jg.item(), jh.item()))
}

/// Standard-normal probe directions for one Hutchinson sample.
#[derive(Clone, Debug)]
pub struct Probe {
    /// `[b, n]`, perturbs the input of `h`.
    pub h: Tensor,
    /// `[b, d]`, perturbs the input of `g`.
    pub g: Tensor,
}

impl Probe {
    pub fn negated(&self) -> Probe {
        Probe {
            h: self.h.neg(),
            g: self.g.neg(),
        }
    }
}

/// Draws `samples` probes for a batch of `b` points.
pub fn draw_probes(model: &CompositeModel, b: usize, samples: usize, sharing: ProbeSharing, rng: &mut Rng64) -> Vec<Probe> {
    let n = model.input_dim();
    let d = model.inner_dim();
    let shared = sharing.shared(samples);
    (0..samples)
        .map(|_| {
            if shared {
                let w = n.max(d);
                let z = rng::normal_vec(rng, b * w);
                let take = |k: usize| -> Tensor {
                    let data = z.chunks_exact(w).flat_map(|r| r[..k].to_vec()).collect();
                    Tensor::new(data, &[b, k])
                };
                Probe { h: take(n), g: take(d) }
            } else {
                Probe {
                    h: Tensor::new(rng::normal_vec(rng, b * n), &[b, n]),
                    g: Tensor::new(rng::normal_vec(rng, b * d), &[b, d]),
                }
            }
        })
        .collect()
}

/// `R(x; f) = (1/2σ²) E‖g(h(x)+ε) − g(h(x))‖² + ‖h(x+ε) − h(x)‖²`, batch mean,
/// averaged over the given probes (scaled by `σ`).
pub fn hutchinson_with_probes(model: &CompositeModel, x: &Tensor, sigma: f64, probes: &[Probe]) -> Result<Tensor> {
    let hx = model.forward_h(x)?;
    let fx = model.forward_g(&hx)?;
    hutchinson_from_forward(model, x, &hx, &fx, sigma, probes)
}

pub(crate) fn hutchinson_from_forward(
    model: &CompositeModel,
    x: &Tensor,
    hx: &Tensor,
    fx: &Tensor,
    sigma: f64,
    probes: &[Probe],
) -> Result<Tensor> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let b = batch_of(x, model.input_dim())?;
    let mut acc = Tensor::scalar(0.0);
    for p in probes {
        let g_shift = model.forward_g(&hx.add(&p.g.scale(sigma))?)?.sub(fx)?;
        let h_shift = model.forward_h(&x.add(&p.h.scale(sigma))?)?.sub(hx)?;
        acc = acc.add(&g_shift.sq_norm().add(&h_shift.sq_norm())?)?;
    }
    let denom = 2.0 * sigma * sigma * b as f64 * probes.len() as f64;
    Ok(acc.scale(1.0 / denom))
}

/// Draws probes from `rng` and evaluates [`hutchinson_with_probes`].
pub fn hutchinson_regularizer(
    model: &CompositeModel,
    x: &Tensor,
    sigma: f64,
    samples: usize,
    sharing: ProbeSharing,
    rng: &mut Rng64,
) -> Result<Tensor> {
    if !(sigma > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "hutchinson needs sigma > 0 and samples >= 1, got {sigma}, {samples}"
        )));
    }
    let probes = draw_probes(model, batch_of(x, model.input_dim())?, samples, sharing, rng);
    hutchinson_with_probes(model, x, sigma, &probes)
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FrobEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// `(1/σ²) mean ‖f(x+ε) − f(x)‖²` over `k` draws `ε ~ N(0, σ²I)`: an estimate
/// of `‖Jf[x]‖_F²` from evaluations of `f` only.
///
/// `f` must act row-wise on a batch `[b, n] -> [b, m]`; draws are evaluated in chunks.
pub fn frob_norm_estimate<F>(f: F, x: &[f64], sigma: f64, k: usize, rng: &mut Rng64) -> Result<FrobEstimate>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(sigma > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "estimator needs sigma > 0 and k >= 1, got {sigma}, {k}"
        )));
    }
    const CHUNK: usize = 4096;
    let n = x.len();
    no_grad(|| {
        let f0 = f(&Tensor::new(x.to_vec(), &[1, n]))?;
        let base = f0.data().to_vec();
        let m = base.len();
        let (mut mean, mut m2, mut count) = (0.0f64, 0.0f64, 0usize);
        let mut remaining = k;
        while remaining > 0 {
            let c = remaining.min(CHUNK);
            let z = rng::normal_vec(rng, c * n);
            let pts: Vec<f64> = z
                .chunks_exact(n)
                .flat_map(|zr| zr.iter().zip(x).map(|(e, xi)| xi + sigma * e).collect::<Vec<_>>())
                .collect();
            let out = f(&Tensor::new(pts, &[c, n]))?;
            if out.numel() != c * m {
                return Err(Error::ShapeMismatch {
                    op: "frob_norm_estimate",
                    lhs: out.shape().to_vec(),
                    rhs: vec![c, m],
                });
            }
            for row in out.data().chunks_exact(m.max(1)) {
                let v: f64 = row.iter().zip(&base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (sigma * sigma);
                count += 1;
                let delta = v - mean;
                mean += delta / count as f64;
                m2 += delta * (v - mean);
            }
            remaining -= c;
        }
        let var = if count > 1 { m2 / (count - 1) as f64 } else { 0.0 };
        Ok(FrobEstimate {
            mean,
            std_err: (var / count as f64).sqrt(),
            samples: count,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad, jacobian};
    use crate::models::{FourierFeatures, Mlp, ModelSpec};
    use crate::rng::{stream, Stream};

    fn linear_model(b_mat: &Tensor, c_mat: &Tensor) -> CompositeModel {
        // h(x) = C x, g(y) = B y; row-major batches use x·Cᵀ.
        let (d, n) = c_mat.dims2().unwrap();
        let (m, _) = b_mat.dims2().unwrap();
        let h = Mlp::linear(c_mat.transpose().unwrap().detach(), Tensor::zeros(&[1, d])).unwrap();
        let g = Mlp::linear(b_mat.transpose().unwrap().detach(), Tensor::zeros(&[1, m])).unwrap();
        let _ = n;
        CompositeModel::from_parts(None, h, g).unwrap()
    }

    fn randn(r: usize, c: usize, seed: u64) -> Tensor {
        Tensor::new(rng::normal_vec(&mut stream(seed, Stream::Aux, 0), r * c), &[r, c])
    }

    fn fro_sq(t: &Tensor) -> f64 {
        t.data().iter().map(|v| v * v).sum()
    }

    #[test]
    fn exact_penalty_of_diagonal_linear_map() {
        let diag = Tensor::new(vec![3.0, 0.0, 0.0, 4.0], &[2, 2]);
        let m = linear_model(&diag, &Tensor::eye(2));
        let x = Tensor::new(vec![0.5, -1.0, 2.0, 0.1], &[2, 2]);
        let p = exact_nuclear_penalty(&m, &x).unwrap();
        assert!((p.item() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn constant_model_has_zero_penalties() {
        let m = linear_model(&randn(2, 3, 1), &Tensor::zeros(&[3, 2]));
        let x = randn(4, 2, 2);
        assert_eq!(exact_nuclear_penalty(&m, &x).unwrap().item(), 0.0);
        let split = frobenius_split_penalty(&m, &x, 1.0).unwrap().item();
        assert!((split - 0.5 * fro_sq(&randn(2, 3, 1))).abs() < 1e-12);
        let (_, jh) = split_terms(&m, &x).unwrap();
        assert_eq!(jh, 0.0);
        let zero = m
            .with_parameters(m.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .unwrap();
        let mut r = stream(1, Stream::Probes, 0);
        let h = hutchinson_regularizer(&zero, &x, 0.1, 3, ProbeSharing::Independent, &mut r).unwrap();
        assert_eq!(h.item(), 0.0);
    }

    #[test]
    fn split_penalty_of_linear_model() {
        let bm = randn(2, 3, 3);
        let cm = randn(3, 4, 4);
        let m = linear_model(&bm, &cm);
        let x = randn(5, 4, 5);
        let p = frobenius_split_penalty(&m, &x, 0.3).unwrap().item();
        assert!((p - 0.15 * (fro_sq(&bm) + fro_sq(&cm))).abs() < 1e-12);
    }

    #[test]
    fn guard_rejects_large_jacobians() {
        let s = ModelSpec::two_layer(70, 4, 70, 4, 1);
        let m = CompositeModel::init(&s).unwrap();
        let err = exact_nuclear_penalty(&m, &Tensor::zeros(&[1, 70])).unwrap_err();
        assert!(matches!(err, Error::JacobianTooLarge { .. }));
        assert!(err.to_string().contains("hutchinson"));
    }

    #[test]
    fn exact_penalty_matches_nuclear_norm_of_jacobian() {
        let s = ModelSpec::two_layer(3, 4, 3, 6, 7);
        let m = CompositeModel::init(&s).unwrap();
        let x = Tensor::new(vec![0.2, -0.4, 0.9], &[1, 3]);
        let j = jacobian(|v| m.forward(&v.reshape(&[1, 3])?), &x.reshape(&[3]).unwrap()).unwrap();
        let jm = DMatrix::from_row_slice(3, 3, j.data());
        let p = exact_nuclear_penalty(&m, &x).unwrap().item();
        assert!((p - linalg::nuclear_norm(&jm).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exact_penalty_subgradient_matches_finite_differences() {
        let s = ModelSpec::two_layer(3, 3, 2, 4, 8);
        let m = CompositeModel::init(&s).unwrap();
        let x = Tensor::new(vec![0.3, -0.5, 0.8, -0.1, 0.4, 0.2], &[2, 3]);
        let params = m.parameters();
        let p = exact_nuclear_penalty(&m, &x).unwrap();
        let grads = grad(&p, &params.iter().collect::<Vec<_>>(), false).unwrap();
        let value = |ps: Vec<Tensor>| exact_nuclear_penalty(&m.with_parameters(ps).unwrap(), &x).unwrap().item();
        let h = 1e-6;
        for (pi, p0) in params.iter().enumerate() {
            for k in 0..p0.numel() {
                let bump = |delta: f64| {
                    let mut ps: Vec<Tensor> = params.iter().map(|t| t.detach()).collect();
                    let mut d = ps[pi].to_vec();
                    d[k] += delta;
                    ps[pi] = Tensor::new(d, p0.shape());
                    value(ps)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = grads[pi].data()[k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1.0), "param {pi}[{k}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn hutchinson_linear_is_unbiased() {
        let bm = randn(2, 3, 11);
        let cm = randn(3, 2, 12);
        let m = linear_model(&bm, &cm);
        let x = randn(1, 2, 13);
        let mut r = stream(2, Stream::Probes, 0);
        let k = 10_000;
        let probes = draw_probes(&m, 1, k, ProbeSharing::Independent, &mut r);
        let vals: Vec<f64> = probes
            .iter()
            .map(|p| hutchinson_with_probes(&m, &x, 0.5, std::slice::from_ref(p)).unwrap().item())
            .collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
        let exact = 0.5 * (fro_sq(&bm) + fro_sq(&cm));
        assert!((mean - exact).abs() <= 3.0 * sd / (k as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn shared_probes_use_common_prefix() {
        let s = ModelSpec::two_layer(2, 5, 1, 3, 1);
        let m = CompositeModel::init(&s).unwrap();
        let mut r = stream(3, Stream::Probes, 0);
        let p = draw_probes(&m, 4, 1, ProbeSharing::Auto, &mut r);
        for i in 0..4 {
            assert_eq!(p[0].h.data()[i * 2..i * 2 + 2], p[0].g.data()[i * 5..i * 5 + 2]);
        }
    }

    #[test]
    fn frob_estimate_linear_and_constant() {
        let a = randn(4, 4, 21);
        let f = |x: &Tensor| x.matmul_t(&a, false, true);
        let mut r = stream(4, Stream::Probes, 0);
        let est = frob_norm_estimate(f, &[0.1, 0.2, -0.3, 0.4], 0.7, 10_000, &mut r).unwrap();
        assert!((est.mean - fro_sq(&a)).abs() <= 3.0 * est.std_err, "{est:?}");
        let c = |x: &Tensor| Ok(Tensor::zeros(&[x.shape()[0], 2]));
        let est = frob_norm_estimate(c, &[1.0, 2.0], 0.1, 100, &mut r).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn frob_estimate_of_sine_at_origin() {
        let mut r = stream(5, Stream::Probes, 0);
        let est = frob_norm_estimate(|x: &Tensor| Ok(x.sin()), &[0.0; 3], 1e-3, 100_000, &mut r).unwrap();
        assert!((est.mean - 3.0).abs() <= 0.02 * 3.0, "{est:?}");
    }

    #[test]
    fn fourier_inputs_supported() {
        let mut r = stream(1, Stream::Init, 1);
        let ff = FourierFeatures::init(2, 3, 1.0, &mut r);
        let h = Mlp::init(&[6, 4, 3], &mut r).unwrap();
        let g = Mlp::init(&[3, 4, 1], &mut r).unwrap();
        let m = CompositeModel::from_parts(Some(ff), h, g).unwrap();
        let x = randn(3, 2, 9);
        let e = exact_nuclear_penalty(&m, &x).unwrap().item();
        let s = frobenius_split_energy(&m, &x).unwrap().item();
        assert!(e <= s + 1e-12, "{e} > {s}");
    }
}

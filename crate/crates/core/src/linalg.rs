//! Dense SVD and the nuclear-norm machinery built on it: norms, the balanced
//! factorization attaining `‖A‖_*`, singular value thresholding, the optimal
//! linear shrinker and a checker for its subgradient optimality condition.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Singular values below this fraction of `σ₁` count as zero for rank decisions.
pub const RANK_TOL: f64 = 1e-12;

/// Thin SVD `A = U diag(sigma) Vᵀ` with `r = min(m, n)` columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Number of singular values above `RANK_TOL · σ₁`.
    pub fn rank(&self) -> usize {
        let cutoff = self.cutoff();
        self.sigma.iter().filter(|&&s| s > cutoff).count()
    }

    fn cutoff(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0) * RANK_TOL
    }

    /// `U_r V_rᵀ` over the nonzero singular values: the canonical nuclear-norm subgradient.
    pub fn polar_factor(&self) -> Matrix {
        let r = self.rank();
        let ur = self.u.columns(0, r);
        let vr = self.v.columns(0, r);
        ur * vr.transpose()
    }
}

/// One-sided Jacobi (Hestenes) on the columns of a tall matrix.
fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);

    let mut converged = n < 2;
    let mut residual = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma * gamma / (alpha * beta);
                off += rel;
                if rel.sqrt() <= 1e-15 {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        residual = off.sqrt();
        converged = residual < OFF_DIAGONAL_TOL;
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: equal values keep their original column order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let cutoff = sigma.first().copied().unwrap_or(0.0) * RANK_TOL;
    let mut u = Matrix::zeros(m, n);
    let mut vs = Matrix::zeros(n, n);
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        vs.set_column(k, &v.column(j));
        if sigma[k] > cutoff && sigma[k] > 0.0 {
            u.set_column(k, &(w.column(j) / sigma[k]));
            filled += 1;
        }
    }
    complete_orthonormal(&mut u, filled);
    Ok(SvdResult { u, sigma, v: vs })
}

/// Fills columns `filled..` of `u` with an orthonormal completion.
fn complete_orthonormal(u: &mut Matrix, filled: usize) {
    let (m, n) = u.shape();
    let mut k = filled;
    let mut e = 0;
    while k < n && e < m {
        let mut cand = nalgebra::DVector::<f64>::zeros(m);
        cand[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for j in 0..k {
                let proj = u.column(j).dot(&cand);
                cand -= u.column(j) * proj;
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            u.set_column(k, &(cand / norm));
            k += 1;
        }
    }
}

/// Thin SVD; singular values descending, ties broken by original column index.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("svd input has non-finite entries".into()));
    }
    let (m, n) = a.shape();
    if m >= n {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.sigma)
}

/// `‖A‖_*`, the sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// `Σᵢⱼ Aᵢⱼ²`.
pub fn frobenius_sq(a: &Matrix) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// Balanced factorization `A = U' V'ᵀ` with `U' = U_A √Σ`, `V' = V_A √Σ`,
/// whose energy `½(‖U'‖_F² + ‖V'‖_F²)` equals `‖A‖_*`.
pub fn srebro_factorize(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let s = svd(a)?;
    let mut u = s.u.clone();
    let mut v = s.v.clone();
    for (j, sig) in s.sigma.iter().enumerate() {
        let r = sig.sqrt();
        u.column_mut(j).scale_mut(r);
        v.column_mut(j).scale_mut(r);
    }
    Ok((u, v))
}

/// `½(‖U‖_F² + ‖V‖_F²)`.
pub fn factor_energy(u: &Matrix, v: &Matrix) -> f64 {
    0.5 * (frobenius_sq(u) + frobenius_sq(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageKind {
    SoftThreshold,
    OptimalGamma,
}

/// A rule mapping singular values `σ` to shrunk values.
///
/// `threshold` is `τ` for soft thresholding and `Nη` for the optimal shrinker.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShrinkagePolicy {
    pub kind: ShrinkageKind,
    pub threshold: f64,
}

impl ShrinkagePolicy {
    pub fn soft(tau: f64) -> Result<Self> {
        Self::new(ShrinkageKind::SoftThreshold, tau)
    }

    pub fn optimal(n_eta: f64) -> Result<Self> {
        Self::new(ShrinkageKind::OptimalGamma, n_eta)
    }

    pub fn new(kind: ShrinkageKind, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) || !threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "shrinkage threshold must be finite and >= 0, got {threshold}"
            )));
        }
        Ok(Self { kind, threshold })
    }

    /// Shrunk value for one singular value.
    pub fn shrink(&self, sigma: f64) -> f64 {
        match self.kind {
            ShrinkageKind::SoftThreshold => (sigma - self.threshold).max(0.0),
            ShrinkageKind::OptimalGamma => {
                if sigma > 0.0 && sigma * sigma > self.threshold {
                    (sigma * sigma - self.threshold) / sigma
                } else {
                    0.0
                }
            }
        }
    }

    /// The diagonal gain `Γ` for one singular value (`shrink(σ) / σ`).
    pub fn gain(&self, sigma: f64) -> f64 {
        match self.kind {
            ShrinkageKind::SoftThreshold => {
                if sigma > 0.0 {
                    self.shrink(sigma) / sigma
                } else {
                    0.0
                }
            }
            ShrinkageKind::OptimalGamma => {
                if sigma > 0.0 && sigma * sigma > self.threshold {
                    1.0 - self.threshold / (sigma * sigma)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Singular value soft-thresholding: the minimizer of `½‖A−Y‖_F² + τ‖A‖_*`.
pub fn svt(y: &Matrix, tau: f64) -> Result<Matrix> {
    let policy = ShrinkagePolicy::soft(tau)?;
    let mut s = svd(y)?;
    for sig in s.sigma.iter_mut() {
        *sig = policy.shrink(*sig);
    }
    Ok(s.reconstruct())
}

/// Output of [`optimal_shrink`].
#[derive(Clone, Debug)]
pub struct ShrinkResult {
    /// `A* = U Γ Uᵀ`, `D × D`.
    pub operator: Matrix,
    /// `A* Y`.
    pub denoised: Matrix,
    /// Singular values of `Y`.
    pub sigma: Vec<f64>,
    /// `Γ_d` per singular value.
    pub gamma: Vec<f64>,
    /// `(ΓΣ)_d`, the singular values of `A* Y`.
    pub shrunk: Vec<f64>,
    /// `Nη`.
    pub n_eta: f64,
}

/// Optimal linear self-denoiser for `min_A (1/2N)‖AY − Y‖_F² + η‖A‖_*` with
/// `Y` of shape `D × N`: `Γ_d = 1 − Nη/σ_d²` above the `√(Nη)` cutoff, else 0.
pub fn optimal_shrink(y: &Matrix, eta: f64) -> Result<ShrinkResult> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
    }
    let n = y.ncols() as f64;
    let n_eta = n * eta;
    let policy = ShrinkagePolicy::optimal(n_eta)?;
    let s = svd(y)?;
    let cutoff = s.cutoff();
    let gamma: Vec<f64> = s
        .sigma
        .iter()
        .map(|&sig| if sig > cutoff { policy.gain(sig) } else { 0.0 })
        .collect();
    let shrunk: Vec<f64> = s
        .sigma
        .iter()
        .map(|&sig| if sig > cutoff { policy.shrink(sig) } else { 0.0 })
        .collect();
    let mut ug = s.u.clone();
    for (j, g) in gamma.iter().enumerate() {
        ug.column_mut(j).scale_mut(*g);
    }
    let operator = &ug * s.u.transpose();
    let denoised = &operator * y;
    Ok(ShrinkResult {
        operator,
        denoised,
        sigma: s.sigma,
        gamma,
        shrunk,
        n_eta,
    })
}

/// Residuals of the decomposition `(1/Nη)(Y − A*Y)Yᵀ = U_A V_Aᵀ + W`.
///
/// `A*` is optimal iff `‖U_Aᵀ W‖`, `‖W V_A‖` vanish and `σ_max(W) ≤ 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubgradientReport {
    pub ua_t_w: f64,
    pub w_va: f64,
    pub sigma_max_w: f64,
    pub rank: usize,
}

impl SubgradientReport {
    pub fn sigma_excess(&self) -> f64 {
        self.sigma_max_w - 1.0
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.ua_t_w <= tol && self.w_va <= tol && self.sigma_excess() <= tol
    }

    /// Largest of the three residuals (with the spectral excess clamped at 0).
    pub fn worst(&self) -> f64 {
        self.ua_t_w.max(self.w_va).max(self.sigma_excess().max(0.0))
    }
}

pub fn check_subgradient_optimality(a_star: &Matrix, y: &Matrix, eta: f64) -> Result<SubgradientReport> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "subgradient check needs eta > 0, got {eta}"
        )));
    }
    let (d, n) = y.shape();
    if a_star.shape() != (d, d) {
        return Err(Error::InvalidArgument(format!(
            "operator shape {:?} does not match data dimension {d}",
            a_star.shape()
        )));
    }
    let n_eta = n as f64 * eta;
    let lhs = (y - a_star * y) * y.transpose() / n_eta;
    let sa = svd(a_star)?;
    let r = sa.rank();
    let ua = sa.u.columns(0, r).into_owned();
    let va = sa.v.columns(0, r).into_owned();
    let w = &lhs - &ua * va.transpose();
    let ua_t_w = (ua.transpose() * &w).norm();
    let w_va = (&w * &va).norm();
    let sigma_max_w = spectral_norm(&w)?;
    Ok(SubgradientReport {
        ua_t_w,
        w_va,
        sigma_max_w,
        rank: r,
    })
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut crate::rng::Rng64) -> Matrix {
    let g = Matrix::from_vec(n, n, crate::rng::normal_vec(rng, n * n));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

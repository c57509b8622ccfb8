//! Matrix-scale studies: nuclear-norm denoising solved three ways, and the
//! optimal linear shrinker on low-rank data.

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, LabeledArray};
use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_sq, nuclear_norm, optimal_shrink, svd, svt, Matrix};
use crate::rng::{self, Stream};
use crate::training::{MetricsLog, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEquivConfig {
    pub eta: f64,
    pub seed: u64,
    /// Shape of the standard-normal `Y` drawn from `seed` when `y` is absent.
    #[serde(default = "d_rows")]
    pub rows: usize,
    #[serde(default = "d_cols")]
    pub cols: usize,
    /// Explicit `Y`, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<Vec<f64>>>,
    /// Step size of factorized gradient descent, in units of `1/(σ₁(Y) + η)`.
    #[serde(default = "d_factor_step")]
    pub factor_step: f64,
    #[serde(default = "d_factor_iterations")]
    pub factor_iterations: usize,
    /// Initial step of the subgradient method; decays as `1/√(k+1)`.
    #[serde(default = "d_subgradient_step")]
    pub subgradient_step: f64,
    #[serde(default = "d_subgradient_iterations")]
    pub subgradient_iterations: usize,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
}

fn d_rows() -> usize {
    8
}
fn d_cols() -> usize {
    6
}
fn d_factor_step() -> f64 {
    0.2
}
fn d_factor_iterations() -> usize {
    20_000
}
fn d_subgradient_step() -> f64 {
    0.5
}
fn d_subgradient_iterations() -> usize {
    5_000
}
fn d_log_every() -> usize {
    100
}

impl MatrixEquivConfig {
    pub fn new(eta: f64, seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({"eta": eta, "seed": seed})).expect("defaults deserialize")
    }

    /// The explicit `Y`, or a standard-normal `rows × cols` draw from the `Data` stream.
    pub fn matrix(&self) -> Result<Matrix> {
        match &self.y {
            Some(rows) => {
                let m = rows.len();
                let n = rows.first().map_or(0, Vec::len);
                if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config("y must be a non-empty rectangular matrix".into()));
                }
                Ok(Matrix::from_fn(m, n, |i, j| rows[i][j]))
            }
            None => Ok(Matrix::from_row_slice(
                self.rows,
                self.cols,
                &rng::normal_vec(&mut rng::stream(self.seed, Stream::Data, 0), self.rows * self.cols),
            )),
        }
    }
}

/// `½‖A − Y‖_F² + η‖A‖_*`.
fn lhs_objective(a: &Matrix, y: &Matrix, eta: f64) -> Result<f64> {
    Ok(0.5 * frobenius_sq(&(a - y)) + eta * nuclear_norm(a)?)
}

/// Solves `min_A ½‖A − Y‖_F² + η‖A‖_*` by singular value thresholding, by
/// gradient descent on the factorized form `½‖UVᵀ − Y‖_F² + (η/2)(‖U‖_F² + ‖V‖_F²)`
/// with `r = min(m, n)`, and by a diminishing-step subgradient method.
///
/// Summary keys: `objective_svt`, `objective_factorized` (the LHS objective at
/// `UVᵀ`), `factorized_energy` (the RHS objective), `objective_subgradient`
/// (best iterate), `rel_gap_factorized`, `rel_gap_subgradient`.
pub fn run_matrix_equiv(y: &Matrix, config: &MatrixEquivConfig) -> Result<ExperimentReport> {
    let (m, n) = y.shape();
    if m == 0 || n == 0 || m > 64 || n > 64 {
        return Err(Error::Config(format!("matrix-equiv needs 1..=64 rows and columns, got {m}x{n}")));
    }
    let eta = config.eta;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Config(format!("eta must be finite and >= 0, got {eta}")));
    }
    let mut echo = config.clone();
    echo.rows = m;
    echo.cols = n;
    echo.y = Some((0..m).map(|i| y.row(i).iter().copied().collect()).collect());
    let mut report = ExperimentReport::new("matrix_equiv", config.seed, &echo)?;

    let a_svt = svt(y, eta)?;
    let obj_svt = lhs_objective(&a_svt, y, eta)?;

    // Factorized gradient descent from a small random start.
    let r = m.min(n);
    let sigma1 = linalg::spectral_norm(y)?;
    let step = config.factor_step / (sigma1 + eta).max(f64::MIN_POSITIVE);
    let mut rng = rng::stream(config.seed, Stream::Init, 0);
    let scale = 0.1 * (sigma1 / r as f64).sqrt().max(1e-3);
    let mut u = Matrix::from_vec(m, r, rng::normal_vec(&mut rng, m * r)) * scale;
    let mut v = Matrix::from_vec(n, r, rng::normal_vec(&mut rng, n * r)) * scale;
    let mut log = MetricsLog::new();
    for it in 0..=config.factor_iterations {
        let resid = &u * v.transpose() - y;
        if config.log_every > 0 && (it % config.log_every == 0 || it == config.factor_iterations) {
            let data = 0.5 * frobenius_sq(&resid);
            let pen = 0.5 * eta * (frobenius_sq(&u) + frobenius_sq(&v));
            if !(data + pen).is_finite() {
                return Err(Error::NonFinite { iteration: it });
            }
            log.push(Record {
                iteration: it,
                objective: data + pen,
                data_term: data,
                penalty_term: pen,
                eta,
                mae: None,
            })?;
        }
        if it == config.factor_iterations {
            break;
        }
        let gu = &resid * &v + &u * eta;
        let gv = resid.transpose() * &u + &v * eta;
        u -= gu * step;
        v -= gv * step;
    }
    let a_fact = &u * v.transpose();
    let obj_fact = lhs_objective(&a_fact, y, eta)?;
    let energy = 0.5 * frobenius_sq(&(&a_fact - y)) + 0.5 * eta * (frobenius_sq(&u) + frobenius_sq(&v));

    // Subgradient method on the unfactorized objective.
    let mut a = Matrix::zeros(m, n);
    let mut best = lhs_objective(&a, y, eta)?;
    let mut a_best = a.clone();
    for k in 0..config.subgradient_iterations {
        let g = &a - y + svd(&a)?.polar_factor() * eta;
        a -= g * (config.subgradient_step / ((k + 1) as f64).sqrt());
        let obj = lhs_objective(&a, y, eta)?;
        if obj < best {
            best = obj;
            a_best = a.clone();
        }
    }

    report.set("eta", eta);
    report.set("objective_svt", obj_svt);
    report.set("objective_factorized", obj_fact);
    report.set("factorized_energy", energy);
    report.set("objective_subgradient", best);
    let rel = |x: f64| (x - obj_svt).abs() / obj_svt.abs().max(1e-12);
    report.set("rel_gap_factorized", rel(obj_fact));
    report.set("rel_gap_subgradient", rel(best));

    let sy = linalg::singular_values(y)?;
    let columns = [
        ("sigma_y", sy),
        ("sigma_svt", linalg::singular_values(&a_svt)?),
        ("sigma_factorized", linalg::singular_values(&a_fact)?),
        ("sigma_subgradient", linalg::singular_values(&a_best)?),
    ];
    let mut spec = LabeledArray::new("spectra", &["index", "sigma_y", "sigma_svt", "sigma_factorized", "sigma_subgradient"], vec![r]);
    for i in 0..r {
        let mut row = vec![i as f64];
        row.extend(columns.iter().map(|(_, c)| c[i]));
        spec.push(row);
    }
    report.arrays.push(spec);
    report.metrics.push(("factorized".to_string(), log));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkageConfig {
    pub dim: usize,
    pub samples: usize,
    pub rank: usize,
    pub noise_std: f64,
    pub seed: u64,
}

/// Low-rank `X = LR` (`L: D×r`, `R: r×N`, standard normal), `Y = X + σ_ε Z`,
/// and the closed-form solution of the linear self-denoising problem at `η = σ_ε²`.
///
/// Summary keys: `n_eta`, `rank_kept`, subgradient residuals
/// (`ua_t_w`, `w_va`, `sigma_max_w`), `err_shrink` `‖X − A*Y‖_F²`,
/// `err_identity` `‖X − Y‖_F²`, `err_svt` (soft threshold at `√(Nη)`).
pub fn run_shrinkage(config: &ShrinkageConfig) -> Result<ExperimentReport> {
    let ShrinkageConfig {
        dim,
        samples,
        rank,
        noise_std,
        seed,
    } = *config;
    if !(rank < dim && dim <= samples) {
        return Err(Error::Config(format!("need rank < dim <= samples, got {rank}, {dim}, {samples}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Config(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    let mut rng = rng::stream(seed, Stream::Data, 0);
    let l = Matrix::from_vec(dim, rank.max(1), rng::normal_vec(&mut rng, dim * rank.max(1)));
    let r = Matrix::from_vec(rank.max(1), samples, rng::normal_vec(&mut rng, rank.max(1) * samples));
    let x = if rank == 0 { Matrix::zeros(dim, samples) } else { l * r };
    let z = Matrix::from_vec(dim, samples, rng::normal_vec(&mut rng::stream(seed, Stream::Noise, 0), dim * samples));
    let y = &x + z * noise_std;
    let eta = noise_std * noise_std;

    let mut report = ExperimentReport::new("shrinkage", seed, config)?;
    let shrink = optimal_shrink(&y, eta)?;
    report.set("eta", eta);
    report.set("n_eta", shrink.n_eta);
    report.set("rank_kept", shrink.gamma.iter().filter(|&&g| g > 0.0).count() as f64);
    if eta > 0.0 {
        let sub = linalg::check_subgradient_optimality(&shrink.operator, &y, eta)?;
        report.set("ua_t_w", sub.ua_t_w);
        report.set("w_va", sub.w_va);
        report.set("sigma_max_w", sub.sigma_max_w);
    }
    report.set("err_shrink", frobenius_sq(&(&x - &shrink.denoised)));
    report.set("err_identity", frobenius_sq(&(&x - &y)));
    report.set("err_svt", frobenius_sq(&(&x - svt(&y, shrink.n_eta.sqrt())?)));

    let k = shrink.sigma.len();
    let mut arr = LabeledArray::new("shrinkage", &["index", "sigma", "gamma", "shrunk"], vec![k]);
    for i in 0..k {
        arr.push(vec![i as f64, shrink.sigma[i], shrink.gamma[i], shrink.shrunk[i]]);
    }
    report.arrays.push(arr);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(m: usize, n: usize, seed: u64) -> Matrix {
        Matrix::from_vec(m, n, rng::normal_vec(&mut rng::stream(seed, Stream::Aux, 0), m * n))
    }

    #[test]
    fn zero_eta_recovers_y() {
        let y = random(8, 6, 1);
        let r = run_matrix_equiv(&y, &MatrixEquivConfig::new(0.0, 1)).unwrap();
        assert!(r.scalar("objective_svt").unwrap() < 1e-20);
        assert!(r.scalar("objective_factorized").unwrap() < 1e-8);
        assert!(r.scalar("objective_subgradient").unwrap() < 1e-3);
    }

    #[test]
    fn full_shrinkage_gives_zero() {
        let y = random(8, 6, 2);
        let s1 = linalg::spectral_norm(&y).unwrap();
        let r = run_matrix_equiv(&y, &MatrixEquivConfig::new(1.01 * s1, 2)).unwrap();
        let half = 0.5 * frobenius_sq(&y);
        assert!((r.scalar("objective_svt").unwrap() - half).abs() < 1e-12);
        assert!((r.scalar("objective_factorized").unwrap() - half).abs() < 1e-6 * half);
    }

    #[test]
    fn factorized_matches_svt() {
        let y = random(8, 6, 3);
        let s3 = linalg::singular_values(&y).unwrap()[2];
        let r = run_matrix_equiv(&y, &MatrixEquivConfig::new(0.5 * s3, 3)).unwrap();
        assert!(r.scalar("rel_gap_factorized").unwrap() < 1e-2);
        assert!(r.scalar("objective_factorized").unwrap() >= r.scalar("objective_svt").unwrap() - 1e-6);
        assert!(r.scalar("objective_subgradient").unwrap() >= r.scalar("objective_svt").unwrap() - 1e-6);
    }

    #[test]
    fn shrinkage_beats_identity_and_passes_check() {
        let c = ShrinkageConfig {
            dim: 16,
            samples: 512,
            rank: 3,
            noise_std: 0.5,
            seed: 4,
        };
        let r = run_shrinkage(&c).unwrap();
        assert!(r.scalar("err_shrink").unwrap() < r.scalar("err_identity").unwrap());
        for k in ["ua_t_w", "w_va"] {
            assert!(r.scalar(k).unwrap() <= 1e-8, "{k}");
        }
        assert!(r.scalar("sigma_max_w").unwrap() <= 1.0 + 1e-8);
    }

    #[test]
    fn noiseless_shrinkage_is_exact() {
        let c = ShrinkageConfig {
            dim: 6,
            samples: 40,
            rank: 2,
            noise_std: 0.0,
            seed: 5,
        };
        let r = run_shrinkage(&c).unwrap();
        assert!(r.scalar("err_shrink").unwrap() < 1e-8);
    }
}

//! Quick oracle suite for validating a build: each check compares a component
//! against a closed form or an independent computation in a few seconds.

use crate::autodiff::{gradient_check, Tensor};
use crate::error::Result;
use crate::experiments::rof_exact_solution;
use crate::linalg::{
    check_subgradient_optimality, factor_energy, frobenius_sq, nuclear_norm, optimal_shrink, srebro_factorize, svt, Matrix,
};
use crate::models::{CompositeModel, FourierSpec, ModelSpec};
use crate::regularizers::{
    draw_probes, exact_nuclear_penalty, frob_norm_estimate, frobenius_split_energy, hutchinson_with_probes, ProbeSharing,
};
use crate::rng::{normal_vec, stream, Stream};
use crate::training::{train, DataSource, LossKind, TrainConfig};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn randn(m: usize, n: usize, seed: u64) -> Matrix {
    Matrix::from_vec(m, n, normal_vec(&mut stream(seed, Stream::Aux, 9), m * n))
}

fn srebro() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for s in 0..20u64 {
        let a = randn(2 + (s as usize % 5), 2 + (s as usize % 4), s);
        let (u, v) = srebro_factorize(&a)?;
        worst = worst.max((factor_energy(&u, &v) - nuclear_norm(&a)?).abs());
    }
    Ok((worst <= 1e-8, format!("max |energy - nuclear| = {worst:.2e}")))
}

fn svt_optimality() -> Result<(bool, String)> {
    let y = randn(6, 5, 3);
    let tau = 0.7;
    let a = svt(&y, tau)?;
    let obj = |m: &Matrix| Ok::<f64, crate::Error>(0.5 * frobenius_sq(&(m - &y)) + tau * nuclear_norm(m)?);
    let base = obj(&a)?;
    let mut rng = stream(3, Stream::Aux, 1);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let d = Matrix::from_vec(6, 5, normal_vec(&mut rng, 30)) * 1e-3;
        worst = worst.min(obj(&(&a + d))? - base);
    }
    Ok((worst >= -1e-12, format!("min objective increase under perturbation = {worst:.2e}")))
}

fn shrinker() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut exact = true;
    for s in 0..5u64 {
        let y = randn(6, 40, 100 + s);
        let eta = 0.5;
        let r = optimal_shrink(&y, eta)?;
        let rep = check_subgradient_optimality(&r.operator, &y, eta)?;
        worst = worst.max(rep.worst());
        for (sig, sh) in r.sigma.iter().zip(&r.shrunk) {
            let expect = if sig * sig > r.n_eta { (sig * sig - r.n_eta) / sig } else { 0.0 };
            exact &= sh.to_bits() == expect.to_bits();
        }
    }
    Ok((worst <= 1e-8 && exact, format!("worst residual = {worst:.2e}, closed form exact = {exact}")))
}

fn small_model(seed: u64) -> Result<CompositeModel> {
    CompositeModel::init(&ModelSpec::two_layer(3, 3, 2, 6, seed).with_fourier(FourierSpec { features: 4, scale: 1.0 }))
}

fn gradients() -> Result<(bool, String)> {
    let model = small_model(11)?;
    let x = Tensor::new(normal_vec(&mut stream(11, Stream::Aux, 2), 12), &[4, 3]);
    let first = gradient_check(
        |ps| Ok(model.with_parameters(ps.to_vec())?.forward(&x)?.sq_norm().scale(0.5)),
        &model.parameters(),
        1e-5,
    )?;
    let second = gradient_check(
        |ps| frobenius_split_energy(&model.with_parameters(ps.to_vec())?, &x),
        &model.parameters(),
        1e-5,
    )?;
    Ok((
        first.max_rel_err <= 1e-5 && second.max_rel_err <= 1e-4,
        format!(
            "data term rel err = {:.1e}, split penalty rel err = {:.1e}",
            first.max_rel_err, second.max_rel_err
        ),
    ))
}

fn hutchinson_linear() -> Result<(bool, String)> {
    let mut rng = stream(5, Stream::Aux, 3);
    let f = |t: &Tensor| t.matmul(&Tensor::new(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0], &[3, 2]));
    let est = frob_norm_estimate(f, &[0.2, -0.4, 1.0], 1e-2, 20_000, &mut rng)?;
    let exact = 1.0 + 4.0 + 1.0 + 0.25 + 9.0;
    let z = (est.mean - exact).abs() / est.std_err;
    Ok((z <= 3.0, format!("estimate {:.4} vs {exact}, {z:.2} standard errors", est.mean)))
}

fn sin_origin() -> Result<(bool, String)> {
    let est = frob_norm_estimate(|t: &Tensor| Ok(t.sin()), &[0.0; 3], 1e-3, 20_000, &mut stream(1, Stream::Probes, 0))?;
    Ok(((est.mean - 3.0).abs() <= 0.1, format!("estimate {:.4} vs 3", est.mean)))
}

fn exact_below_split() -> Result<(bool, String)> {
    let model = small_model(4)?;
    let x = Tensor::new(normal_vec(&mut stream(4, Stream::Aux, 4), 24), &[8, 3]);
    let exact = exact_nuclear_penalty(&model, &x)?.item();
    let split = frobenius_split_energy(&model, &x)?.item();
    let probes = draw_probes(&model, 8, 2000, ProbeSharing::Independent, &mut stream(4, Stream::Probes, 0));
    let hutch = hutchinson_with_probes(&model, &x, 1e-4, &probes)?.item();
    let close = (hutch - split).abs() <= 0.05 * split;
    Ok((
        exact <= split + 1e-12 && close,
        format!("exact {exact:.4} <= split {split:.4}; hutchinson {hutch:.4}"),
    ))
}

fn rof_values() -> Result<(bool, String)> {
    let a = rof_exact_solution(&[0.0, 0.0], 2, 0.1);
    let b = rof_exact_solution(&[0.5, 0.0], 2, 0.25);
    let c = rof_exact_solution(&[2.0, 0.0], 2, 0.1);
    Ok(((a - 0.8).abs() < 1e-15 && b == 0.5 && c == 0.0, format!("{a}, {b}, {c}")))
}

fn determinism() -> Result<(bool, String)> {
    let model = CompositeModel::init(&ModelSpec::two_layer(2, 2, 1, 8, 9))?;
    let data = DataSource::UniformBox { dim: 2, lo: -2.0, hi: 2.0 };
    let mut cfg = TrainConfig::new(1e-2, 30, 32, 9);
    cfg.regularizer = Some(crate::regularizers::RegularizerSpec::hutchinson(0.1, 1e-2, 1));
    let (_, a) = train(&model, LossKind::Rof, &data, &cfg, None)?;
    let (_, b) = train(&model, LossKind::Rof, &data, &cfg, None)?;
    let same = a.to_csv() == b.to_csv();
    Ok((same, format!("metrics identical = {same}")))
}

/// Runs every check; a check that errors counts as failed.
pub fn run_all() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 9] = [
        ("srebro factorization attains the nuclear norm", srebro),
        ("svt is a local minimizer of its objective", svt_optimality),
        ("optimal shrinker closed form and subgradient condition", shrinker),
        ("gradients match central differences", gradients),
        ("hutchinson estimate is unbiased for a linear map", hutchinson_linear),
        ("frobenius estimate of sin at the origin", sin_origin),
        ("exact penalty <= split penalty ~ hutchinson", exact_below_split),
        ("rof closed-form values", rof_values),
        ("training is deterministic under a seed", determinism),
    ];
    checks
        .iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}

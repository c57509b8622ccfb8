//! Nuclear-norm ROF problem with the unit-ball indicator target.
//!
//! For `τ = 1{‖x‖ ≤ 1}` the minimizer of `E[½(f − τ)²] + η E‖∇f‖` over `ℝⁿ`
//! is `(1 − nη)τ`, so trained models can be scored against a closed form.

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, LabeledArray};
use crate::autodiff::{batch_jacobian_rows, no_grad, Tensor};
use crate::error::{Error, Result};
use crate::models::{CompositeModel, FourierSpec, ModelSpec};
use crate::regularizers::{draw_probes, hutchinson_with_probes, ProbeSharing, RegularizerSpec};
use crate::rng::{self, Rng64, Stream};
use crate::training::{train, unit_ball_indicator, DataSource, LossKind, LrDrop, TrainConfig, Warmup};

/// Evaluation chunk size; bounds graph memory for Jacobian evaluations.
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RofVariant {
    /// `η‖Jf[x]‖_*` from explicit Jacobians.
    ExactPenalty,
    /// `(η/2)(‖Jg‖_F² + ‖Jh‖_F²)` from explicit Jacobians.
    SplitPenalty,
    /// `η R(x; f)` from perturbed forward evaluations.
    Hutchinson,
}

/// `n`, `η` and the sampling box `[−w, w]^n`; requires `0 ≤ η < 1/n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RofProblem {
    pub n: usize,
    pub eta: f64,
    pub half_width: f64,
}

impl RofProblem {
    /// Box half-width 10 for `n = 2` and 2 for `n = 5`.
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        let half_width = match n {
            2 => 10.0,
            5 => 2.0,
            _ => {
                return Err(Error::Config(format!(
                    "no default box for n = {n}; set box_half_width"
                )))
            }
        };
        Self::with_box(n, eta, half_width)
    }

    pub fn with_box(n: usize, eta: f64, half_width: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if !(eta >= 0.0) || eta * n as f64 >= 1.0 {
            return Err(Error::Config(format!("need 0 <= eta < 1/n, got eta = {eta}, n = {n}")));
        }
        if !(half_width > 1.0) || !half_width.is_finite() {
            return Err(Error::Config(format!("box half-width must exceed 1, got {half_width}")));
        }
        Ok(Self { n, eta, half_width })
    }

    pub fn amplitude(&self) -> f64 {
        1.0 - self.n as f64 * self.eta
    }
}

/// `(1 − nη)` on the closed unit ball, 0 outside.
pub fn rof_exact_solution(x: &[f64], n: usize, eta: f64) -> f64 {
    debug_assert_eq!(x.len(), n);
    if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
        1.0 - n as f64 * eta
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RofConfig {
    pub n: usize,
    pub eta: f64,
    pub variant: RofVariant,
    pub seed: u64,
    #[serde(default)]
    pub box_half_width: Option<f64>,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_inner")]
    pub inner_dim: usize,
    /// `null` disables the Fourier input features.
    #[serde(default = "d_fourier")]
    pub fourier: Option<FourierSpec>,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_drop: Option<LrDrop>,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_one")]
    pub samples: usize,
    #[serde(default)]
    pub sharing: ProbeSharing,
    #[serde(default)]
    pub warmup: Option<Warmup>,
    #[serde(default = "d_test_points")]
    pub test_points: usize,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Held-out points for the final objective values.
    #[serde(default = "d_objective_points")]
    pub objective_points: usize,
    /// Probes per held-out point for the Hutchinson form of the objective.
    #[serde(default = "d_objective_probes")]
    pub objective_probes: usize,
    #[serde(default = "d_resolution")]
    pub heatmap_resolution: usize,
    #[serde(default = "d_heatmap_half_width")]
    pub heatmap_half_width: f64,
}

fn d_hidden() -> usize {
    64
}
fn d_inner() -> usize {
    32
}
/// Scale 0.3 keeps the lowest feature periods comparable to the `[-10, 10]²` box;
/// at scale 1 the penalized fit settles on a constant.
fn d_fourier() -> Option<FourierSpec> {
    Some(FourierSpec {
        features: 64,
        scale: 0.3,
    })
}
fn d_iterations() -> usize {
    20_000
}
fn d_batch() -> usize {
    2048
}
fn d_lr() -> f64 {
    1e-3
}
fn d_sigma() -> f64 {
    1e-2
}
fn d_one() -> usize {
    1
}
fn d_test_points() -> usize {
    10_000
}
fn d_eval_every() -> usize {
    500
}
fn d_objective_points() -> usize {
    200_000
}
fn d_objective_probes() -> usize {
    8
}
fn d_resolution() -> usize {
    128
}
fn d_heatmap_half_width() -> f64 {
    2.0
}

impl RofConfig {
    /// Desk defaults. The factorized variants get the η warmup staircase (one
    /// twentieth of the budget at η = 0, then steps of 0.05 for `n = 2` and 0.01
    /// otherwise, one step per twentieth) and the learning rate drops tenfold
    /// for the last fifth.
    pub fn new(n: usize, eta: f64, variant: RofVariant, seed: u64) -> Self {
        let mut c: RofConfig = serde_json::from_value(serde_json::json!({
            "n": n, "eta": eta, "variant": variant, "seed": seed,
        }))
        .expect("defaults deserialize");
        c.set_schedule_defaults();
        c
    }

    /// Recomputes the warmup and learning-rate drop from `variant`, `n` and `iterations`.
    pub fn set_schedule_defaults(&mut self) {
        let step = if self.n == 2 { 0.05 } else { 0.01 };
        self.warmup = (self.variant != RofVariant::ExactPenalty).then(|| Warmup {
            start: 0.0,
            increment: step,
            period: (self.iterations / 20).max(1),
        });
        self.lr_drop = Some(LrDrop {
            at: self.iterations * 4 / 5,
            factor: 0.1,
        });
    }

    pub fn problem(&self) -> Result<RofProblem> {
        match self.box_half_width {
            Some(w) => RofProblem::with_box(self.n, self.eta, w),
            None => RofProblem::new(self.n, self.eta),
        }
    }

    pub fn regularizer(&self) -> RegularizerSpec {
        let mut r = match self.variant {
            RofVariant::ExactPenalty => RegularizerSpec::exact(self.eta),
            RofVariant::SplitPenalty => RegularizerSpec::split(self.eta),
            RofVariant::Hutchinson => RegularizerSpec::hutchinson(self.eta, self.sigma, self.samples),
        };
        r.sigma = self.sigma;
        r.sharing = self.sharing;
        r
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut s = ModelSpec::two_layer(self.n, self.inner_dim, 1, self.hidden, self.seed);
        s.fourier = self.fourier.clone();
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.lr, self.iterations, self.batch_size, self.seed);
        t.regularizer = Some(self.regularizer());
        t.warmup = self.warmup;
        t.lr_drop = self.lr_drop;
        t.eval_every = self.eval_every;
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.problem()?;
        self.train_config().validate()?;
        if self.test_points == 0 || self.objective_points == 0 || self.objective_probes == 0 {
            return Err(Error::Config("test_points, objective_points and objective_probes must be positive".into()));
        }
        if self.heatmap_resolution == 0 || !(self.heatmap_half_width > 0.0) {
            return Err(Error::Config("heatmap needs a positive resolution and half-width".into()));
        }
        Ok(())
    }
}

fn uniform_points(rng: &mut Rng64, count: usize, n: usize, w: f64) -> Vec<f64> {
    rng::uniform_vec(rng, count * n, -w, w)
}

/// Uniform samples from the ball of radius `r` in `ℝⁿ`.
fn ball_points(rng: &mut Rng64, count: usize, n: usize, r: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count * n);
    for _ in 0..count {
        let z = rng::normal_vec(rng, n);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let u = rng::uniform_vec(rng, 1, 0.0, 1.0)[0];
        let radius = r * u.powf(1.0 / n as f64);
        out.extend(z.iter().map(|v| v / norm * radius));
    }
    out
}

fn predict(model: &CompositeModel, pts: &[f64], n: usize) -> Result<Vec<f64>> {
    no_grad(|| {
        let mut out = Vec::with_capacity(pts.len() / n);
        for chunk in pts.chunks(CHUNK * n) {
            let x = Tensor::new(chunk.to_vec(), &[chunk.len() / n, n]);
            out.extend_from_slice(model.forward(&x)?.data());
        }
        Ok(out)
    })
}

fn mean_abs_error(model: &CompositeModel, pts: &[f64], problem: &RofProblem) -> Result<f64> {
    let f = predict(model, pts, problem.n)?;
    let total: f64 = f
        .iter()
        .zip(pts.chunks_exact(problem.n))
        .map(|(fi, x)| (fi - rof_exact_solution(x, problem.n, problem.eta)).abs())
        .sum();
    Ok(total / f.len() as f64)
}

/// Batch means over held-out points of the data term and each penalty form.
struct ObjectiveTerms {
    data: f64,
    nuclear: f64,
    split: f64,
    hutchinson: f64,
}

fn objective_terms(model: &CompositeModel, pts: &[f64], n: usize, sigma: f64, probes: usize, rng: &mut Rng64) -> Result<ObjectiveTerms> {
    let (mut data, mut nuclear, mut split, mut hutch) = (0.0, 0.0, 0.0, 0.0);
    let total = pts.len() / n;
    for chunk in pts.chunks(CHUNK * n) {
        let b = chunk.len() / n;
        let x = Tensor::new(chunk.to_vec(), &[b, n]);
        let (hx, fx, rows) = model.jacobian_rows(&x, false)?;
        let tau = unit_ball_indicator(&x)?;
        data += fx.data().iter().zip(tau.data()).map(|(f, t)| 0.5 * (f - t) * (f - t)).sum::<f64>();
        // Scalar output: the nuclear norm of the Jacobian row is its 2-norm.
        for s in 0..b {
            let sq: f64 = rows.iter().map(|r| r.data()[s * n..(s + 1) * n].iter().map(|v| v * v).sum::<f64>()).sum();
            nuclear += sq.sqrt();
        }
        let hl = hx.detach().requires_grad();
        let jg_sq: f64 = batch_jacobian_rows(&model.forward_g(&hl)?, &hl, false)?
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let mut jh_sq = 0.0;
        for i in 0..n {
            let mut e = vec![0.0; b * n];
            for s in 0..b {
                e[s * n + i] = 1.0;
            }
            let jv = model.h_jvp(&x, &Tensor::new(e, &[b, n]))?;
            jh_sq += jv.data().iter().map(|v| v * v).sum::<f64>();
        }
        split += 0.5 * (jg_sq + jh_sq);
        let p = draw_probes(model, b, probes, ProbeSharing::Independent, rng);
        hutch += no_grad(|| hutchinson_with_probes(model, &x, sigma, &p))?.item() * b as f64;
    }
    let t = total as f64;
    Ok(ObjectiveTerms {
        data: data / t,
        nuclear: nuclear / t,
        split: split / t,
        hutchinson: hutch / t,
    })
}

/// Trains one ROF model and scores it against the closed-form solution.
///
/// Summary keys: `mae`, `plateau_mean` (mean of `f` on `‖x‖ ≤ 0.5`),
/// `plateau_target`, `outside_max_abs` (max `|f|` over test points with
/// `‖x‖ ≥ 1.5`), held-out `data_term`, `nuclear_penalty`, `split_penalty`,
/// `hutchinson_penalty`, the three `objective_*_form` values,
/// `final_objective` (the form the variant optimizes) and `tail_objective`
/// (mean logged objective over the last tenth of training).
pub fn run_rof(config: &RofConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let problem = config.problem()?;
    let n = problem.n;
    let model = CompositeModel::init(&config.model_spec())?;
    let data = DataSource::UniformBox {
        dim: n,
        lo: -problem.half_width,
        hi: problem.half_width,
    };
    let test = uniform_points(&mut rng::stream(config.seed, Stream::Eval, 0), config.test_points, n, problem.half_width);
    let eval = |m: &CompositeModel| mean_abs_error(m, &test, &problem);
    let (model, log) = train(&model, LossKind::Rof, &data, &config.train_config(), Some(&eval))?;

    let mut report = ExperimentReport::new("rof", config.seed, config)?;
    report.set("n", n as f64);
    report.set("eta", problem.eta);
    report.set("mae", mean_abs_error(&model, &test, &problem)?);
    report.set("plateau_target", problem.amplitude());

    let inner = ball_points(&mut rng::stream(config.seed, Stream::Eval, 2), 2000, n, 0.5);
    let fin = predict(&model, &inner, n)?;
    report.set("plateau_mean", fin.iter().sum::<f64>() / fin.len() as f64);

    let ftest = predict(&model, &test, n)?;
    let outside = ftest
        .iter()
        .zip(test.chunks_exact(n))
        .filter(|(_, x)| x.iter().map(|v| v * v).sum::<f64>() >= 1.5 * 1.5)
        .map(|(f, _)| f.abs())
        .fold(0.0, f64::max);
    report.set("outside_max_abs", outside);

    let obj_pts = uniform_points(&mut rng::stream(config.seed, Stream::Eval, 1), config.objective_points, n, problem.half_width);
    let terms = objective_terms(
        &model,
        &obj_pts,
        n,
        config.sigma,
        config.objective_probes,
        &mut rng::stream(config.seed, Stream::Eval, 3),
    )?;
    let eta = problem.eta;
    report.set("data_term", terms.data);
    report.set("nuclear_penalty", terms.nuclear);
    report.set("split_penalty", terms.split);
    report.set("hutchinson_penalty", terms.hutchinson);
    let exact_form = terms.data + eta * terms.nuclear;
    let split_form = terms.data + eta * terms.split;
    let hutch_form = terms.data + eta * terms.hutchinson;
    report.set("objective_exact_form", exact_form);
    report.set("objective_split_form", split_form);
    report.set("objective_hutchinson_form", hutch_form);
    report.set(
        "final_objective",
        match config.variant {
            RofVariant::ExactPenalty => exact_form,
            RofVariant::SplitPenalty => split_form,
            RofVariant::Hutchinson => hutch_form,
        },
    );
    if let Some(t) = log.tail_objective(0.1) {
        report.set("tail_objective", t);
    }
    if let Some(m) = log.final_mae() {
        report.set("last_logged_mae", m);
    }

    if n == 2 {
        let res = config.heatmap_resolution;
        let w = config.heatmap_half_width;
        let step = 2.0 * w / res as f64;
        let mut grid = Vec::with_capacity(res * res * 2);
        for i in 0..res {
            for j in 0..res {
                grid.push(-w + (j as f64 + 0.5) * step);
                grid.push(-w + (i as f64 + 0.5) * step);
            }
        }
        let f = predict(&model, &grid, 2)?;
        let mut heat = LabeledArray::new("heatmap", &["x0", "x1", "model", "exact"], vec![res, res]);
        for (p, fv) in grid.chunks_exact(2).zip(f) {
            heat.push(vec![p[0], p[1], fv, rof_exact_solution(p, 2, eta)]);
        }
        report.arrays.push(heat);
    }
    report.metrics.push(("train".to_string(), log));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_values() {
        assert!((rof_exact_solution(&[0.0, 0.0], 2, 0.1) - 0.8).abs() < 1e-15);
        assert_eq!(rof_exact_solution(&[0.5, 0.0], 2, 0.25), 0.5);
        assert_eq!(rof_exact_solution(&[2.0, 0.0], 2, 0.1), 0.0);
        assert_eq!(rof_exact_solution(&[0.0, 2.0], 2, 0.0), 0.0);
    }

    #[test]
    fn problem_validation() {
        assert!(RofProblem::new(2, 0.5).is_err());
        assert!(RofProblem::new(2, -0.1).is_err());
        assert!(RofProblem::new(3, 0.1).is_err());
        assert_eq!(RofProblem::new(5, 0.05).unwrap().half_width, 2.0);
    }

    #[test]
    fn config_defaults_and_strictness() {
        let c = RofConfig::new(2, 0.25, RofVariant::Hutchinson, 7);
        assert_eq!(c.warmup.unwrap().period, 1000);
        assert!(c.validate().is_ok());
        let e = RofConfig::new(2, 0.25, RofVariant::ExactPenalty, 7);
        assert!(e.warmup.is_none());
        let bad = serde_json::from_value::<RofConfig>(serde_json::json!({
            "n": 2, "eta": 0.1, "variant": "hutchinson", "seed": 1, "etta": 0.2
        }));
        assert!(bad.is_err());
        let back: RofConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn ball_points_stay_inside() {
        let p = ball_points(&mut rng::stream(1, Stream::Eval, 2), 500, 5, 0.5);
        assert!(p.chunks_exact(5).all(|x| x.iter().map(|v| v * v).sum::<f64>() <= 0.25 + 1e-12));
    }

    #[test]
    fn tiny_run_writes_heatmap() {
        let mut c = RofConfig::new(2, 0.1, RofVariant::Hutchinson, 3);
        c.iterations = 20;
        c.batch_size = 64;
        c.hidden = 8;
        c.inner_dim = 4;
        c.fourier = Some(FourierSpec { features: 4, scale: 1.0 });
        c.test_points = 200;
        c.objective_points = 300;
        c.eval_every = 5;
        c.heatmap_resolution = 8;
        c.set_schedule_defaults();
        let r = run_rof(&c).unwrap();
        let h = r.array("heatmap").unwrap();
        assert_eq!(h.rows.len(), 64);
        let exact = h.column("exact").unwrap();
        assert!(exact.iter().any(|&v| (v - 0.8).abs() < 1e-15));
        assert!(r.scalar("final_objective").unwrap().is_finite());
        // Split bounds the nuclear term for every model.
        assert!(r.scalar("nuclear_penalty").unwrap() <= r.scalar("split_penalty").unwrap() + 1e-12);
    }
}

//! Unsupervised denoising of noisy samples from low-dimensional manifolds in `ℝᴰ`.
//!
//! Four denoisers see the same noisy training set `Y = X + σ_ε Z`: the
//! self-supervised objective `½‖f(y) − y‖² + σ_ε² R(y; f)`, a supervised
//! regressor on `(Y, X)`, Noise2Noise on `(Y, Y′)` and the optimal linear
//! shrinker of `Y`. All are scored by the mean squared error to clean test points.

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, LabeledArray};
use crate::autodiff::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::linalg::{optimal_shrink, random_orthogonal, svd, Matrix};
use crate::models::{CompositeModel, ModelSpec};
use crate::regularizers::{ProbeSharing, RegularizerSpec, JACOBIAN_GUARD};
use crate::rng::{self, Rng64, Stream};
use crate::training::{train, DataSource, LossKind, LrDrop, MetricsLog, TrainConfig};

const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    SwissRoll,
    Sphere,
}

impl ManifoldKind {
    pub fn intrinsic_dim(self) -> usize {
        match self {
            ManifoldKind::Circle => 1,
            ManifoldKind::SwissRoll | ManifoldKind::Sphere => 2,
        }
    }

    /// Dimension of the coordinate space the manifold is drawn in before embedding.
    pub fn chart_dim(self) -> usize {
        match self {
            ManifoldKind::Circle => 2,
            ManifoldKind::SwissRoll | ManifoldKind::Sphere => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub ambient_dim: usize,
    pub samples: usize,
    pub noise_std: f64,
    /// Circle and sphere radius; overall extent of the swiss roll.
    #[serde(default = "d_radius")]
    pub radius: f64,
}

fn d_radius() -> f64 {
    1.0
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, ambient_dim: usize, samples: usize, noise_std: f64) -> Self {
        Self {
            kind,
            ambient_dim,
            samples,
            noise_std,
            radius: 1.0,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.kind.intrinsic_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ambient_dim < self.kind.chart_dim() || self.intrinsic_dim() >= self.ambient_dim {
            return bad(format!(
                "{:?} needs ambient dimension at least {}, got {}",
                self.kind,
                self.kind.chart_dim(),
                self.ambient_dim
            ));
        }
        if self.ambient_dim > 32 {
            return bad(format!("ambient dimension {} exceeds 32", self.ambient_dim));
        }
        if self.samples == 0 {
            return bad("manifold sample count must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        Ok(())
    }
}

/// Row-major `[count, D]` clean points and their noisy observations.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldSample {
    pub dim: usize,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

impl ManifoldSample {
    pub fn len(&self) -> usize {
        self.clean.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

/// Chart coordinates of one manifold point.
fn chart_point(kind: ManifoldKind, radius: f64, rng: &mut Rng64) -> Vec<f64> {
    match kind {
        ManifoldKind::Circle => {
            let t = rng::uniform_vec(rng, 1, 0.0, std::f64::consts::TAU)[0];
            vec![radius * t.cos(), radius * t.sin()]
        }
        ManifoldKind::Sphere => loop {
            let z = rng::normal_vec(rng, 3);
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break z.iter().map(|v| radius * v / norm).collect();
            }
        },
        ManifoldKind::SwissRoll => {
            use std::f64::consts::PI;
            let u = rng::uniform_vec(rng, 2, 0.0, 1.0);
            let t = 1.5 * PI * (1.0 + 2.0 * u[0]);
            let s = radius / (4.5 * PI);
            vec![s * t * t.cos(), radius * (2.0 * u[1] - 1.0), s * t * t.sin()]
        }
    }
}

/// `count` points of `spec` embedded by the orthonormal columns of `frame`
/// (`D × chart_dim`), with noise `σ_ε z` drawn from `noise`.
pub fn sample_manifold(spec: &ManifoldSpec, frame: &Matrix, count: usize, points: &mut Rng64, noise: &mut Rng64) -> Result<ManifoldSample> {
    spec.validate()?;
    let d = spec.ambient_dim;
    let c = spec.kind.chart_dim();
    if frame.shape() != (d, c) {
        return Err(Error::InvalidArgument(format!(
            "embedding frame has shape {:?}, expected ({d}, {c})",
            frame.shape()
        )));
    }
    let mut clean = Vec::with_capacity(count * d);
    for _ in 0..count {
        let p = chart_point(spec.kind, spec.radius, points);
        for i in 0..d {
            clean.push((0..c).map(|j| frame[(i, j)] * p[j]).sum());
        }
    }
    let z = rng::normal_vec(noise, count * d);
    let noisy = clean.iter().zip(&z).map(|(x, e)| x + spec.noise_std * e).collect();
    Ok(ManifoldSample { dim: d, clean, noisy })
}

/// First `chart_dim` columns of a random orthogonal `D × D` matrix.
fn embedding_frame(spec: &ManifoldSpec, rng: &mut Rng64) -> Matrix {
    random_orthogonal(spec.ambient_dim, rng).columns(0, spec.kind.chart_dim()).into_owned()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub manifold: ManifoldSpec,
    pub seed: u64,
    /// Penalty weight of the self-supervised objective; `None` means `σ_ε²`.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    /// Width of `h`'s output; `None` means the ambient dimension.
    #[serde(default)]
    pub inner_dim: Option<usize>,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_drop: Option<LrDrop>,
    /// Probe scale of the Hutchinson penalty.
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_one")]
    pub samples: usize,
    #[serde(default)]
    pub sharing: ProbeSharing,
    #[serde(default = "d_test")]
    pub test_samples: usize,
    /// Test points at which Jacobian spectra are averaged.
    #[serde(default = "d_spectrum_points")]
    pub spectrum_points: usize,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Draw fresh noise for every batch instead of reusing the fixed noisy set.
    #[serde(default)]
    pub fresh_noise: bool,
}

fn d_hidden() -> usize {
    64
}
fn d_iterations() -> usize {
    10_000
}
fn d_batch() -> usize {
    512
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
fn d_test() -> usize {
    4096
}
fn d_spectrum_points() -> usize {
    256
}
fn d_eval_every() -> usize {
    500
}

impl DenoiseConfig {
    pub fn new(manifold: ManifoldSpec, seed: u64) -> Self {
        let mut c: DenoiseConfig = serde_json::from_value(serde_json::json!({
            "manifold": manifold, "seed": seed,
        }))
        .expect("defaults deserialize");
        c.set_schedule_defaults();
        c
    }

    /// Learning rate drops tenfold for the last fifth of the budget.
    pub fn set_schedule_defaults(&mut self) {
        self.lr_drop = Some(LrDrop {
            at: self.iterations * 4 / 5,
            factor: 0.1,
        });
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(self.manifold.noise_std * self.manifold.noise_std)
    }

    pub fn model_spec(&self) -> ModelSpec {
        let d = self.manifold.ambient_dim;
        ModelSpec::two_layer(d, self.inner_dim.unwrap_or(d), d, self.hidden, self.seed)
    }

    fn train_config(&self, regularizer: Option<RegularizerSpec>) -> TrainConfig {
        let mut t = TrainConfig::new(self.lr, self.iterations, self.batch_size, self.seed);
        t.regularizer = regularizer;
        t.lr_drop = self.lr_drop;
        t.eval_every = self.eval_every;
        t
    }

    fn regularizer(&self) -> RegularizerSpec {
        let mut r = RegularizerSpec::hutchinson(self.eta(), self.sigma, self.samples);
        r.sharing = self.sharing;
        r
    }

    pub fn validate(&self) -> Result<()> {
        self.manifold.validate()?;
        if !(self.eta() >= 0.0) || !self.eta().is_finite() {
            return Err(Error::Config(format!("eta must be finite and >= 0, got {}", self.eta())));
        }
        self.train_config(Some(self.regularizer())).validate()?;
        if self.test_samples == 0 || self.spectrum_points == 0 || self.spectrum_points > self.test_samples {
            return Err(Error::Config("need 0 < spectrum_points <= test_samples".into()));
        }
        Ok(())
    }
}

/// Normalized singular spectrum of `Jf[x]` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// `σᵢ/σ₁`, descending; all zeros when `zero` is set.
    pub normalized: Vec<f64>,
    pub sigma_max: f64,
    /// Left singular vectors `u¹..uᵏ` in the output space.
    pub directions: Vec<Vec<f64>>,
    /// The Jacobian vanished at `x`.
    pub zero: bool,
}

impl Spectrum {
    /// `‖Jf‖_*/σ₁`, the sum of the normalized spectrum.
    pub fn nuclear_ratio(&self) -> f64 {
        self.normalized.iter().sum()
    }
}

fn jacobian_matrices(model: &CompositeModel, pts: &[f64]) -> Result<Vec<Matrix>> {
    let (n, m) = (model.input_dim(), model.output_dim());
    if n * m > JACOBIAN_GUARD {
        return Err(Error::JacobianTooLarge {
            rows: m,
            cols: n,
            limit: JACOBIAN_GUARD,
        });
    }
    let mut out = Vec::with_capacity(pts.len() / n);
    for chunk in pts.chunks(CHUNK * n) {
        let b = chunk.len() / n;
        let (_, _, rows) = model.jacobian_rows(&Tensor::new(chunk.to_vec(), &[b, n]), false)?;
        for s in 0..b {
            out.push(Matrix::from_fn(m, n, |i, j| rows[i].data()[s * n + j]));
        }
    }
    Ok(out)
}

fn spectrum_of(j: &Matrix, top_k: usize) -> Result<Spectrum> {
    let s = svd(j)?;
    let k = top_k.min(s.sigma.len());
    let sigma_max = s.sigma.first().copied().unwrap_or(0.0);
    let zero = !(sigma_max > 0.0);
    let normalized = if zero {
        vec![0.0; k]
    } else {
        s.sigma[..k].iter().map(|v| v / sigma_max).collect()
    };
    let directions = (0..k).map(|c| s.u.column(c).iter().copied().collect()).collect();
    Ok(Spectrum {
        normalized,
        sigma_max,
        directions,
        zero,
    })
}

/// Top `top_k` normalized singular values of `Jf[x]` and their left singular vectors.
pub fn spectrum_analysis(model: &CompositeModel, x: &[f64], top_k: usize) -> Result<Spectrum> {
    if x.len() != model.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "point has {} coordinates, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    spectrum_of(&jacobian_matrices(model, x)?[0], top_k)
}

fn predict(model: &CompositeModel, pts: &[f64], d: usize) -> Result<Vec<f64>> {
    no_grad(|| {
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(CHUNK * d) {
            let x = Tensor::new(chunk.to_vec(), &[chunk.len() / d, d]);
            out.extend_from_slice(model.forward(&x)?.data());
        }
        Ok(out)
    })
}

/// Mean over points and coordinates of `(a − b)²`.
fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `[D, N]` matrix whose columns are the rows of a row-major `[N, D]` buffer.
fn columns_matrix(rows: &[f64], d: usize) -> Matrix {
    Matrix::from_column_slice(d, rows.len() / d, rows)
}

/// Mean normalized spectrum and mean `‖Jf‖_*/σ₁` over `pts`.
fn mean_spectrum(model: &CompositeModel, pts: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = model.output_dim();
    let mut acc = vec![0.0; d.min(model.input_dim())];
    let mut ratio = 0.0;
    let js = jacobian_matrices(model, pts)?;
    for j in &js {
        let s = spectrum_of(j, acc.len())?;
        for (a, v) in acc.iter_mut().zip(&s.normalized) {
            *a += v;
        }
        ratio += s.nuclear_ratio();
    }
    let count = js.len() as f64;
    Ok((acc.iter().map(|v| v / count).collect(), ratio / count))
}

/// Trains and scores the four denoisers.
///
/// Summary keys: `eta`, `mse_noisy` (identity map), `mse_ours`,
/// `mse_supervised`, `mse_n2n`, `mse_linear`, `ratio_ours_supervised`,
/// `rank_linear`, and `nuclear_ratio_{ours,supervised,n2n,linear}` (mean
/// `‖Jf‖_*/σ₁` over the spectrum points). Arrays: `spectra` (mean normalized
/// spectrum per method) and `directions` (top singular directions of our
/// denoiser at the first test point).
pub fn run_synthetic_denoise(config: &DenoiseConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = &config.manifold;
    let d = spec.ambient_dim;
    let seed = config.seed;
    let frame = embedding_frame(spec, &mut rng::stream(seed, Stream::Aux, 0));
    let train_set = sample_manifold(
        spec,
        &frame,
        spec.samples,
        &mut rng::stream(seed, Stream::Data, 1),
        &mut rng::stream(seed, Stream::Noise, 0),
    )?;
    let second: Vec<f64> = {
        let z = rng::normal_vec(&mut rng::stream(seed, Stream::Noise, 1), train_set.clean.len());
        train_set.clean.iter().zip(&z).map(|(x, e)| x + spec.noise_std * e).collect()
    };
    let test = sample_manifold(
        spec,
        &frame,
        config.test_samples,
        &mut rng::stream(seed, Stream::Eval, 0),
        &mut rng::stream(seed, Stream::Noise, 2),
    )?;

    let eval_pts = config.test_samples.min(1024) * d;
    let (eval_y, eval_x) = (&test.noisy[..eval_pts], &test.clean[..eval_pts]);
    let eval = |m: &CompositeModel| Ok(mean_abs(&predict(m, eval_y, d)?, eval_x));

    let empirical = |targets: Option<&Vec<f64>>, pairs: Option<&Vec<f64>>| DataSource::Empirical {
        inputs: train_set.noisy.clone(),
        dim: d,
        targets: targets.map(|t| (t.clone(), d)),
        pairs: pairs.cloned(),
    };
    let fresh = DataSource::NoisyManifold {
        clean: train_set.clean.clone(),
        dim: d,
        noise_std: spec.noise_std,
    };
    let (ours_data, sup_data, n2n_data) = if config.fresh_noise {
        (fresh.clone(), fresh.clone(), fresh)
    } else {
        (
            empirical(None, None),
            empirical(Some(&train_set.clean), None),
            empirical(None, Some(&second)),
        )
    };

    let init = CompositeModel::init(&config.model_spec())?;
    let runs: [(&str, LossKind, &DataSource, Option<RegularizerSpec>); 3] = [
        ("ours", LossKind::Denoise, &ours_data, Some(config.regularizer())),
        ("supervised", LossKind::Supervised, &sup_data, None),
        ("n2n", LossKind::N2n, &n2n_data, None),
    ];
    let mut report = ExperimentReport::new("denoise", seed, config)?;
    report.set("eta", config.eta());
    report.set("mse_noisy", mse(&test.noisy, &test.clean));
    let spectrum_pts = &test.noisy[..config.spectrum_points * d];
    let mut spectra: Vec<Vec<f64>> = Vec::new();
    let mut logs: Vec<(String, MetricsLog)> = Vec::new();
    let mut ours_model = None;
    for (name, loss, data, reg) in runs {
        let (model, log) = train(&init, loss, data, &config.train_config(reg), Some(&eval))?;
        let err = mse(&predict(&model, &test.noisy, d)?, &test.clean);
        report.set(&format!("mse_{name}"), err);
        let (spectrum, ratio) = mean_spectrum(&model, spectrum_pts)?;
        report.set(&format!("nuclear_ratio_{name}"), ratio);
        spectra.push(spectrum);
        logs.push((name.to_string(), log));
        if name == "ours" {
            ours_model = Some(model);
        }
    }

    let shrink = optimal_shrink(&columns_matrix(&train_set.noisy, d), config.eta())?;
    let linear = &shrink.operator * columns_matrix(&test.noisy, d);
    report.set("mse_linear", mse(linear.as_slice(), &test.clean));
    report.set("rank_linear", shrink.gamma.iter().filter(|&&g| g > 0.0).count() as f64);
    let lin_spec = spectrum_of(&shrink.operator, d)?;
    report.set("nuclear_ratio_linear", lin_spec.nuclear_ratio());
    spectra.push(lin_spec.normalized);
    report.set(
        "ratio_ours_supervised",
        report.scalar("mse_ours").unwrap_or(f64::NAN) / report.scalar("mse_supervised").unwrap_or(f64::NAN),
    );

    let mut table = LabeledArray::new("spectra", &["index", "ours", "supervised", "n2n", "linear"], vec![d, 4]);
    for i in 0..d {
        let mut row = vec![i as f64];
        row.extend(spectra.iter().map(|s| s.get(i).copied().unwrap_or(0.0)));
        table.push(row);
    }
    report.arrays.push(table);

    let ours_model = ours_model.expect("ours is trained first");
    let top = spectrum_analysis(&ours_model, &test.noisy[..d], d)?;
    let mut cols: Vec<String> = vec!["rank".into(), "normalized_sigma".into()];
    cols.extend((0..d).map(|i| format!("u{i}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut dirs = LabeledArray::new("directions", &col_refs, vec![top.directions.len(), d]);
    for (k, (u, s)) in top.directions.iter().zip(&top.normalized).enumerate() {
        let mut row = vec![k as f64, *s];
        row.extend_from_slice(u);
        dirs.push(row);
    }
    report.arrays.push(dirs);
    report.metrics = logs;
    Ok(report)
}

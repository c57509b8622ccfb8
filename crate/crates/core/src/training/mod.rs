//! Stochastic training of composite models on `data term + η·penalty`.

mod data;
mod losses;
mod metrics;
mod optim;

pub use data::{Batch, DataSource};
pub use losses::{denoise_loss, n2n_loss, rof_loss, supervised_mse, unit_ball_indicator, LossKind};
pub use metrics::{MetricsLog, Record, CSV_HEADER};
pub use optim::{adamw_step, AdamState, AdamW};

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Tensor};
use crate::error::{Error, Result};
use crate::models::CompositeModel;
use crate::regularizers::{ForwardPass, RegularizerSpec};
use crate::rng::{self, Stream};

/// Staircase `η`: `start`, then `+increment` every `period` iterations, capped at the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Warmup {
    pub start: f64,
    pub increment: f64,
    pub period: usize,
}

impl Warmup {
    pub fn eta_at(&self, target: f64, iteration: usize) -> f64 {
        let steps = (iteration / self.period.max(1)) as f64;
        (self.start + steps * self.increment).min(target)
    }

    /// First iteration at which the target is reached.
    pub fn reaches_target_at(&self, target: f64) -> Option<usize> {
        if self.start >= target {
            return Some(0);
        }
        if self.increment <= 0.0 {
            return None;
        }
        let steps = ((target - self.start) / self.increment - 1e-9).ceil().max(0.0) as usize;
        Some(steps * self.period)
    }
}

/// Multiplies the learning rate by `factor` from iteration `at` onwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDrop {
    pub at: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Penalty and its target `η`; `None` trains on the data term alone.
    #[serde(default)]
    pub regularizer: Option<RegularizerSpec>,
    #[serde(default)]
    pub warmup: Option<Warmup>,
    #[serde(default)]
    pub lr_drop: Option<LrDrop>,
    #[serde(default)]
    pub optimizer: AdamW,
    /// Evaluation period for the `mae` column; 0 disables it.
    #[serde(default)]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(lr: f64, iterations: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr,
            iterations,
            batch_size,
            seed,
            regularizer: None,
            warmup: None,
            lr_drop: None,
            optimizer: AdamW::default(),
            eval_every: 0,
        }
    }

    pub fn target_eta(&self) -> f64 {
        self.regularizer.as_ref().map_or(0.0, |r| r.eta)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return cfg(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return cfg("batch_size must be positive".into());
        }
        if let Some(r) = &self.regularizer {
            r.validate()?;
        }
        if let Some(w) = &self.warmup {
            if w.period == 0 || w.start < 0.0 || w.increment < 0.0 {
                return cfg("warmup needs period > 0 and non-negative start and increment".into());
            }
            match w.reaches_target_at(self.target_eta()) {
                Some(at) if at < self.iterations.max(1) => {}
                _ => {
                    return cfg(format!(
                        "warmup {w:?} does not reach eta {} within {} iterations",
                        self.target_eta(),
                        self.iterations
                    ))
                }
            }
        }
        if let Some(d) = &self.lr_drop {
            if !(d.factor > 0.0) {
                return cfg("lr_drop factor must be positive".into());
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        match self.lr_drop {
            Some(d) if iteration >= d.at => self.lr * d.factor,
            _ => self.lr,
        }
    }
}

/// `η` in effect at `iteration`: the warmup staircase, then the target.
pub fn eta_schedule(config: &TrainConfig, iteration: usize) -> f64 {
    let target = config.target_eta();
    match &config.warmup {
        Some(w) => w.eta_at(target, iteration),
        None => target,
    }
}

/// Callback computing the `mae` column from the current model.
pub type Evaluator<'a> = &'a dyn Fn(&CompositeModel) -> Result<f64>;

/// Minimizes `mean data term + η(t)·penalty` with AdamW.
///
/// Batches come from the `Data` stream and penalty probes from the `Probes`
/// stream of `config.seed`. The record for iteration `t` describes the
/// minibatch objective at the parameters before update `t`; with an
/// evaluator, the last record always carries an `mae`.
pub fn train(
    model: &CompositeModel,
    loss: LossKind,
    data: &DataSource,
    config: &TrainConfig,
    eval: Option<Evaluator<'_>>,
) -> Result<(CompositeModel, MetricsLog)> {
    config.validate()?;
    data.validate()?;
    if data.dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "train data",
            lhs: vec![data.dim()],
            rhs: vec![model.input_dim()],
        });
    }
    let mut data_rng = rng::stream(config.seed, Stream::Data, 0);
    let mut probe_rng = rng::stream(config.seed, Stream::Probes, 0);
    let mut model = model.clone();
    let mut params: Vec<Vec<f64>> = model.parameters().iter().map(|p| p.to_vec()).collect();
    let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
    let mut state = AdamState::new(params.iter().map(Vec::len));
    let mut log = MetricsLog::new();

    for it in 0..config.iterations {
        let eta = eta_schedule(config, it);
        let batch = data.sample(config.batch_size, &mut data_rng)?;
        let active = config.regularizer.as_ref().filter(|_| eta > 0.0);
        let pass = match active {
            Some(spec) => spec.forward(&model, &batch.input)?,
            None => ForwardPass::plain(&model, &batch.input)?,
        };
        let data_term = loss.data_term(&pass.fx, &batch)?;
        let penalty = match active {
            Some(spec) => Some(spec.penalty(&model, &batch.input, Some(&pass), &mut probe_rng)?.scale(eta)),
            None => None,
        };
        let total = match &penalty {
            Some(p) => data_term.add(p)?,
            None => data_term.clone(),
        };
        let objective = total.item();
        if !objective.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        let mae = match eval {
            Some(f) if config.eval_every > 0 && (it % config.eval_every == 0 || it + 1 == config.iterations) => Some(f(&model)?),
            _ => None,
        };
        log.push(Record {
            iteration: it,
            objective,
            data_term: data_term.item(),
            penalty_term: penalty.as_ref().map_or(0.0, Tensor::item),
            eta,
            mae,
        })?;

        let current = model.parameters();
        let grads = grad(&total, &current.iter().collect::<Vec<_>>(), false)?;
        let gslices: Vec<&[f64]> = grads.iter().map(Tensor::data).collect();
        adamw_step(&mut params, &gslices, &mut state, &config.optimizer, config.lr_at(it))?;
        model = model.with_parameters(params.iter().zip(&shapes).map(|(p, s)| Tensor::param(p.clone(), s)).collect())?;
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mlp;
    use crate::rng::normal_vec;
    use nalgebra::{DMatrix, DVector};

    fn linear_model(n: usize, m: usize) -> CompositeModel {
        let h = Mlp::linear(Tensor::eye(n), Tensor::zeros(&[1, n])).unwrap();
        let g = Mlp::linear(Tensor::zeros(&[n, m]), Tensor::zeros(&[1, m])).unwrap();
        CompositeModel::from_parts(None, h, g).unwrap()
    }

    #[test]
    fn eta_schedule_staircase() {
        let mut c = TrainConfig::new(1e-3, 100, 1, 0);
        c.regularizer = Some(RegularizerSpec::hutchinson(0.25, 0.01, 1));
        c.warmup = Some(Warmup {
            start: 0.05,
            increment: 0.05,
            period: 10,
        });
        assert_eq!(eta_schedule(&c, 0), 0.05);
        assert!((eta_schedule(&c, 10) - 0.1).abs() < 1e-15);
        assert_eq!(eta_schedule(&c, 99), 0.25);
        let mut prev = 0.0;
        for t in 0..100 {
            let e = eta_schedule(&c, t);
            assert!(e >= prev && e <= 0.25);
            prev = e;
        }
        c.iterations = 30;
        assert!(c.validate().is_err());
    }

    #[test]
    fn least_squares_at_zero_eta() {
        // Full-batch regression with a linear head; OLS through the normal equations.
        let (rows, n) = (40, 3);
        let mut r = rng::stream(4, Stream::Aux, 0);
        let x = normal_vec(&mut r, rows * n);
        let y: Vec<f64> = x
            .chunks_exact(n)
            .zip(normal_vec(&mut r, rows))
            .map(|(xr, e)| 0.5 * xr[0] - 1.5 * xr[1] + 2.0 * xr[2] + 0.3 + 0.1 * e)
            .collect();
        let design = DMatrix::from_fn(rows, n + 1, |i, j| if j < n { x[i * n + j] } else { 1.0 });
        let beta = (design.transpose() * &design)
            .lu()
            .solve(&(design.transpose() * DVector::from_vec(y.clone())))
            .unwrap();

        let data = DataSource::Empirical {
            inputs: x,
            dim: n,
            targets: Some((y, 1)),
            pairs: None,
        };
        let mut cfg = TrainConfig::new(1e-2, 6000, rows, 1);
        cfg.optimizer.weight_decay = 0.0;
        cfg.lr_drop = Some(LrDrop { at: 4000, factor: 0.1 });
        let (fit, _) = train(&linear_model(n, 1), LossKind::Supervised, &data, &cfg, None).unwrap();
        let p = fit.parameters();
        let (w, b) = (p[2].data(), p[3].data()[0]);
        let h = p[0].data();
        for j in 0..n {
            let coef: f64 = (0..n).map(|k| h[j * n + k] * w[k]).sum();
            assert!((coef - beta[j]).abs() < 1e-4, "coef {j}: {coef} vs {}", beta[j]);
        }
        let hb = p[1].data();
        let intercept: f64 = b + (0..n).map(|k| hb[k] * w[k]).sum::<f64>();
        assert!((intercept - beta[n]).abs() < 1e-4);
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let m = linear_model(2, 1);
        let data = DataSource::UniformBox { dim: 2, lo: -1.0, hi: 1.0 };
        let (out, log) = train(&m, LossKind::Rof, &data, &TrainConfig::new(1e-3, 0, 8, 0), None).unwrap();
        assert!(log.is_empty());
        assert_eq!(out.flat_parameters(), m.flat_parameters());
    }

    #[test]
    fn training_is_deterministic() {
        let spec = crate::models::ModelSpec::two_layer(2, 3, 1, 8, 5);
        let m = CompositeModel::init(&spec).unwrap();
        let data = DataSource::UniformBox { dim: 2, lo: -2.0, hi: 2.0 };
        let mut cfg = TrainConfig::new(1e-3, 20, 32, 9);
        cfg.regularizer = Some(RegularizerSpec::hutchinson(0.1, 0.01, 2));
        cfg.eval_every = 7;
        let run = || train(&m, LossKind::Rof, &data, &cfg, Some(&|_: &CompositeModel| Ok(0.5))).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la.to_csv(), lb.to_csv());
        assert_eq!(a.flat_parameters(), b.flat_parameters());
        assert_eq!(la.last().unwrap().mae, Some(0.5));
    }

    #[test]
    fn non_finite_loss_aborts_with_iteration() {
        let m = linear_model(1, 1);
        let data = DataSource::Empirical {
            inputs: vec![f64::NAN],
            dim: 1,
            targets: Some((vec![0.0], 1)),
            pairs: None,
        };
        let err = train(&m, LossKind::Supervised, &data, &TrainConfig::new(1e-3, 3, 1, 0), None).unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 0 }));
    }
}

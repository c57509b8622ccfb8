//! Batch sources.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

/// One training batch. `input` feeds the model; the loss picks the target.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: Tensor,
    /// Clean points or regression targets, when the source has them.
    pub target: Option<Tensor>,
    /// A second, independently corrupted copy of the same clean points.
    pub pair: Option<Tensor>,
}

/// Distribution a batch is drawn from. Every kind has a density or is an
/// empirical measure over fixed rows.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Uniform on `[lo, hi]^dim`.
    UniformBox { dim: usize, lo: f64, hi: f64 },
    /// Rows of a fixed `[rows, dim]` matrix, with optional `[rows, target_dim]`
    /// targets and optional `[rows, dim]` paired copies. A batch at least as
    /// large as the set is the whole set in order.
    Empirical {
        inputs: Vec<f64>,
        dim: usize,
        targets: Option<(Vec<f64>, usize)>,
        pairs: Option<Vec<f64>>,
    },
    /// Clean rows `x` of a `[rows, dim]` matrix observed as `y = x + σ z`, fresh `z` per draw.
    NoisyManifold { clean: Vec<f64>, dim: usize, noise_std: f64 },
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::UniformBox { dim, .. } | DataSource::Empirical { dim, .. } | DataSource::NoisyManifold { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            DataSource::UniformBox { dim, lo, hi } => {
                if *dim == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return bad(format!("uniform box needs dim > 0 and lo < hi, got {dim}, [{lo}, {hi}]"));
                }
            }
            DataSource::Empirical { inputs, dim, targets, pairs } => {
                if pairs.as_ref().is_some_and(|p| p.len() != inputs.len()) {
                    return bad("empirical pairs must match the inputs in shape".into());
                }
                if *dim == 0 || inputs.is_empty() || inputs.len() % dim != 0 {
                    return bad(format!("empirical inputs of length {} do not split into rows of {dim}", inputs.len()));
                }
                if let Some((t, td)) = targets {
                    if *td == 0 || t.len() != inputs.len() / dim * td {
                        return bad("empirical targets do not match the number of input rows".into());
                    }
                }
            }
            DataSource::NoisyManifold { clean, dim, noise_std } => {
                if *dim == 0 || clean.is_empty() || clean.len() % dim != 0 {
                    return bad(format!("clean set of length {} does not split into rows of {dim}", clean.len()));
                }
                if !(*noise_std >= 0.0) {
                    return bad(format!("noise std must be >= 0, got {noise_std}"));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng64) -> Result<Batch> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        match self {
            DataSource::UniformBox { dim, lo, hi } => Ok(Batch {
                input: Tensor::new(rng::uniform_vec(rng, batch * dim, *lo, *hi), &[batch, *dim]),
                target: None,
                pair: None,
            }),
            DataSource::Empirical { inputs, dim, targets, pairs } => {
                let rows = inputs.len() / dim;
                let idx: Vec<usize> = if batch >= rows {
                    (0..rows).collect()
                } else {
                    (0..batch).map(|_| rng.random_range(0..rows)).collect()
                };
                let target = targets.as_ref().map(|(t, td)| gather(t, *td, &idx));
                Ok(Batch {
                    input: gather(inputs, *dim, &idx),
                    target,
                    pair: pairs.as_ref().map(|p| gather(p, *dim, &idx)),
                })
            }
            DataSource::NoisyManifold { clean, dim, noise_std } => {
                let rows = clean.len() / dim;
                let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..rows)).collect();
                let x = gather(clean, *dim, &idx);
                let noisy = |rng: &mut Rng64| {
                    let z = rng::normal_vec(rng, idx.len() * dim);
                    let y = x.data().iter().zip(z).map(|(a, e)| a + noise_std * e).collect();
                    Tensor::new(y, &[idx.len(), *dim])
                };
                let input = noisy(rng);
                let pair = noisy(rng);
                Ok(Batch {
                    input,
                    target: Some(x),
                    pair: Some(pair),
                })
            }
        }
    }
}

fn gather(data: &[f64], dim: usize, idx: &[usize]) -> Tensor {
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
    }
    Tensor::new(out, &[idx.len(), dim])
}

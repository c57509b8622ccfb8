//! ELU multilayer perceptrons, Fourier input features, and the composite
//! `f = g ∘ h` the penalties are defined on.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{batch_jacobian_rows, batch_jvp, no_grad, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Fully connected stack; ELU on hidden layers, identity on the output.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    /// Uniform(−1/√fan_in, 1/√fan_in) initialization for weights and biases.
    pub fn init(widths: &[usize], rng: &mut rng::Rng64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "mlp widths must have at least two positive entries, got {widths:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            weights.push(Tensor::param(w, &[fan_in, fan_out]));
            biases.push(Tensor::param(b, &[1, fan_out]));
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds from explicit `[in, out]` weights and `[1, out]` biases.
    pub fn from_layers(weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument("need one bias per weight matrix".into()));
        }
        let mut widths = vec![weights[0].shape()[0]];
        for (w, b) in weights.iter().zip(&biases) {
            let (fi, fo) = w.dims2().ok_or_else(|| Error::Rank {
                op: "mlp weight",
                expected: 2,
                shape: w.shape().to_vec(),
            })?;
            if fi != *widths.last().unwrap() || b.shape() != [1, fo] {
                return Err(Error::ShapeMismatch {
                    op: "mlp layer chain",
                    lhs: w.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            widths.push(fo);
        }
        let track = |t: Tensor| if t.is_tracked() { t } else { t.requires_grad() };
        Ok(Self {
            widths,
            weights: weights.into_iter().map(track).collect(),
            biases: biases.into_iter().map(track).collect(),
        })
    }

    /// Single affine layer `x ↦ x W + b`.
    pub fn linear(w: Tensor, b: Tensor) -> Result<Self> {
        Self::from_layers(vec![w], vec![b])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.weights.len() - 1;
        let mut a = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.matmul(w)?.add_row(b)?;
            if i < last {
                a = a.elu();
            }
        }
        Ok(a)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    fn replace(&mut self, params: &mut impl Iterator<Item = Tensor>) -> Result<()> {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for slot in [w, b] {
                let p = params
                    .next()
                    .ok_or_else(|| Error::InvalidArgument("too few parameters".into()))?;
                if p.shape() != slot.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "set parameters",
                        lhs: slot.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                *slot = if p.is_tracked() { p } else { p.requires_grad() };
            }
        }
        Ok(())
    }
}

/// Fixed random projection `γ(x) = [cos(2πBx); sin(2πBx)]`, `B ~ N(0, scale²)`.
#[derive(Clone, Debug)]
pub struct FourierFeatures {
    b: Tensor,
    scale: f64,
}

impl FourierFeatures {
    pub fn init(input_dim: usize, features: usize, scale: f64, rng: &mut rng::Rng64) -> Self {
        let data = rng::normal_vec(rng, features * input_dim)
            .into_iter()
            .map(|z| z * scale)
            .collect();
        Self {
            b: Tensor::new(data, &[features, input_dim]),
            scale,
        }
    }

    pub fn from_matrix(b: Tensor) -> Self {
        Self { b: b.detach(), scale: f64::NAN }
    }

    pub fn features(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        2 * self.features()
    }

    pub fn projection(&self) -> &Tensor {
        &self.b
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Tracked inputs go through recorded ops; untracked inputs take a fused path.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.is_tracked() {
            let z = x.matmul_t(&self.b, false, true)?.scale(2.0 * std::f64::consts::PI);
            return z.cos().concat_cols(&z.sin());
        }
        Ok(self.embed_with_slope(x, false)?.0)
    }

    /// `γ(x)` for an untracked batch and, on request, the `[b, 2k]` factor `S`
    /// with `∂γ_j/∂x_i = S_j (B_stack)_{j,i}`, where `B_stack = [B; B]`.
    pub fn embed_with_slope(&self, x: &Tensor, slope: bool) -> Result<(Tensor, Option<Tensor>)> {
        let z = no_grad(|| x.matmul_t(&self.b, false, true))?;
        let (b, k) = (z.shape()[0], z.shape()[1]);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut emb = vec![0.0; b * 2 * k];
        let mut s = if slope { vec![0.0; b * 2 * k] } else { Vec::new() };
        for (r, zr) in z.data().chunks_exact(k).enumerate() {
            for (j, &zj) in zr.iter().enumerate() {
                // Whole turns are dropped before scaling to keep the argument small.
                let (sin, cos) = (two_pi * (zj - zj.round())).sin_cos();
                emb[r * 2 * k + j] = cos;
                emb[r * 2 * k + k + j] = sin;
                if slope {
                    s[r * 2 * k + j] = -two_pi * sin;
                    s[r * 2 * k + k + j] = two_pi * cos;
                }
            }
        }
        let emb = Tensor::new(emb, &[b, 2 * k]);
        Ok((emb, slope.then(|| Tensor::new(s, &[b, 2 * k]))))
    }

    /// `[B; B]`, shape `[2k, n]`.
    pub fn stacked_projection(&self) -> Tensor {
        let mut d = self.b.to_vec();
        d.extend_from_slice(self.b.data());
        Tensor::new(d, &[2 * self.features(), self.b.shape()[1]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    pub features: usize,
    pub scale: f64,
}

impl Default for FourierSpec {
    fn default() -> Self {
        Self {
            features: 64,
            scale: 1.0,
        }
    }
}

/// Architecture of a composite model; `h: n → d`, `g: d → m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub inner_dim: usize,
    pub output_dim: usize,
    /// Hidden widths of `h`.
    pub h_hidden: Vec<usize>,
    /// Hidden widths of `g`.
    pub g_hidden: Vec<usize>,
    #[serde(default)]
    pub fourier: Option<FourierSpec>,
    pub seed: u64,
}

impl ModelSpec {
    /// Two-layer `h` and `g` with a shared hidden width.
    pub fn two_layer(input_dim: usize, inner_dim: usize, output_dim: usize, hidden: usize, seed: u64) -> Self {
        Self {
            input_dim,
            inner_dim,
            output_dim,
            h_hidden: vec![hidden],
            g_hidden: vec![hidden],
            fourier: None,
            seed,
        }
    }

    pub fn with_fourier(mut self, fourier: FourierSpec) -> Self {
        self.fourier = Some(fourier);
        self
    }
}

/// `f = g ∘ h`, with optional Fourier features at the front of `h`.
#[derive(Clone, Debug)]
pub struct CompositeModel {
    fourier: Option<FourierFeatures>,
    h: Mlp,
    g: Mlp,
    input_dim: usize,
    spec: Option<ModelSpec>,
}

impl CompositeModel {
    pub fn init(spec: &ModelSpec) -> Result<Self> {
        let mut init_rng = rng::stream(spec.seed, Stream::Init, 0);
        let fourier = spec.fourier.as_ref().map(|f| {
            let mut frng = rng::stream(spec.seed, Stream::Init, 1);
            FourierFeatures::init(spec.input_dim, f.features, f.scale, &mut frng)
        });
        let h_in = fourier.as_ref().map_or(spec.input_dim, |f| f.output_dim());
        let mut hw = vec![h_in];
        hw.extend(&spec.h_hidden);
        hw.push(spec.inner_dim);
        let mut gw = vec![spec.inner_dim];
        gw.extend(&spec.g_hidden);
        gw.push(spec.output_dim);
        let h = Mlp::init(&hw, &mut init_rng)?;
        let g = Mlp::init(&gw, &mut init_rng)?;
        Ok(Self {
            fourier,
            h,
            g,
            input_dim: spec.input_dim,
            spec: Some(spec.clone()),
        })
    }

    pub fn from_parts(fourier: Option<FourierFeatures>, h: Mlp, g: Mlp) -> Result<Self> {
        let input_dim = match &fourier {
            Some(f) => {
                if f.output_dim() != h.input_dim() {
                    return Err(Error::ShapeMismatch {
                        op: "fourier -> h",
                        lhs: vec![f.output_dim()],
                        rhs: vec![h.input_dim()],
                    });
                }
                f.projection().shape()[1]
            }
            None => h.input_dim(),
        };
        if h.output_dim() != g.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "h -> g",
                lhs: vec![h.output_dim()],
                rhs: vec![g.input_dim()],
            });
        }
        Ok(Self {
            fourier,
            h,
            g,
            input_dim,
            spec: None,
        })
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inner_dim(&self) -> usize {
        self.h.output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.g.output_dim()
    }

    pub fn h(&self) -> &Mlp {
        &self.h
    }

    pub fn g(&self) -> &Mlp {
        &self.g
    }

    pub fn fourier(&self) -> Option<&FourierFeatures> {
        self.fourier.as_ref()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        match x.dims2() {
            Some((_, n)) if n == self.input_dim => Ok(()),
            _ => Err(Error::ShapeMismatch {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: vec![0, self.input_dim],
            }),
        }
    }

    /// `h(x)` for a batch `[b, n]`.
    pub fn forward_h(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match &self.fourier {
            Some(f) => self.h.forward(&f.forward(x)?),
            None => self.h.forward(x),
        }
    }

    /// `g(y)` for a batch `[b, d]`.
    pub fn forward_g(&self, y: &Tensor) -> Result<Tensor> {
        self.g.forward(y)
    }

    /// `g(h(x))` for a batch `[b, n]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_g(&self.forward_h(x)?)
    }

    /// Input leaf of the MLP part of `h` plus the chain factor through the Fourier features.
    fn input_leaf(&self, x: &Tensor) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        self.check_input(x)?;
        match &self.fourier {
            None => Ok((x.detach().requires_grad(), None)),
            Some(f) => {
                let (emb, s) = f.embed_with_slope(&x.detach(), true)?;
                Ok((emb.requires_grad(), Some((s.expect("slope requested"), f.stacked_projection()))))
            }
        }
    }

    fn chain(rows: Vec<Tensor>, chain: &Option<(Tensor, Tensor)>) -> Result<Vec<Tensor>> {
        match chain {
            None => Ok(rows),
            Some((s, bs)) => rows.into_iter().map(|r| r.mul(s)?.matmul(bs)).collect(),
        }
    }

    /// `(h(x), f(x), rows of Jf[x])`, each row `[b, n]`. With `create_graph` the
    /// rows stay differentiable with respect to the parameters.
    pub fn jacobian_rows(&self, x: &Tensor, create_graph: bool) -> Result<(Tensor, Tensor, Vec<Tensor>)> {
        let (leaf, chain) = self.input_leaf(x)?;
        let hx = self.h.forward(&leaf)?;
        let fx = self.g.forward(&hx)?;
        let rows = batch_jacobian_rows(&fx, &leaf, create_graph)?;
        Ok((hx, fx, Self::chain(rows, &chain)?))
    }

    /// `(h(x), rows of Jh[x])`.
    pub fn h_jacobian_rows(&self, x: &Tensor, create_graph: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let (leaf, chain) = self.input_leaf(x)?;
        let hx = self.h.forward(&leaf)?;
        let rows = batch_jacobian_rows(&hx, &leaf, create_graph)?;
        Ok((hx, Self::chain(rows, &chain)?))
    }

    /// Per-sample `Jh[x] v` for a batch of directions `v` (values only).
    pub fn h_jvp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match &self.fourier {
            None => batch_jvp(|t| self.h.forward(t), x, v),
            Some(f) => {
                let (emb, s) = f.embed_with_slope(&x.detach(), true)?;
                let dir = no_grad(|| v.detach().matmul_t(&f.stacked_projection(), false, true)?.mul(&s.expect("slope requested")))?;
                batch_jvp(|t| self.h.forward(t), &emb, &dir)
            }
        }
    }

    /// Trainable tensors: `h` layers then `g` layers, weight before bias.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.h.parameters();
        p.extend(self.g.parameters());
        p
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Copy of the model with parameters replaced, in [`parameters`](Self::parameters) order.
    pub fn with_parameters(&self, params: Vec<Tensor>) -> Result<Self> {
        let mut out = self.clone();
        let mut it = params.into_iter();
        out.h.replace(&mut it)?;
        out.g.replace(&mut it)?;
        if it.next().is_some() {
            return Err(Error::InvalidArgument("too many parameters".into()));
        }
        Ok(out)
    }

    /// Flat copy of every parameter value, in [`parameters`](Self::parameters) order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters().iter().flat_map(|p| p.to_vec()).collect()
    }

    /// Writes the checkpoint format: 8-byte magic, little-endian `u64` header
    /// length, JSON header, then every parameter (and the Fourier projection,
    /// if any) as little-endian `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let spec = self
            .spec
            .clone()
            .ok_or_else(|| Error::Checkpoint("only spec-initialized models can be saved".into()))?;
        let mut block = self.flat_parameters();
        if let Some(f) = &self.fourier {
            block.extend_from_slice(f.projection().data());
        }
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            h_widths: self.h.widths().to_vec(),
            g_widths: self.g.widths().to_vec(),
            inner_dim: self.inner_dim(),
            seed: spec.seed,
            num_values: block.len(),
            spec,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = std::fs::File::create(path)?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut bytes = Vec::with_capacity(block.len() * 8);
        for v in &block {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        if raw.len() < 16 || &raw[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let hlen = u64::from_le_bytes(raw[8..16].try_into().unwrap()) as usize;
        let body = raw
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.format != CHECKPOINT_FORMAT || header.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let values: Vec<f64> = raw[16 + hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.len() != header.num_values || raw[16 + hlen..].len() % 8 != 0 {
            return Err(Error::Checkpoint(format!(
                "expected {} values, found {}",
                header.num_values,
                values.len()
            )));
        }
        let mut model = Self::init(&header.spec)?;
        let mut offset = 0;
        let params: Vec<Tensor> = model
            .parameters()
            .iter()
            .map(|p| {
                let t = Tensor::param(values[offset..offset + p.numel()].to_vec(), p.shape());
                offset += p.numel();
                t
            })
            .collect();
        model = model.with_parameters(params)?;
        if let Some(f) = &mut model.fourier {
            let n = f.projection().numel();
            let shape = f.projection().shape().to_vec();
            f.b = Tensor::new(values[offset..offset + n].to_vec(), &shape);
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"JNUCCKPT";
const CHECKPOINT_FORMAT: &str = "jacnuc-composite";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    h_widths: Vec<usize>,
    g_widths: Vec<usize>,
    inner_dim: usize,
    seed: u64,
    num_values: usize,
    spec: ModelSpec,
}

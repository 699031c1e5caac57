//! ReLU MLP encoder, two-layer projection head and trainable prototypes.
//!
//! `forward` maps inputs to unit-norm embeddings and records what the
//! analytic `backward` needs. Normalisation belongs to the model: losses
//! receive unit rows and never re-normalise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};
use crate::numerics::{dot, row_normalize_with_norms, Matrix, SeededRng};

/// Layer sizes of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    /// Encoder hidden widths; the last one is the representation size.
    pub hidden: Vec<usize>,
    pub proj_hidden: usize,
    /// Embedding dimension `d`.
    pub embed: usize,
}

impl ModelDims {
    /// `(fan_in, fan_out)` for every affine layer, encoder first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.proj_hidden);
        widths.push(self.embed);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(SscError::Config(
                "encoder needs at least one hidden layer".into(),
            ));
        }
        if self.input == 0 || self.proj_hidden == 0 || self.embed == 0 || self.hidden.contains(&0) {
            return Err(SscError::Config(format!(
                "layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Affine layer `y = x Wᵀ + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_transposed(&self.weight)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// What a parameter tensor is, for optimisers that treat them differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    Bias,
    Prototypes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    /// Exactly two layers: `h -> proj_hidden -> d`.
    pub projection: Vec<Dense>,
    /// `K x d`, unit-norm rows.
    pub prototypes: Matrix,
}

impl ModelParams {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.encoder[0].fan_in(),
            hidden: self.encoder.iter().map(Dense::fan_out).collect(),
            proj_hidden: self.projection[0].fan_out(),
            embed: self.projection[1].fan_out(),
        }
    }

    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(&self.projection)
    }

    /// All tensors in checkpoint order: per layer weight then bias, then prototypes.
    pub fn tensors(&self) -> Vec<(TensorRole, &[f64])> {
        let mut out = Vec::new();
        for layer in self.layers() {
            out.push((TensorRole::Weight, layer.weight.data()));
            out.push((TensorRole::Bias, layer.bias.as_slice()));
        }
        out.push((TensorRole::Prototypes, self.prototypes.data()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorRole, &mut [f64])> {
        let mut out = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.projection.iter_mut()) {
            out.push((TensorRole::Weight, layer.weight.data_mut()));
            out.push((TensorRole::Bias, layer.bias.as_mut_slice()));
        }
        out.push((TensorRole::Prototypes, self.prototypes.data_mut()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Rescales every prototype row back onto the unit sphere.
    pub fn project_prototypes(&mut self) -> Result<()> {
        let (unit, _) = row_normalize_with_norms(&self.prototypes)?;
        self.prototypes = unit;
        Ok(())
    }
}

/// Gradients laid out like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub encoder: Vec<Dense>,
    pub projection: Vec<Dense>,
    pub prototypes: Matrix,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = |l: &Dense| Dense::zeros(l.fan_in(), l.fan_out());
        Self {
            encoder: params.encoder.iter().map(z).collect(),
            projection: params.projection.iter().map(z).collect(),
            prototypes: Matrix::zeros(params.prototypes.rows(), params.prototypes.cols()),
        }
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(&self.projection) {
            out.push(layer.weight.data());
            out.push(layer.bias.as_slice());
        }
        out.push(self.prototypes.data());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    /// Output of every affine layer before its activation.
    pre_activations: Vec<Matrix>,
    /// Output of every layer after its activation; the last one is the
    /// projection output before normalisation.
    activations: Vec<Matrix>,
    embeddings: Matrix,
    norms: Vec<f64>,
}

impl ForwardTrace {
    pub fn projected(&self) -> &Matrix {
        self.activations
            .last()
            .expect("trace has at least one layer")
    }

    pub fn row_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }
}

pub fn init_params(dims: &ModelDims, k: usize, rng: &mut SeededRng) -> Result<ModelParams> {
    dims.validate()?;
    if k < 2 {
        return Err(SscError::Config(format!(
            "need at least two classes, got {k}"
        )));
    }
    let shapes = dims.layer_shapes();
    let mut layers: Vec<Dense> = shapes
        .iter()
        .map(|&(fan_in, fan_out)| Dense {
            weight: Matrix::random_normal(fan_out, fan_in, (2.0 / fan_in as f64).sqrt(), rng),
            bias: vec![0.0; fan_out],
        })
        .collect();
    let projection = layers.split_off(layers.len() - 2);
    let mut prototypes = Matrix::zeros(k, dims.embed);
    for c in 0..k {
        let v = rng.unit_vector(dims.embed);
        prototypes.row_mut(c).copy_from_slice(&v);
    }
    Ok(ModelParams {
        encoder: layers,
        projection,
        prototypes,
    })
}

/// Unit-norm embeddings with a trace for [`backward`].
pub fn forward(params: &ModelParams, x: &Matrix) -> Result<(Matrix, ForwardTrace)> {
    let n_layers = params.encoder.len() + params.projection.len();
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut activations: Vec<Matrix> = Vec::with_capacity(n_layers);
    for (idx, layer) in params.layers().enumerate() {
        let input = activations.last().unwrap_or(x);
        check_width(layer, input)?;
        let pre = layer.apply(input)?;
        let act = if idx + 1 < n_layers {
            relu(&pre)
        } else {
            pre.clone()
        };
        pre_activations.push(pre);
        activations.push(act);
    }
    let (embeddings, norms) = row_normalize_with_norms(activations.last().expect("layers"))?;
    let trace = ForwardTrace {
        input: x.clone(),
        pre_activations,
        activations,
        embeddings: embeddings.clone(),
        norms,
    };
    Ok((embeddings, trace))
}

/// Unit-norm embeddings without recording anything for a backward pass.
pub fn embed(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let n_layers = params.encoder.len() + params.projection.len();
    let mut h = x.clone();
    for (idx, layer) in params.layers().enumerate() {
        check_width(layer, &h)?;
        let pre = layer.apply(&h)?;
        h = if idx + 1 < n_layers { relu(&pre) } else { pre };
    }
    row_normalize_with_norms(&h).map(|(z, _)| z)
}

/// Gradients of a loss w.r.t. every network parameter, given the loss
/// gradient w.r.t. the normalised embeddings. The prototype gradient is left
/// at zero; the caller adds whatever the loss assigns to prototype rows.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_embeddings: &Matrix,
) -> Result<ParamGrads> {
    let n_layers = params.encoder.len() + params.projection.len();
    if trace.activations.len() != n_layers {
        return Err(SscError::TraceMismatch(format!(
            "trace has {} layers, model has {n_layers}",
            trace.activations.len()
        )));
    }
    if grad_embeddings.shape() != trace.embeddings.shape() {
        return Err(SscError::TraceMismatch(format!(
            "gradient shape {:?} vs embeddings {:?}",
            grad_embeddings.shape(),
            trace.embeddings.shape()
        )));
    }
    for (layer, pre) in params.layers().zip(&trace.pre_activations) {
        if pre.cols() != layer.fan_out() {
            return Err(SscError::TraceMismatch(format!(
                "layer output width {} but trace recorded {}",
                layer.fan_out(),
                pre.cols()
            )));
        }
    }

    // z = p/|p|  =>  ∂L/∂p = (g - z (z·g)) / |p|
    let mut grad = grad_embeddings.clone();
    for i in 0..grad.rows() {
        let z = trace.embeddings.row(i);
        let along = dot(z, grad.row(i));
        let inv = 1.0 / trace.norms[i];
        for (g, &zj) in grad.row_mut(i).iter_mut().zip(z) {
            *g = (*g - zj * along) * inv;
        }
    }

    let mut grads = ParamGrads::zeros_like(params);
    let layers: Vec<&Dense> = params.layers().collect();
    for idx in (0..n_layers).rev() {
        if idx + 1 < n_layers {
            let pre = &trace.pre_activations[idx];
            for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let input = if idx == 0 {
            &trace.input
        } else {
            &trace.activations[idx - 1]
        };
        let weight_grad = grad.transpose_matmul(input)?;
        let mut bias_grad = vec![0.0; grad.cols()];
        for row in grad.row_iter() {
            for (b, g) in bias_grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let slot = if idx < params.encoder.len() {
            &mut grads.encoder[idx]
        } else {
            &mut grads.projection[idx - params.encoder.len()]
        };
        slot.weight = weight_grad;
        slot.bias = bias_grad;
        if idx > 0 {
            grad = grad.matmul(&layers[idx].weight)?;
        }
    }
    Ok(grads)
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn check_width(layer: &Dense, input: &Matrix) -> Result<()> {
    if input.cols() != layer.fan_in() {
        return Err(SscError::DimensionMismatch(format!(
            "layer expects {} inputs, got {}",
            layer.fan_in(),
            input.cols()
        )));
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SSCPROTO";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned binary checkpoint.
///
/// Layout, all little-endian: 8 magic bytes `SSCPROTO`, `u32` version, `u32`
/// number of encoder layers, `u64` input width, one `u64` per encoder width,
/// `u64` projection hidden width, `u64` embedding width, `u64` class count,
/// then every tensor as `f64` in [`ModelParams::tensors`] order.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| SscError::io(path, e))
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let mut buf = Vec::with_capacity(64 + 8 * params.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.hidden.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dims.input as u64).to_le_bytes());
    for &h in &dims.hidden {
        buf.extend_from_slice(&(h as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(dims.proj_hidden as u64).to_le_bytes());
    buf.extend_from_slice(&(dims.embed as u64).to_le_bytes());
    buf.extend_from_slice(&(params.k() as u64).to_le_bytes());
    for (_, t) in params.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| SscError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        SscError::Io { source, .. } => SscError::io(path, source),
        other => other,
    })
}

/// Loads a checkpoint and checks it has the expected architecture.
pub fn load_checkpoint_matching(path: &Path, dims: &ModelDims, k: usize) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    let found = params.dims();
    if &found != dims || params.k() != k {
        return Err(SscError::ShapeMismatch(format!(
            "checkpoint has {found:?} with {} classes, expected {dims:?} with {k}",
            params.k()
        )));
    }
    Ok(params)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| SscError::FormatVersionMismatch("truncated header".into()))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self
            .take(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| SscError::FormatVersionMismatch("truncated header".into()))?;
        usize::try_from(v)
            .ok()
            .filter(|&d| d > 0 && d <= 1 << 24)
            .ok_or_else(|| SscError::FormatVersionMismatch(format!("implausible dimension {v}")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    match r.take(8) {
        Some(m) if m == CHECKPOINT_MAGIC => {}
        _ => {
            return Err(SscError::FormatVersionMismatch(
                "missing checkpoint magic bytes".into(),
            ))
        }
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SscError::FormatVersionMismatch(format!(
            "version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let n_hidden = r.u32()? as usize;
    if n_hidden == 0 || n_hidden > 64 {
        return Err(SscError::FormatVersionMismatch(format!(
            "implausible encoder depth {n_hidden}"
        )));
    }
    let input = r.dim()?;
    let hidden = (0..n_hidden).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
    let dims = ModelDims {
        input,
        hidden,
        proj_hidden: r.dim()?,
        embed: r.dim()?,
    };
    let k = r.dim()?;

    let payload: usize = dims
        .layer_shapes()
        .iter()
        .map(|&(i, o)| i * o + o)
        .sum::<usize>()
        + k * dims.embed;
    let remaining = bytes.len() - r.pos;
    if remaining < payload * 8 {
        return Err(SscError::io(
            "<checkpoint>",
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("payload has {remaining} bytes, expected {}", payload * 8),
            ),
        ));
    }
    if remaining > payload * 8 {
        return Err(SscError::FormatVersionMismatch(format!(
            "{} trailing bytes after payload",
            remaining - payload * 8
        )));
    }

    let mut values = bytes[r.pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut read = |len: usize| -> Vec<f64> { values.by_ref().take(len).collect() };
    let mut layers = Vec::new();
    for (fan_in, fan_out) in dims.layer_shapes() {
        let weight = Matrix::new(fan_out, fan_in, read(fan_in * fan_out))?;
        let bias = read(fan_out);
        layers.push(Dense { weight, bias });
    }
    let prototypes = Matrix::new(k, dims.embed, read(k * dims.embed))?;
    let projection = layers.split_off(layers.len() - 2);
    Ok(ModelParams {
        encoder: layers,
        projection,
        prototypes,
    })
}

//! Encoder stack: embeddings, positional encoding, attention layers with
//! residuals, layer norm, feed-forward and dropout, plus full analytic
//! backward.
//!
//! Layer layout (norm after the residual add, vanilla style):
//!
//! ```text
//! a = Attention(h)            (diffused per head when configured)
//! h = LayerNorm(h + Dropout(a))
//! f = W2 relu(W1 h + b1) + b2
//! h = LayerNorm(h + Dropout(f))
//! ```
//!
//! Everything is deterministic given parameters, inputs, mode, and the
//! dropout seed: dropout draws from one dedicated stream per (layer, site)
//! so inserting a layer never shifts another layer's mask.

mod checkpoint;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use vocab::Vocab;

use crate::attention::{
    sparse_attention_backward, sparse_attention_forward, AttentionCache, AttentionParams,
    ModelConfig,
};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::graph::CodeGraph;
use crate::lang::AstKind;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const LAYER_NORM_EPS: Real = 1e-5;

/// Everything needed to build and run one encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub model: ModelConfig,
    pub diffusion: Option<DiffusionConfig>,
    pub use_positional_encoding: bool,
    pub vocab_size: usize,
    pub edge_type_count: usize,
    pub dropout_rate: Real,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.vocab_size == 0 {
            return Err(Error::InvalidParameter(
                "vocab_size must be positive (row 0 is the unknown token)".to_string(),
            ));
        }
        if self.edge_type_count == 0 {
            return Err(Error::InvalidParameter(
                "edge_type_count must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParameter(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Input embeddings: one row per vocabulary entry for tokens, one row per
/// AST node kind for syntax rows.
#[derive(Clone, Debug)]
pub struct NodeEmbeddingTable {
    /// `vocab_size x d_model`; row [`Vocab::UNK_ID`] absorbs unknowns.
    pub token: DenseMatrix,
    /// `AstKind::ALL.len() x d_model`, indexed by `AstKind::index`.
    pub ast_kind: DenseMatrix,
}

/// One layer's parameters. Vector biases are stored as 1-row matrices so
/// the whole model walks as a flat list of named matrices.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub attention: AttentionParams,
    pub ffn_w1: DenseMatrix,
    pub ffn_b1: DenseMatrix,
    pub ffn_w2: DenseMatrix,
    pub ffn_b2: DenseMatrix,
    pub ln1_gain: DenseMatrix,
    pub ln1_bias: DenseMatrix,
    pub ln2_gain: DenseMatrix,
    pub ln2_bias: DenseMatrix,
}

/// Full encoder parameter set. Doubles as the gradient container: a
/// gradient has the same shape as the parameter it belongs to.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embeddings: NodeEmbeddingTable,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Seeded initialization: projections uniform in +-1/sqrt(fan_in),
    /// embedding tables normal(0, 0.02), norm gains 1, all biases 0.
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<EncoderParams> {
        cfg.validate()?;
        let d = cfg.model.d_model;
        let normal = Normal::new(0.0, 0.02).expect("fixed spread is valid");
        let mut table = |rows: usize| {
            let mut m = DenseMatrix::zeros(rows, d);
            for v in m.data_mut() {
                *v = normal.sample(rng);
            }
            m
        };
        let embeddings = NodeEmbeddingTable {
            token: table(cfg.vocab_size),
            ast_kind: table(AstKind::ALL.len()),
        };
        let uniform = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (rows as Real).sqrt();
            let mut m = DenseMatrix::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            m
        };
        let layers = (0..cfg.model.layers)
            .map(|_| LayerParams {
                attention: AttentionParams::init(&cfg.model, cfg.edge_type_count, rng),
                ffn_w1: uniform(d, cfg.model.d_ff, rng),
                ffn_b1: DenseMatrix::zeros(1, cfg.model.d_ff),
                ffn_w2: uniform(cfg.model.d_ff, d, rng),
                ffn_b2: DenseMatrix::zeros(1, d),
                ln1_gain: DenseMatrix::from_fn(1, d, |_, _| 1.0),
                ln1_bias: DenseMatrix::zeros(1, d),
                ln2_gain: DenseMatrix::from_fn(1, d, |_, _| 1.0),
                ln2_bias: DenseMatrix::zeros(1, d),
            })
            .collect();
        Ok(EncoderParams { embeddings, layers })
    }

    /// Zero tensors in the same shapes; the gradient accumulator.
    pub fn zeros(cfg: &EncoderConfig) -> EncoderParams {
        let d = cfg.model.d_model;
        EncoderParams {
            embeddings: NodeEmbeddingTable {
                token: DenseMatrix::zeros(cfg.vocab_size, d),
                ast_kind: DenseMatrix::zeros(AstKind::ALL.len(), d),
            },
            layers: (0..cfg.model.layers)
                .map(|_| LayerParams {
                    attention: AttentionParams::zeros(&cfg.model, cfg.edge_type_count),
                    ffn_w1: DenseMatrix::zeros(d, cfg.model.d_ff),
                    ffn_b1: DenseMatrix::zeros(1, cfg.model.d_ff),
                    ffn_w2: DenseMatrix::zeros(cfg.model.d_ff, d),
                    ffn_b2: DenseMatrix::zeros(1, d),
                    ln1_gain: DenseMatrix::zeros(1, d),
                    ln1_bias: DenseMatrix::zeros(1, d),
                    ln2_gain: DenseMatrix::zeros(1, d),
                    ln2_bias: DenseMatrix::zeros(1, d),
                })
                .collect(),
        }
    }

    /// Visits every tensor with a stable dotted name, embeddings first,
    /// then layers in order. The optimizer, the checkpoint writer and the
    /// gradient checker all walk parameters through this one path.
    pub fn for_each_tensor<'a>(&'a self, f: &mut impl FnMut(String, &'a DenseMatrix)) {
        f("embed.token".to_string(), &self.embeddings.token);
        f("embed.ast_kind".to_string(), &self.embeddings.ast_kind);
        for (i, layer) in self.layers.iter().enumerate() {
            let a = &layer.attention;
            for (head, m) in a.w_q.iter().enumerate() {
                f(format!("layer{i}.attn.w_q.h{head}"), m);
            }
            for (head, m) in a.w_k.iter().enumerate() {
                f(format!("layer{i}.attn.w_k.h{head}"), m);
            }
            for (head, m) in a.w_v.iter().enumerate() {
                f(format!("layer{i}.attn.w_v.h{head}"), m);
            }
            for (head, m) in a.w_e.iter().enumerate() {
                f(format!("layer{i}.attn.w_e.h{head}"), m);
            }
            f(format!("layer{i}.attn.w_o"), &a.w_o);
            f(format!("layer{i}.attn.edge_embed"), &a.edge_embed);
            f(format!("layer{i}.ffn.w1"), &layer.ffn_w1);
            f(format!("layer{i}.ffn.b1"), &layer.ffn_b1);
            f(format!("layer{i}.ffn.w2"), &layer.ffn_w2);
            f(format!("layer{i}.ffn.b2"), &layer.ffn_b2);
            f(format!("layer{i}.ln1.gain"), &layer.ln1_gain);
            f(format!("layer{i}.ln1.bias"), &layer.ln1_bias);
            f(format!("layer{i}.ln2.gain"), &layer.ln2_gain);
            f(format!("layer{i}.ln2.bias"), &layer.ln2_bias);
        }
    }

    /// Mutable twin of [`Self::for_each_tensor`]; same names, same order.
    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(String, &mut DenseMatrix)) {
        f("embed.token".to_string(), &mut self.embeddings.token);
        f("embed.ast_kind".to_string(), &mut self.embeddings.ast_kind);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let a = &mut layer.attention;
            for (head, m) in a.w_q.iter_mut().enumerate() {
                f(format!("layer{i}.attn.w_q.h{head}"), m);
            }
            for (head, m) in a.w_k.iter_mut().enumerate() {
                f(format!("layer{i}.attn.w_k.h{head}"), m);
            }
            for (head, m) in a.w_v.iter_mut().enumerate() {
                f(format!("layer{i}.attn.w_v.h{head}"), m);
            }
            for (head, m) in a.w_e.iter_mut().enumerate() {
                f(format!("layer{i}.attn.w_e.h{head}"), m);
            }
            f(format!("layer{i}.attn.w_o"), &mut a.w_o);
            f(format!("layer{i}.attn.edge_embed"), &mut a.edge_embed);
            f(format!("layer{i}.ffn.w1"), &mut layer.ffn_w1);
            f(format!("layer{i}.ffn.b1"), &mut layer.ffn_b1);
            f(format!("layer{i}.ffn.w2"), &mut layer.ffn_w2);
            f(format!("layer{i}.ffn.b2"), &mut layer.ffn_b2);
            f(format!("layer{i}.ln1.gain"), &mut layer.ln1_gain);
            f(format!("layer{i}.ln1.bias"), &mut layer.ln1_bias);
            f(format!("layer{i}.ln2.gain"), &mut layer.ln2_gain);
            f(format!("layer{i}.ln2.bias"), &mut layer.ln2_bias);
        }
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        cfg.validate()?;
        if self.layers.len() != cfg.model.layers {
            return Err(Error::DimensionMismatch(format!(
                "{} layers in parameters, config says {}",
                self.layers.len(),
                cfg.model.layers
            )));
        }
        if self.embeddings.token.shape() != (cfg.vocab_size, cfg.model.d_model) {
            return Err(Error::DimensionMismatch(format!(
                "token table shape {:?}, expected {:?}",
                self.embeddings.token.shape(),
                (cfg.vocab_size, cfg.model.d_model)
            )));
        }
        if self.embeddings.ast_kind.shape() != (AstKind::ALL.len(), cfg.model.d_model) {
            return Err(Error::DimensionMismatch(format!(
                "ast kind table shape {:?}, expected {:?}",
                self.embeddings.ast_kind.shape(),
                (AstKind::ALL.len(), cfg.model.d_model)
            )));
        }
        if !self.embeddings.token.is_finite() || !self.embeddings.ast_kind.is_finite() {
            return Err(Error::NonFiniteOutput(
                "embedding table holds a non-finite value".to_string(),
            ));
        }
        let d = cfg.model.d_model;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.attention.validate(&cfg.model)?;
            let shapes = [
                ("ffn.w1", &layer.ffn_w1, (d, cfg.model.d_ff)),
                ("ffn.b1", &layer.ffn_b1, (1, cfg.model.d_ff)),
                ("ffn.w2", &layer.ffn_w2, (cfg.model.d_ff, d)),
                ("ffn.b2", &layer.ffn_b2, (1, d)),
                ("ln1.gain", &layer.ln1_gain, (1, d)),
                ("ln1.bias", &layer.ln1_bias, (1, d)),
                ("ln2.gain", &layer.ln2_gain, (1, d)),
                ("ln2.bias", &layer.ln2_bias, (1, d)),
            ];
            for (name, m, shape) in shapes {
                if m.shape() != shape {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {i} {name} shape {:?}, expected {shape:?}",
                        m.shape()
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::NonFiniteOutput(format!(
                        "layer {i} {name} holds a non-finite value"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `sin`/`cos` interleaved positional encoding row for one position.
pub fn sinusoidal_encoding(position: usize, d_model: usize) -> Vec<Real> {
    let mut row = vec![0.0; d_model];
    for i in 0..d_model {
        let pair = (i / 2) as Real;
        let rate = (10000.0 as Real).powf(2.0 * pair / d_model as Real);
        let angle = position as Real / rate;
        row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
    row
}

/// Builds `h0`: token rows get vocabulary embeddings (plus the sinusoidal
/// positional term at their sequence position when enabled), AST rows get
/// kind embeddings and no positional term, since arena order is not a
/// sequence position. Unknown token texts fall back to the reserved row.
pub fn embed(
    graph: &CodeGraph,
    vocabulary: &Vocab,
    table: &NodeEmbeddingTable,
    cfg: &EncoderConfig,
) -> Result<DenseMatrix> {
    let d = cfg.model.d_model;
    if table.token.cols() != d || table.ast_kind.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "embedding widths {} / {} under d_model {d}",
            table.token.cols(),
            table.ast_kind.cols()
        )));
    }
    if vocabulary.size() > table.token.rows() {
        return Err(Error::VocabMismatch(format!(
            "vocabulary needs {} rows, table has {}",
            vocabulary.size(),
            table.token.rows()
        )));
    }
    let mut h0 = DenseMatrix::zeros(graph.node_count(), d);
    for (pos, token) in graph.tokens.iter().enumerate() {
        let id = vocabulary.id(&token.text);
        h0.row_mut(pos).copy_from_slice(table.token.row(id));
        if cfg.use_positional_encoding {
            let pe = sinusoidal_encoding(pos, d);
            for (x, p) in h0.row_mut(pos).iter_mut().zip(pe) {
                *x += p;
            }
        }
    }
    for (i, kind) in graph.ast_kinds.iter().enumerate() {
        h0.row_mut(graph.token_count() + i)
            .copy_from_slice(table.ast_kind.row(kind.index()));
    }
    Ok(h0)
}

/// Scatters `grad_h0` back onto the embedding tables (the positional term
/// is an additive constant and contributes nothing).
pub fn embed_backward(
    grad_h0: &DenseMatrix,
    graph: &CodeGraph,
    vocabulary: &Vocab,
    grad_table: &mut NodeEmbeddingTable,
) -> Result<()> {
    if grad_h0.rows() != graph.node_count() || grad_h0.cols() != grad_table.token.cols() {
        return Err(Error::DimensionMismatch(format!(
            "embedding gradient shape {:?} for a graph with {} nodes",
            grad_h0.shape(),
            graph.node_count()
        )));
    }
    for (pos, token) in graph.tokens.iter().enumerate() {
        let id = vocabulary.id(&token.text);
        let row = grad_table.token.row_mut(id);
        for (x, &g) in row.iter_mut().zip(grad_h0.row(pos)) {
            *x += g;
        }
    }
    for (i, kind) in graph.ast_kinds.iter().enumerate() {
        let row = grad_table.ast_kind.row_mut(kind.index());
        for (x, &g) in row.iter_mut().zip(grad_h0.row(graph.token_count() + i)) {
            *x += g;
        }
    }
    Ok(())
}

/// Row-wise standardization state for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    x_hat: DenseMatrix,
    inv_std: Vec<Real>,
}

/// Standardizes each row to mean 0 and unit variance (population variance,
/// epsilon inside the square root), then applies the affine gain and bias.
pub fn layer_norm_forward(
    x: &DenseMatrix,
    gain: &DenseMatrix,
    bias: &DenseMatrix,
) -> Result<(DenseMatrix, LayerNormCache)> {
    let d = x.cols();
    if gain.shape() != (1, d) || bias.shape() != (1, d) {
        return Err(Error::DimensionMismatch(format!(
            "layer norm gain {:?} / bias {:?} for width {d}",
            gain.shape(),
            bias.shape()
        )));
    }
    let mut x_hat = DenseMatrix::zeros(x.rows(), d);
    let mut out = DenseMatrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<Real>() / d as Real;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        let xh = x_hat.row_mut(i);
        let o = out.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * inv;
            o[j] = gain.get(0, j) * xh[j] + bias.get(0, j);
        }
    }
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

/// Gradients of [`layer_norm_forward`]: returns `(grad_x, grad_gain,
/// grad_bias)`.
pub fn layer_norm_backward(
    grad_out: &DenseMatrix,
    cache: &LayerNormCache,
    gain: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    let (n, d) = cache.x_hat.shape();
    if grad_out.shape() != (n, d) {
        return Err(Error::StaleCache(format!(
            "layer norm gradient shape {:?} does not match cached {:?}",
            grad_out.shape(),
            (n, d)
        )));
    }
    let mut grad_x = DenseMatrix::zeros(n, d);
    let mut grad_gain = DenseMatrix::zeros(1, d);
    let mut grad_bias = DenseMatrix::zeros(1, d);
    for i in 0..n {
        let go = grad_out.row(i);
        let xh = cache.x_hat.row(i);
        for j in 0..d {
            grad_gain.set(0, j, grad_gain.get(0, j) + go[j] * xh[j]);
            grad_bias.set(0, j, grad_bias.get(0, j) + go[j]);
        }
        // d x_hat, then the two projection terms of the standardization.
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            let dxh = go[j] * gain.get(0, j);
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as Real;
        mean_dxh_xh /= d as Real;
        let gx = grad_x.row_mut(i);
        for j in 0..d {
            let dxh = go[j] * gain.get(0, j);
            gx[j] = cache.inv_std[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    Ok((grad_x, grad_gain, grad_bias))
}

/// Inverted-dropout mask: entries are 0 with probability `rate` and
/// `1/(1-rate)` otherwise, so the expected value is the identity and eval
/// mode needs no rescaling.
fn dropout_mask(rows: usize, cols: usize, rate: Real, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    DenseMatrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<Real>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// One dropout stream per (layer, site) derived from the forward seed, so
/// masks are reproducible and independent across sites.
fn dropout_stream(seed: u64, layer: usize, site: u64) -> u64 {
    crate::mix_seed(seed, layer as u64 * 2 + site)
}

#[derive(Clone, Debug)]
struct LayerForwardState {
    attention: AttentionCache,
    attn_mask: Option<DenseMatrix>,
    ln1: LayerNormCache,
    /// Output of the first norm; input to the feed-forward block.
    mid: DenseMatrix,
    /// Pre-activation of the hidden feed-forward layer.
    ffn_pre: DenseMatrix,
    /// Post-ReLU activations.
    ffn_act: DenseMatrix,
    ffn_mask: Option<DenseMatrix>,
    ln2: LayerNormCache,
}

/// Forward state of the full stack. Layer inputs live inside each layer's
/// attention cache; nothing else from the forward pass is retained.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    layers: Vec<LayerForwardState>,
    out_shape: (usize, usize),
}

/// Runs the stack over `h0`. In train mode dropout draws from streams
/// derived from `dropout_seed`; in eval mode the seed is ignored and the
/// pass is deterministic.
pub fn encoder_forward(
    h0: &DenseMatrix,
    mask: &CsrMatrix,
    edge_types: &[Vec<usize>],
    params: &EncoderParams,
    cfg: &EncoderConfig,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(DenseMatrix, EncoderCache)> {
    if h0.cols() != cfg.model.d_model {
        return Err(Error::DimensionMismatch(format!(
            "input width {} under d_model {}",
            h0.cols(),
            cfg.model.d_model
        )));
    }
    let dropping = train_mode && cfg.dropout_rate > 0.0;
    let mut h = h0.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let (a, attention) = sparse_attention_forward(
            &h,
            mask,
            edge_types,
            &layer.attention,
            cfg.diffusion.as_ref(),
        )?;
        let attn_mask = dropping.then(|| {
            dropout_mask(
                a.rows(),
                a.cols(),
                cfg.dropout_rate,
                dropout_stream(dropout_seed, li, 0),
            )
        });
        let mut r1 = h.clone();
        match &attn_mask {
            Some(m) => {
                for ((x, &av), &mv) in r1.data_mut().iter_mut().zip(a.data()).zip(m.data()) {
                    *x += av * mv;
                }
            }
            None => r1.add_assign(&a)?,
        }
        let (mid, ln1) = layer_norm_forward(&r1, &layer.ln1_gain, &layer.ln1_bias)?;

        let mut ffn_pre = mid.matmul(&layer.ffn_w1)?;
        for i in 0..ffn_pre.rows() {
            let row = ffn_pre.row_mut(i);
            for (x, &b) in row.iter_mut().zip(layer.ffn_b1.row(0)) {
                *x += b;
            }
        }
        let ffn_act = ffn_pre.map(|v| v.max(0.0));
        let mut f = ffn_act.matmul(&layer.ffn_w2)?;
        for i in 0..f.rows() {
            let row = f.row_mut(i);
            for (x, &b) in row.iter_mut().zip(layer.ffn_b2.row(0)) {
                *x += b;
            }
        }
        let ffn_mask = dropping.then(|| {
            dropout_mask(
                f.rows(),
                f.cols(),
                cfg.dropout_rate,
                dropout_stream(dropout_seed, li, 1),
            )
        });
        let mut r2 = mid.clone();
        match &ffn_mask {
            Some(m) => {
                for ((x, &fv), &mv) in r2.data_mut().iter_mut().zip(f.data()).zip(m.data()) {
                    *x += fv * mv;
                }
            }
            None => r2.add_assign(&f)?,
        }
        let (next, ln2) = layer_norm_forward(&r2, &layer.ln2_gain, &layer.ln2_bias)?;

        layers.push(LayerForwardState {
            attention,
            attn_mask,
            ln1,
            mid,
            ffn_pre,
            ffn_act,
            ffn_mask,
            ln2,
        });
        h = next;
    }
    let cache = EncoderCache {
        layers,
        out_shape: h.shape(),
    };
    Ok((h, cache))
}

/// Full analytic gradients of [`encoder_forward`] with respect to `h0` and
/// every layer parameter. Embedding gradients are not produced here (the
/// embedding lookup happens before the stack); the returned container
/// leaves them zero for [`embed_backward`] to fill.
pub fn encoder_backward(
    grad_h: &DenseMatrix,
    cache: &EncoderCache,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<(DenseMatrix, EncoderParams)> {
    if grad_h.shape() != cache.out_shape {
        return Err(Error::StaleCache(format!(
            "encoder gradient shape {:?} does not match cached output {:?}",
            grad_h.shape(),
            cache.out_shape
        )));
    }
    if cache.layers.len() != params.layers.len() {
        return Err(Error::StaleCache(format!(
            "cache built over {} layers, parameters hold {}",
            cache.layers.len(),
            params.layers.len()
        )));
    }
    let mut grads = EncoderParams::zeros(cfg);
    let mut g = grad_h.clone();
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let state = &cache.layers[li];
        let glayer = &mut grads.layers[li];

        let (dr2, dgain2, dbias2) = layer_norm_backward(&g, &state.ln2, &layer.ln2_gain)?;
        glayer.ln2_gain = dgain2;
        glayer.ln2_bias = dbias2;

        // r2 = mid + dropout(f)
        let mut df = dr2.clone();
        if let Some(m) = &state.ffn_mask {
            for (x, &mv) in df.data_mut().iter_mut().zip(m.data()) {
                *x *= mv;
            }
        }
        glayer.ffn_b2 = column_sums(&df);
        glayer.ffn_w2 = state.ffn_act.transpose().matmul(&df)?;
        let mut dpre = df.matmul(&layer.ffn_w2.transpose())?;
        for (x, &pre) in dpre.data_mut().iter_mut().zip(state.ffn_pre.data()) {
            if pre <= 0.0 {
                *x = 0.0;
            }
        }
        glayer.ffn_b1 = column_sums(&dpre);
        glayer.ffn_w1 = state.mid.transpose().matmul(&dpre)?;
        let mut dmid = dpre.matmul(&layer.ffn_w1.transpose())?;
        dmid.add_assign(&dr2)?;

        let (dr1, dgain1, dbias1) = layer_norm_backward(&dmid, &state.ln1, &layer.ln1_gain)?;
        glayer.ln1_gain = dgain1;
        glayer.ln1_bias = dbias1;

        // r1 = h_in + dropout(a)
        let mut da = dr1.clone();
        if let Some(m) = &state.attn_mask {
            for (x, &mv) in da.data_mut().iter_mut().zip(m.data()) {
                *x *= mv;
            }
        }
        let (dh_attn, dattn) = sparse_attention_backward(&da, &state.attention, &layer.attention)?;
        glayer.attention = dattn;
        g = dr1;
        g.add_assign(&dh_attn)?;
    }
    Ok((g, grads))
}

fn column_sums(m: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        let acc = out.row_mut(0);
        for (x, &v) in acc.iter_mut().zip(row) {
            *x += v;
        }
    }
    out
}

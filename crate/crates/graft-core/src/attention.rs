//! Multi-head sparse self-attention with edge-type query bias.
//!
//! Scores are computed only at the structural entries of a mask:
//!
//! ```text
//! logit(i, j) = ((Q_i + W_E * sum_k e_k(i,j)) . K_j) / sqrt(d_k)
//! ```
//!
//! followed by a masked row softmax, so cost and memory follow the mask's
//! nonzero count instead of the full pair matrix. The bias term shifts the
//! query by a projection of the edge-type embeddings on the pair, making
//! the score relation-aware. When a diffusion config is supplied, each
//! head's aggregated values are additionally propagated through the
//! attention matrix by the restart recurrence before the output
//! projection, extending a layer's reach by the hop count.
//!
//! [`dense_attention_forward`] is an intentionally independent reference:
//! it materializes every head's full logit and probability matrix, fills
//! non-edges with negative infinity, and uses the dense power-series
//! oracle for diffusion. The two paths agreeing is the module's central
//! correctness argument, and the dense path doubles as the quadratic
//! baseline for scaling measurements.

use crate::diffusion::{
    diffuse_backward, diffuse_oracle, diffuse_with_cache, DiffusionCache, DiffusionConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{masked_outer, CsrMatrix, DenseMatrix, SparsityPattern};
use crate::Real;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Encoder stack dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            heads: 8,
            d_model: 512,
            d_k: 64,
            d_v: 64,
            d_ff: 2048,
        }
    }
}

impl ModelConfig {
    /// Every dimension must be positive. `layers` alone may be zero: a
    /// 0-layer stack is a valid degenerate encoder (the identity map),
    /// which keeps receptive-field reasoning uniform.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!(
                    "model config field {name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// One attention layer's parameters. The edge-embedding dimension equals
/// `d_k` (the bias lands directly in query space), so `w_e` is square.
/// The same struct doubles as the gradient container: every field of a
/// gradient has the shape of the parameter it belongs to.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    /// Per head, `d_model x d_k`.
    pub w_q: Vec<DenseMatrix>,
    /// Per head, `d_model x d_k`.
    pub w_k: Vec<DenseMatrix>,
    /// Per head, `d_model x d_v`.
    pub w_v: Vec<DenseMatrix>,
    /// Per head, `d_e x d_k` edge-bias projection.
    pub w_e: Vec<DenseMatrix>,
    /// Shared output projection, `heads * d_v x d_model`.
    pub w_o: DenseMatrix,
    /// Shared edge-type embedding table, `edge_type_count x d_e`.
    pub edge_embed: DenseMatrix,
}

impl AttentionParams {
    /// Projection weights uniform in +-1/sqrt(fan_in); embedding rows from
    /// a narrow normal, matching common table initializations.
    pub fn init(cfg: &ModelConfig, edge_type_count: usize, rng: &mut impl Rng) -> Self {
        let d_e = cfg.d_k;
        let uniform = |rows: usize, cols: usize, rng: &mut dyn FnMut() -> Real| {
            let bound = 1.0 / (rows as Real).sqrt();
            let mut m = DenseMatrix::zeros(rows, cols);
            for v in m.data_mut() {
                *v = (rng() * 2.0 - 1.0) * bound;
            }
            m
        };
        let mut draw = || rng.gen::<Real>();
        let mut per_head = |rows, cols| {
            (0..cfg.heads)
                .map(|_| uniform(rows, cols, &mut draw))
                .collect::<Vec<_>>()
        };
        let w_q = per_head(cfg.d_model, cfg.d_k);
        let w_k = per_head(cfg.d_model, cfg.d_k);
        let w_v = per_head(cfg.d_model, cfg.d_v);
        let w_e = per_head(d_e, cfg.d_k);
        let w_o = uniform(cfg.heads * cfg.d_v, cfg.d_model, &mut draw);
        let normal = Normal::new(0.0, 0.02).expect("fixed spread is valid");
        let mut edge_embed = DenseMatrix::zeros(edge_type_count, d_e);
        for v in edge_embed.data_mut() {
            *v = normal.sample(rng);
        }
        AttentionParams {
            w_q,
            w_k,
            w_v,
            w_e,
            w_o,
            edge_embed,
        }
    }

    pub fn zeros(cfg: &ModelConfig, edge_type_count: usize) -> Self {
        let per_head = |rows, cols| {
            (0..cfg.heads)
                .map(|_| DenseMatrix::zeros(rows, cols))
                .collect::<Vec<_>>()
        };
        AttentionParams {
            w_q: per_head(cfg.d_model, cfg.d_k),
            w_k: per_head(cfg.d_model, cfg.d_k),
            w_v: per_head(cfg.d_model, cfg.d_v),
            w_e: per_head(cfg.d_k, cfg.d_k),
            w_o: DenseMatrix::zeros(cfg.heads * cfg.d_v, cfg.d_model),
            edge_embed: DenseMatrix::zeros(edge_type_count, cfg.d_k),
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let groups: [(&str, &[DenseMatrix], (usize, usize)); 4] = [
            ("w_q", &self.w_q, (cfg.d_model, cfg.d_k)),
            ("w_k", &self.w_k, (cfg.d_model, cfg.d_k)),
            ("w_v", &self.w_v, (cfg.d_model, cfg.d_v)),
            ("w_e", &self.w_e, (cfg.d_k, cfg.d_k)),
        ];
        for (name, mats, shape) in groups {
            if mats.len() != cfg.heads {
                return Err(Error::DimensionMismatch(format!(
                    "{name} holds {} heads, config says {}",
                    mats.len(),
                    cfg.heads
                )));
            }
            for m in mats {
                if m.shape() != shape {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} shape {:?}, expected {:?}",
                        m.shape(),
                        shape
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::NonFiniteOutput(format!("{name} holds a non-finite value")));
                }
            }
        }
        if self.w_o.shape() != (cfg.heads * cfg.d_v, cfg.d_model) {
            return Err(Error::DimensionMismatch(format!(
                "w_o shape {:?}, expected {:?}",
                self.w_o.shape(),
                (cfg.heads * cfg.d_v, cfg.d_model)
            )));
        }
        if self.edge_embed.cols() != cfg.d_k {
            return Err(Error::DimensionMismatch(format!(
                "edge embedding width {} does not match d_k {}",
                self.edge_embed.cols(),
                cfg.d_k
            )));
        }
        if !self.w_o.is_finite() || !self.edge_embed.is_finite() {
            return Err(Error::NonFiniteOutput(
                "attention parameter holds a non-finite value".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-head forward state kept for the backward pass.
#[derive(Clone, Debug)]
struct HeadCache {
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    a: CsrMatrix,
    diffusion: Option<DiffusionCache>,
}

/// Forward state of one attention layer: layer input, per-slot summed
/// edge embeddings, per-head projections and attention, and the
/// pre-output-projection concatenation.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    h: DenseMatrix,
    edge_types: Vec<Vec<usize>>,
    u: DenseMatrix,
    heads: Vec<HeadCache>,
    concat: DenseMatrix,
}

impl AttentionCache {
    /// Attention matrix of one head (row-stochastic over the mask).
    pub fn head_attention(&self, head: usize) -> &CsrMatrix {
        &self.heads[head].a
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }
}

/// Sums the edge-type embedding rows of each slot's multiset.
fn sum_edge_embeddings(
    edge_types: &[Vec<usize>],
    edge_embed: &DenseMatrix,
) -> Result<DenseMatrix> {
    let mut u = DenseMatrix::zeros(edge_types.len(), edge_embed.cols());
    for (slot, types) in edge_types.iter().enumerate() {
        for &t in types {
            if t >= edge_embed.rows() {
                return Err(Error::IndexOutOfRange(format!(
                    "edge type {t} outside the {}-row embedding table",
                    edge_embed.rows()
                )));
            }
            let row = u.row_mut(slot);
            for (x, &e) in row.iter_mut().zip(edge_embed.row(t)) {
                *x += e;
            }
        }
    }
    Ok(u)
}

fn check_forward_shapes(
    h: &DenseMatrix,
    mask_rows: usize,
    mask_cols: usize,
    nnz: usize,
    edge_types: &[Vec<usize>],
    params: &AttentionParams,
) -> Result<()> {
    if mask_rows != mask_cols {
        return Err(Error::DimensionMismatch(format!(
            "attention mask must be square, got {mask_rows} x {mask_cols}"
        )));
    }
    if h.rows() != mask_rows {
        return Err(Error::DimensionMismatch(format!(
            "{} input rows under a {mask_rows}-node mask",
            h.rows()
        )));
    }
    if edge_types.len() != nnz {
        return Err(Error::DimensionMismatch(format!(
            "{} edge-type slots for a mask with {nnz} entries",
            edge_types.len()
        )));
    }
    if params.w_q.is_empty() || h.cols() != params.w_q[0].rows() {
        return Err(Error::DimensionMismatch(format!(
            "input width {} does not match query projection input {}",
            h.cols(),
            params.w_q.first().map_or(0, |m| m.rows())
        )));
    }
    Ok(())
}

/// Per-slot logits `((Q_i + B_slot) . K_j) / sqrt(d_k)` over the mask
/// pattern. `b` has one row per slot.
fn masked_logits(
    pattern: &SparsityPattern,
    q: &DenseMatrix,
    k: &DenseMatrix,
    b: &DenseMatrix,
) -> Vec<Real> {
    let scale = 1.0 / (q.cols() as Real).sqrt();
    let mut vals = vec![0.0; pattern.nnz()];
    for i in 0..pattern.rows() {
        let qi = q.row(i);
        for slot in pattern.row_range(i) {
            let j = pattern.col_indices()[slot];
            let kj = k.row(j);
            let mut dot = 0.0;
            for ((&qv, &bv), &kv) in qi.iter().zip(b.row(slot)).zip(kj) {
                dot += (qv + bv) * kv;
            }
            vals[slot] = dot * scale;
        }
    }
    vals
}

/// One multi-head attention layer over the structural entries of `mask`.
///
/// `edge_types` carries one multiset of edge-type ids per mask slot (CSR
/// order); multiple relations on a pair are summed in embedding space.
/// With `diffusion` set, each head's output is propagated through its own
/// attention matrix before the shared output projection, so the layer
/// reaches `k + 1` hops. Never materializes a full pair matrix.
pub fn sparse_attention_forward(
    h: &DenseMatrix,
    mask: &CsrMatrix,
    edge_types: &[Vec<usize>],
    params: &AttentionParams,
    diffusion: Option<&DiffusionConfig>,
) -> Result<(DenseMatrix, AttentionCache)> {
    check_forward_shapes(h, mask.rows(), mask.cols(), mask.nnz(), edge_types, params)?;
    let n = h.rows();
    let head_count = params.w_q.len();
    let d_v = params.w_v[0].cols();
    let u = sum_edge_embeddings(edge_types, &params.edge_embed)?;

    let mut heads = Vec::with_capacity(head_count);
    let mut concat = DenseMatrix::zeros(n, head_count * d_v);
    for head in 0..head_count {
        let q = h.matmul(&params.w_q[head])?;
        let k = h.matmul(&params.w_k[head])?;
        let v = h.matmul(&params.w_v[head])?;
        let b = u.matmul(&params.w_e[head])?;
        let logits =
            CsrMatrix::from_pattern(mask.pattern().clone(), masked_logits(mask.pattern(), &q, &k, &b))?;
        let a = logits.masked_row_softmax()?;
        let aggregated = a.spmm(&v)?;
        let (diffused, diffusion_cache) = match diffusion {
            Some(cfg) => {
                let cache = diffuse_with_cache(&a, &aggregated, cfg)?;
                (cache.output().clone(), Some(cache))
            }
            None => (aggregated, None),
        };
        for i in 0..n {
            concat.row_mut(i)[head * d_v..(head + 1) * d_v].copy_from_slice(diffused.row(i));
        }
        heads.push(HeadCache {
            q,
            k,
            v,
            a,
            diffusion: diffusion_cache,
        });
    }
    let out = concat.matmul(&params.w_o)?;
    Ok((
        out,
        AttentionCache {
            h: h.clone(),
            edge_types: edge_types.to_vec(),
            u,
            heads,
            concat,
        },
    ))
}

/// Analytic gradients of [`sparse_attention_forward`] with respect to the
/// layer input and every parameter (edge-type embeddings included).
///
/// Returns `(grad_h, grad_params)`; the gradient container reuses
/// [`AttentionParams`] shapes. Accumulation is slot-ordered (CSR row-major)
/// everywhere, so results are deterministic.
pub fn sparse_attention_backward(
    grad_out: &DenseMatrix,
    cache: &AttentionCache,
    params: &AttentionParams,
) -> Result<(DenseMatrix, AttentionParams)> {
    let n = cache.h.rows();
    let head_count = cache.heads.len();
    if head_count != params.w_q.len() {
        return Err(Error::StaleCache(format!(
            "cache built with {head_count} heads, params hold {}",
            params.w_q.len()
        )));
    }
    if grad_out.shape() != (n, params.w_o.cols()) {
        return Err(Error::StaleCache(format!(
            "output gradient shape {:?} does not match cached forward output {:?}",
            grad_out.shape(),
            (n, params.w_o.cols())
        )));
    }
    let d_v = params.w_v[0].cols();
    let mut grads = AttentionParams::zeros(
        &ModelConfig {
            layers: 1,
            heads: head_count,
            d_model: cache.h.cols(),
            d_k: params.w_q[0].cols(),
            d_v,
            d_ff: 1,
        },
        params.edge_embed.rows(),
    );
    grads.w_o = cache.concat.transpose().matmul(grad_out)?;
    let d_concat = grad_out.matmul(&params.w_o.transpose())?;

    let mut grad_h = DenseMatrix::zeros(n, cache.h.cols());
    let mut d_u_total = DenseMatrix::zeros(cache.u.rows(), cache.u.cols());
    for head in 0..head_count {
        let hc = &cache.heads[head];
        let pattern = hc.a.pattern();
        let scale = 1.0 / (hc.q.cols() as Real).sqrt();

        let mut d_diffused = DenseMatrix::zeros(n, d_v);
        for i in 0..n {
            d_diffused
                .row_mut(i)
                .copy_from_slice(&d_concat.row(i)[head * d_v..(head + 1) * d_v]);
        }
        // Split the chain at the value aggregation: diffusion first (when
        // present), then the A * V hop itself.
        let (mut d_a, d_aggregated) = match &hc.diffusion {
            Some(dcache) => diffuse_backward(&d_diffused, dcache)?,
            None => (
                CsrMatrix::from_pattern(pattern.clone(), vec![0.0; pattern.nnz()])?,
                d_diffused,
            ),
        };
        let hop = masked_outer(pattern, &d_aggregated, &hc.v)?;
        for (dst, &src) in d_a.values_mut().iter_mut().zip(hop.values()) {
            *dst += src;
        }
        let d_v_proj = hc.a.spmm_t(&d_aggregated)?;

        // Softmax backward per row, then undo the logit scaling.
        let a_vals = hc.a.values();
        let g_vals = d_a.values();
        let mut d_logit = vec![0.0; pattern.nnz()];
        for i in 0..n {
            let range = pattern.row_range(i);
            let mut dot = 0.0;
            for slot in range.clone() {
                dot += a_vals[slot] * g_vals[slot];
            }
            for slot in range {
                d_logit[slot] = a_vals[slot] * (g_vals[slot] - dot) * scale;
            }
        }

        let b = cache.u.matmul(&params.w_e[head])?;
        let d_k_dim = hc.q.cols();
        let mut d_q = DenseMatrix::zeros(n, d_k_dim);
        let mut d_k = DenseMatrix::zeros(n, d_k_dim);
        let mut d_b = DenseMatrix::zeros(pattern.nnz(), d_k_dim);
        for i in 0..n {
            for slot in pattern.row_range(i) {
                let j = pattern.col_indices()[slot];
                let t = d_logit[slot];
                let (qi, kj, bs) = (hc.q.row(i), hc.k.row(j), b.row(slot));
                let dq = d_q.row_mut(i);
                for (x, &kv) in dq.iter_mut().zip(kj) {
                    *x += t * kv;
                }
                let db = d_b.row_mut(slot);
                for (x, &kv) in db.iter_mut().zip(kj) {
                    *x = t * kv;
                }
                let dk = d_k.row_mut(j);
                for ((x, &qv), &bv) in dk.iter_mut().zip(qi).zip(bs) {
                    *x += t * (qv + bv);
                }
            }
        }

        grads.w_e[head] = cache.u.transpose().matmul(&d_b)?;
        d_u_total.add_assign(&d_b.matmul(&params.w_e[head].transpose())?)?;
        grads.w_q[head] = cache.h.transpose().matmul(&d_q)?;
        grads.w_k[head] = cache.h.transpose().matmul(&d_k)?;
        grads.w_v[head] = cache.h.transpose().matmul(&d_v_proj)?;
        grad_h.add_assign(&d_q.matmul(&params.w_q[head].transpose())?)?;
        grad_h.add_assign(&d_k.matmul(&params.w_k[head].transpose())?)?;
        grad_h.add_assign(&d_v_proj.matmul(&params.w_v[head].transpose())?)?;
    }
    for (slot, types) in cache.edge_types.iter().enumerate() {
        for &t in types {
            let row = grads.edge_embed.row_mut(t);
            for (x, &g) in row.iter_mut().zip(d_u_total.row(slot)) {
                *x += g;
            }
        }
    }
    Ok((grad_h, grads))
}

/// Quadratic reference implementation.
///
/// Builds every head's full logit matrix, writes negative infinity into
/// non-edges, softmaxes densely, and applies the power-series diffusion
/// oracle. All per-head logit and probability matrices are alive at once:
/// the O(heads * N^2) footprint is the point of the baseline. `edge_bias`
/// supplies the same per-slot type multisets the sparse path uses; without
/// it this is vanilla masked attention.
pub fn dense_attention_forward(
    h: &DenseMatrix,
    dense_mask: &DenseMatrix,
    edge_bias: Option<(&SparsityPattern, &[Vec<usize>])>,
    params: &AttentionParams,
    diffusion: Option<&DiffusionConfig>,
) -> Result<DenseMatrix> {
    let n = dense_mask.rows();
    check_forward_shapes(
        h,
        n,
        dense_mask.cols(),
        edge_bias.map_or(0, |(_, types)| types.len()),
        edge_bias.map_or(&[][..], |(_, types)| types),
        params,
    )?;
    for i in 0..n {
        let row = dense_mask.row(i);
        if row.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dense mask row {i} holds a value other than 0 or 1"
            )));
        }
        if row.iter().all(|&m| m == 0.0) {
            return Err(Error::EmptyRow(i));
        }
    }
    if let Some((pattern, _)) = edge_bias {
        if pattern.rows() != n || pattern.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "edge bias pattern {} x {} under a {n}-node mask",
                pattern.rows(),
                pattern.cols()
            )));
        }
    }

    let head_count = params.w_q.len();
    let d_v = params.w_v[0].cols();
    let mut values = Vec::with_capacity(head_count);
    let mut logits_all = Vec::with_capacity(head_count);
    for head in 0..head_count {
        let q = h.matmul(&params.w_q[head])?;
        let k = h.matmul(&params.w_k[head])?;
        values.push(h.matmul(&params.w_v[head])?);
        let scale = 1.0 / (q.cols() as Real).sqrt();
        let mut logits = q.matmul(&k.transpose())?.scale(scale);
        if let Some((pattern, types)) = edge_bias {
            let u = sum_edge_embeddings(types, &params.edge_embed)?;
            let b = u.matmul(&params.w_e[head])?;
            for i in 0..n {
                for slot in pattern.row_range(i) {
                    let j = pattern.col_indices()[slot];
                    let mut dot = 0.0;
                    for (&bv, &kv) in b.row(slot).iter().zip(k.row(j)) {
                        dot += bv * kv;
                    }
                    logits.set(i, j, logits.get(i, j) + dot * scale);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if dense_mask.get(i, j) == 0.0 {
                    logits.set(i, j, Real::NEG_INFINITY);
                }
            }
        }
        logits_all.push(logits);
    }
    let probs_all: Vec<DenseMatrix> = logits_all.iter().map(|l| l.row_softmax()).collect();

    let mut concat = DenseMatrix::zeros(n, head_count * d_v);
    for head in 0..head_count {
        let aggregated = probs_all[head].matmul(&values[head])?;
        let diffused = match diffusion {
            Some(cfg) => diffuse_oracle(&probs_all[head], &aggregated, cfg)?,
            None => aggregated,
        };
        for i in 0..n {
            concat.row_mut(i)[head * d_v..(head + 1) * d_v].copy_from_slice(diffused.row(i));
        }
    }
    drop(logits_all);
    drop(probs_all);
    concat.matmul(&params.w_o)
}

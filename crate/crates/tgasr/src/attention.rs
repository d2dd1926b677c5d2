//! Multi-head scaled dot-product attention.
//!
//! One implementation serves encoder self-attention, causal decoder
//! self-attention, decoder audio cross-attention, and the per-language
//! fusion branches. Attention weights are exposed read-only per head for
//! downstream heatmap analysis.

use crate::error::{Result, TgError};
use crate::rng::SeedRng;
use crate::tensor::{FwdCtx, NodeId, ParamSet, Tensor};

/// Weight init scale used across the model.
pub const INIT_STD: f64 = 0.02;

/// Additive mask value; large enough that exp() underflows to exactly zero
/// after max-subtraction, so masked weights are exactly 0 and the weight-sum
/// invariant holds to tolerance.
pub const MASK_NEG: f64 = -1e9;

/// Describes (and names) the projection parameters of one attention module:
/// per-head W_Q/W_K/W_V of shape d×d_k plus an output projection h·d_k×d.
/// The tensors themselves live in a [`ParamSet`] under `{prefix}.h{i}.wq`
/// etc., so freezing and checkpointing stay name-based.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub prefix: String,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
}

impl AttentionParams {
    pub fn new(prefix: impl Into<String>, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(TgError::Invalid(format!(
                "attention: width {d_model} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            heads,
            d_model,
            d_k: d_model / heads,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(3 * self.heads + 1);
        for h in 0..self.heads {
            for w in ["wq", "wk", "wv"] {
                names.push(format!("{}.h{h}.{w}", self.prefix));
            }
        }
        names.push(format!("{}.wo", self.prefix));
        names
    }

    pub fn init_into(&self, params: &mut ParamSet, rng: &SeedRng) {
        for h in 0..self.heads {
            for w in ["wq", "wk", "wv"] {
                let name = format!("{}.h{h}.{w}", self.prefix);
                let mut r = rng.split(&name);
                params.insert(
                    name,
                    Tensor::randn(vec![self.d_model, self.d_k], INIT_STD, &mut r),
                );
            }
        }
        let name = format!("{}.wo", self.prefix);
        let mut r = rng.split(&name);
        params.insert(
            name,
            Tensor::randn(vec![self.heads * self.d_k, self.d_model], INIT_STD, &mut r),
        );
    }
}

/// Boolean attend-allowed matrix, T_q × T_k. Guaranteed at construction to
/// leave at least one key available to every query.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    t_q: usize,
    t_k: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn new(t_q: usize, t_k: usize, allow: Vec<bool>) -> Result<Self> {
        if t_q == 0 || t_k == 0 || allow.len() != t_q * t_k {
            return Err(TgError::Dim(format!(
                "mask: {t_q}x{t_k} vs {} entries",
                allow.len()
            )));
        }
        for q in 0..t_q {
            if !allow[q * t_k..(q + 1) * t_k].iter().any(|&a| a) {
                return Err(TgError::Invalid(format!(
                    "mask: query row {q} has no allowed key"
                )));
            }
        }
        Ok(Self { t_q, t_k, allow })
    }

    pub fn t_q(&self) -> usize {
        self.t_q
    }
    pub fn t_k(&self) -> usize {
        self.t_k
    }
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.t_k + k]
    }

    /// Additive logit form: 0 where allowed, [`MASK_NEG`] where not.
    fn additive(&self) -> Tensor {
        let data = self
            .allow
            .iter()
            .map(|&a| if a { 0.0 } else { MASK_NEG })
            .collect();
        Tensor::new(vec![self.t_q, self.t_k], data).expect("mask tensor is finite")
    }
}

/// Lower-triangular causal mask: position i may attend j ≤ i.
pub fn causal_mask(t: usize) -> Result<AttentionMask> {
    if t == 0 {
        return Err(TgError::Invalid("causal_mask: length 0".into()));
    }
    let mut allow = vec![false; t * t];
    for i in 0..t {
        for j in 0..=i {
            allow[i * t + j] = true;
        }
    }
    AttentionMask::new(t, t, allow)
}

/// Per-head attention weights captured from a forward pass, shape
/// [heads, T_q, T_k]. Read-only analysis data, detached from the graph.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub per_head: Tensor,
}

impl AttentionWeights {
    pub fn heads(&self) -> usize {
        self.per_head.shape()[0]
    }

    /// Head-averaged weight matrix [T_q × T_k].
    pub fn head_mean(&self) -> Tensor {
        let s = self.per_head.shape();
        let (h, t_q, t_k) = (s[0], s[1], s[2]);
        let src = self.per_head.data();
        let mut data = vec![0.0; t_q * t_k];
        for head in 0..h {
            for i in 0..t_q * t_k {
                data[i] += src[head * t_q * t_k + i] / h as f64;
            }
        }
        Tensor::new(vec![t_q, t_k], data).expect("head_mean of finite weights")
    }
}

/// softmax(Q Kᵀ / √d_k) V per head, concatenated and projected.
///
/// Masked logits receive [`MASK_NEG`] before the softmax. Returns the output
/// [T_q × d] and the raw per-head weights.
pub fn multi_head_attention(
    ctx: &mut FwdCtx,
    q_in: NodeId,
    k_in: NodeId,
    v_in: NodeId,
    params: &AttentionParams,
    mask: Option<&AttentionMask>,
) -> Result<(NodeId, AttentionWeights)> {
    let d = params.d_model;
    for (role, node) in [("query", q_in), ("key", k_in), ("value", v_in)] {
        let s = ctx.tape.shape(node);
        if s.len() != 2 || s[1] != d {
            return Err(TgError::Dim(format!(
                "attention {role} input {s:?} does not match width {d}"
            )));
        }
    }
    let t_q = ctx.tape.shape(q_in)[0];
    let t_k = ctx.tape.shape(k_in)[0];
    if ctx.tape.shape(v_in)[0] != t_k {
        return Err(TgError::Dim(format!(
            "attention: {t_k} keys vs {} values",
            ctx.tape.shape(v_in)[0]
        )));
    }
    if let Some(m) = mask {
        if m.t_q() != t_q || m.t_k() != t_k {
            return Err(TgError::Dim(format!(
                "attention mask {}x{} vs scores {t_q}x{t_k}",
                m.t_q(),
                m.t_k()
            )));
        }
    }

    let mask_node = mask.map(|m| ctx.constant(m.additive()));
    let scale = 1.0 / (params.d_k as f64).sqrt();

    let mut head_outs = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads * t_q * t_k);
    for h in 0..params.heads {
        let wq = ctx.param(&format!("{}.h{h}.wq", params.prefix))?;
        let wk = ctx.param(&format!("{}.h{h}.wk", params.prefix))?;
        let wv = ctx.param(&format!("{}.h{h}.wv", params.prefix))?;
        let q = ctx.tape.matmul(q_in, wq)?;
        let k = ctx.tape.matmul(k_in, wk)?;
        let v = ctx.tape.matmul(v_in, wv)?;
        let kt = ctx.tape.transpose(k)?;
        let scores = ctx.tape.matmul(q, kt)?;
        let mut scores = ctx.tape.scale(scores, scale);
        if let Some(m) = mask_node {
            scores = ctx.tape.add(scores, m)?;
        }
        let w = ctx.tape.softmax(scores, 1)?;
        weights.extend_from_slice(ctx.tape.value(w).data());
        head_outs.push(ctx.tape.matmul(w, v)?);
    }

    let cat = ctx.tape.concat_cols(&head_outs)?;
    let wo = ctx.param(&format!("{}.wo", params.prefix))?;
    let out = ctx.tape.matmul(cat, wo)?;

    let per_head = Tensor::new(vec![params.heads, t_q, t_k], weights)?;
    Ok((out, AttentionWeights { per_head }))
}

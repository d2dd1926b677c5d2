//! Audio feature encoder: convolutional front-end followed by pre-norm
//! self-attention blocks and a final layer norm.

use crate::attention::{multi_head_attention, AttentionParams};
use crate::error::{Result, TgError};
use crate::tensor::{FwdCtx, NodeId, Tensor};

use super::{feed_forward, ModelConfig};

const LN_EPS: f64 = 1e-5;

/// Encode a feature matrix [T_s × F] into contextual embeddings [T_s × d].
/// Deterministic given parameters and input.
pub fn encode_audio(ctx: &mut FwdCtx, cfg: &ModelConfig, audio: &Tensor) -> Result<NodeId> {
    let s = audio.shape();
    if s.len() != 2 || s[1] != cfg.feature_bins {
        return Err(TgError::Dim(format!(
            "encode_audio: input {s:?} vs expected [T_s x {}]",
            cfg.feature_bins
        )));
    }
    let t_s = s[0];
    if t_s > cfg.max_t_s {
        return Err(TgError::Invalid(format!(
            "encode_audio: {t_s} frames exceed cap {}",
            cfg.max_t_s
        )));
    }

    let x_in = ctx.constant(audio.clone());
    let conv_w = ctx.param("enc.conv.w")?;
    let conv_b = ctx.param("enc.conv.b")?;
    let mut x = ctx.tape.conv1d(x_in, conv_w, conv_b, 3)?;
    x = ctx.tape.gelu(x);

    let pos_table = ctx.param("enc.pos")?;
    let idx: Vec<usize> = (0..t_s).collect();
    let pos = ctx.tape.gather_rows(pos_table, &idx)?;
    x = ctx.tape.add(x, pos)?;

    for b in 0..cfg.n_enc {
        x = encoder_block(ctx, cfg, b, x)?;
    }

    let g = ctx.param("enc.ln_post.g")?;
    let bb = ctx.param("enc.ln_post.b")?;
    ctx.tape.layer_norm(x, g, bb, LN_EPS)
}

fn encoder_block(ctx: &mut FwdCtx, cfg: &ModelConfig, b: usize, x: NodeId) -> Result<NodeId> {
    let ap = AttentionParams::new(format!("enc.b{b}.attn"), cfg.d, cfg.heads)?;

    let g1 = ctx.param(&format!("enc.b{b}.ln1.g"))?;
    let b1 = ctx.param(&format!("enc.b{b}.ln1.b"))?;
    let a_in = ctx.tape.layer_norm(x, g1, b1, LN_EPS)?;
    let (attn, _) = multi_head_attention(ctx, a_in, a_in, a_in, &ap, None)?;
    let x = ctx.tape.add(x, attn)?;

    let g2 = ctx.param(&format!("enc.b{b}.ln2.g"))?;
    let b2 = ctx.param(&format!("enc.b{b}.ln2.b"))?;
    let m_in = ctx.tape.layer_norm(x, g2, b2, LN_EPS)?;
    let m = feed_forward(ctx, &format!("enc.b{b}.ffn"), m_in)?;
    ctx.tape.add(x, m)
}

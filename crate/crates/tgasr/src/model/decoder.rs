//! Decoder blocks and the end-to-end forward pass.
//!
//! Teacher tokens are shifted right behind a BOS token; every decoder block
//! runs (optionally) fusion, then causal self-attention, audio
//! cross-attention, and a feedforward, all pre-norm residual. Logits come
//! from a final norm and output projection.

use crate::attention::{causal_mask, multi_head_attention, AttentionParams, AttentionWeights};
use crate::error::{Result, TgError};
use crate::tensor::{FwdCtx, NodeId, Tensor};

use super::{
    encode_audio, feed_forward, pgca_variant_forward, FusionMode, ModelConfig, PgcaParams, Stage,
};

const LN_EPS: f64 = 1e-5;

/// Audio input to a forward pass: raw features to be encoded, or encoder
/// output precomputed elsewhere (the encoder is frozen in stage 2, so its
/// output per utterance is cacheable).
#[derive(Debug, Clone, Copy)]
pub enum AudioFeatures<'a> {
    Raw(&'a Tensor),
    Encoded(&'a Tensor),
}

/// Captured analysis artifacts from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ModelTrace {
    /// Fusion branch attention weights, indexed [decoder block][language].
    pub pgca_attn: Vec<Vec<AttentionWeights>>,
}

pub struct ForwardOutput {
    pub logits: NodeId,
    pub trace: Option<ModelTrace>,
}

/// One baseline decoder block: causal self-attention, audio cross-attention,
/// feedforward, each residual around a pre-norm.
pub fn decoder_block_forward(
    ctx: &mut FwdCtx,
    cfg: &ModelConfig,
    block: usize,
    y: NodeId,
    h_audio: NodeId,
) -> Result<NodeId> {
    for (what, node) in [("decoder state", y), ("audio features", h_audio)] {
        let s = ctx.tape.shape(node);
        if s.len() != 2 || s[1] != cfg.d {
            return Err(TgError::Dim(format!(
                "decoder block {block}: {what} {s:?} vs width {}",
                cfg.d
            )));
        }
    }
    let t_y = ctx.tape.shape(y)[0];
    if t_y > cfg.max_t_y {
        return Err(TgError::Invalid(format!(
            "decoder block {block}: {t_y} positions exceed cap {}",
            cfg.max_t_y
        )));
    }

    let self_ap = AttentionParams::new(format!("dec.b{block}.self_attn"), cfg.d, cfg.heads)?;
    let cross_ap = AttentionParams::new(format!("dec.b{block}.cross_attn"), cfg.d, cfg.heads)?;

    let g1 = ctx.param(&format!("dec.b{block}.ln1.g"))?;
    let b1 = ctx.param(&format!("dec.b{block}.ln1.b"))?;
    let a_in = ctx.tape.layer_norm(y, g1, b1, LN_EPS)?;
    let mask = causal_mask(t_y)?;
    let (self_attn, _) = multi_head_attention(ctx, a_in, a_in, a_in, &self_ap, Some(&mask))?;
    let y = ctx.tape.add(y, self_attn)?;

    let g2 = ctx.param(&format!("dec.b{block}.ln2.g"))?;
    let b2 = ctx.param(&format!("dec.b{block}.ln2.b"))?;
    let c_in = ctx.tape.layer_norm(y, g2, b2, LN_EPS)?;
    let (cross_attn, _) = multi_head_attention(ctx, c_in, h_audio, h_audio, &cross_ap, None)?;
    let y = ctx.tape.add(y, cross_attn)?;

    let g3 = ctx.param(&format!("dec.b{block}.ln3.g"))?;
    let b3 = ctx.param(&format!("dec.b{block}.ln3.b"))?;
    let m_in = ctx.tape.layer_norm(y, g3, b3, LN_EPS)?;
    let m = feed_forward(ctx, &format!("dec.b{block}.ffn"), m_in)?;
    ctx.tape.add(y, m)
}

/// Full forward pass to vocabulary logits [T_y × vocab], where
/// T_y = |teacher_tokens| + 1 (BOS-shifted input).
///
/// Stage 2 with a fused mode requires exactly one embedding stream per
/// configured language, in configuration order; stage 1 must pass none.
pub fn model_forward(
    ctx: &mut FwdCtx,
    cfg: &ModelConfig,
    stage: Stage,
    teacher_tokens: &[u32],
    audio: AudioFeatures,
    aux: &[Tensor],
    want_trace: bool,
) -> Result<ForwardOutput> {
    let fused = stage == Stage::Two && cfg.fusion_mode != FusionMode::None;
    if fused {
        if aux.len() != cfg.l() {
            return Err(TgError::Invalid(format!(
                "model_forward: stage 2 with {} languages received {} aux streams",
                cfg.l(),
                aux.len()
            )));
        }
    } else if !aux.is_empty() {
        return Err(TgError::Invalid(format!(
            "model_forward: {} aux streams passed to an unfused forward",
            aux.len()
        )));
    }
    if teacher_tokens.iter().any(|&t| t as usize >= cfg.vocab_tgt) {
        return Err(TgError::Invalid(format!(
            "model_forward: teacher token outside vocab {}",
            cfg.vocab_tgt
        )));
    }
    let t_y = teacher_tokens.len() + 1;
    if t_y > cfg.max_t_y {
        return Err(TgError::Invalid(format!(
            "model_forward: {t_y} decoder positions exceed cap {}",
            cfg.max_t_y
        )));
    }

    let h_audio = match audio {
        AudioFeatures::Raw(x) => encode_audio(ctx, cfg, x)?,
        AudioFeatures::Encoded(h) => {
            let s = h.shape();
            if s.len() != 2 || s[1] != cfg.d {
                return Err(TgError::Dim(format!(
                    "model_forward: encoded audio {s:?} vs width {}",
                    cfg.d
                )));
            }
            ctx.constant(h.clone())
        }
    };

    // Shifted-right teacher input: BOS then all but nothing dropped (labels
    // are teacher_tokens + EOS, one per position).
    let mut ids: Vec<usize> = Vec::with_capacity(t_y);
    ids.push(cfg.bos() as usize);
    ids.extend(teacher_tokens.iter().map(|&t| t as usize));

    let embed = ctx.param("dec.embed")?;
    let tok = ctx.tape.gather_rows(embed, &ids)?;
    let pos_table = ctx.param("dec.pos")?;
    let pos_idx: Vec<usize> = (0..t_y).collect();
    let pos = ctx.tape.gather_rows(pos_table, &pos_idx)?;
    let mut y = ctx.tape.add(tok, pos)?;

    let aux_nodes: Vec<NodeId> = aux.iter().map(|e| ctx.constant(e.clone())).collect();
    let mut trace = want_trace.then(ModelTrace::default);

    for b in 0..cfg.n_dec {
        if fused {
            let pg = PgcaParams::for_block(cfg, b);
            let mut captured = Vec::new();
            let capture = trace.as_mut().map(|_| &mut captured);
            y = pgca_variant_forward(ctx, &pg, y, &aux_nodes, capture)?;
            if let Some(t) = trace.as_mut() {
                t.pgca_attn.push(captured);
            }
        }
        y = decoder_block_forward(ctx, cfg, b, y, h_audio)?;
    }

    let g = ctx.param("dec.ln_f.g")?;
    let bb = ctx.param("dec.ln_f.b")?;
    let y = ctx.tape.layer_norm(y, g, bb, LN_EPS)?;
    let w_out = ctx.param("dec.out.w")?;
    let b_out = ctx.param("dec.out.b")?;
    let logits = ctx.tape.matmul(y, w_out)?;
    let logits = ctx.tape.add_bias(logits, b_out)?;

    Ok(ForwardOutput { logits, trace })
}

/// Teacher-forcing objective for one utterance: summed NLL over the target
/// symbols plus the closing EOS. Returns (loss node, position count).
pub fn model_loss(
    ctx: &mut FwdCtx,
    cfg: &ModelConfig,
    logits: NodeId,
    teacher_tokens: &[u32],
) -> Result<(NodeId, usize)> {
    let mut labels: Vec<usize> = teacher_tokens.iter().map(|&t| t as usize).collect();
    labels.push(cfg.eos() as usize);
    let loss = ctx.tape.cross_entropy_sum(logits, &labels)?;
    Ok((loss, labels.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aux_embed::{embed_aux, AuxLanguageSpec};
    use crate::model::{init_pgca_params, init_stage1_params};
    use crate::rng::SeedRng;
    use crate::tensor::{grad_check, ParamSet};

    fn toy_cfg(fusion: FusionMode, langs: Vec<String>) -> ModelConfig {
        ModelConfig {
            d: 8,
            feature_bins: 4,
            heads: 2,
            d_ff: 12,
            n_enc: 1,
            n_dec: 2,
            vocab_tgt: 8,
            max_t_s: 10,
            max_t_y: 6,
            fusion_mode: fusion,
            langs,
        }
    }

    fn toy_aux(cfg: &ModelConfig, tokens: &[u32], seed: u64) -> Vec<Tensor> {
        let root = SeedRng::new(seed);
        cfg.langs
            .iter()
            .map(|id| {
                let spec = AuxLanguageSpec::synth(id, cfg.n_symbols(), cfg.d, 0.0, 0.3, 0.0, &root)
                    .unwrap();
                let mapped = spec.cipher(tokens).unwrap();
                embed_aux(&mapped, &spec).unwrap().e
            })
            .collect()
    }

    #[test]
    fn logits_shape_contract() {
        let cfg = toy_cfg(FusionMode::None, vec![]);
        let params = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        let mut rng = SeedRng::new(2);
        let audio = Tensor::randn(vec![6, 4], 1.0, &mut rng);
        let teacher = [1u32, 4, 2];

        let mut ctx = FwdCtx::new(&params, None);
        let out = model_forward(
            &mut ctx,
            &cfg,
            Stage::One,
            &teacher,
            AudioFeatures::Raw(&audio),
            &[],
            false,
        )
        .unwrap();
        assert_eq!(ctx.tape.shape(out.logits), &[4, 8]);
    }

    #[test]
    fn single_position_decodes() {
        // T_y = 1 (empty teacher sequence): self-attention sees only BOS.
        let cfg = toy_cfg(FusionMode::None, vec![]);
        let params = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        let mut rng = SeedRng::new(2);
        let audio = Tensor::randn(vec![2, 4], 1.0, &mut rng);
        let mut ctx = FwdCtx::new(&params, None);
        let out = model_forward(
            &mut ctx,
            &cfg,
            Stage::One,
            &[],
            AudioFeatures::Raw(&audio),
            &[],
            false,
        )
        .unwrap();
        assert_eq!(ctx.tape.shape(out.logits), &[1, 8]);
    }

    #[test]
    fn aux_stream_presence_is_enforced() {
        let cfg2 = toy_cfg(FusionMode::FullPgca, vec!["la".into()]);
        let mut params = init_stage1_params(&cfg2, &SeedRng::new(1)).unwrap();
        init_pgca_params(&cfg2, &mut params, &SeedRng::new(1)).unwrap();
        let mut rng = SeedRng::new(2);
        let audio = Tensor::randn(vec![4, 4], 1.0, &mut rng);
        let teacher = [1u32, 2];

        // Stage 2 fused without aux streams: error.
        let mut ctx = FwdCtx::new(&params, None);
        assert!(model_forward(
            &mut ctx,
            &cfg2,
            Stage::Two,
            &teacher,
            AudioFeatures::Raw(&audio),
            &[],
            false,
        )
        .is_err());

        // Stage 1 with aux streams: error.
        let aux = toy_aux(&cfg2, &teacher, 3);
        let mut ctx = FwdCtx::new(&params, None);
        assert!(model_forward(
            &mut ctx,
            &cfg2,
            Stage::One,
            &teacher,
            AudioFeatures::Raw(&audio),
            &aux,
            false,
        )
        .is_err());
    }

    #[test]
    fn vocab_overflow_rejected() {
        let cfg = toy_cfg(FusionMode::None, vec![]);
        let params = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        let audio = Tensor::zeros(vec![2, 4]);
        let mut ctx = FwdCtx::new(&params, None);
        assert!(model_forward(
            &mut ctx,
            &cfg,
            Stage::One,
            &[99],
            AudioFeatures::Raw(&audio),
            &[],
            false,
        )
        .is_err());
    }

    #[test]
    fn fresh_stage2_logits_match_stage1_for_gated_modes() {
        let mut rng = SeedRng::new(5);
        let audio = Tensor::randn(vec![6, 4], 1.0, &mut rng);
        let teacher = [3u32, 0, 5];

        let base_cfg = toy_cfg(FusionMode::None, vec![]);
        let params1 = init_stage1_params(&base_cfg, &SeedRng::new(9)).unwrap();
        let mut ctx = FwdCtx::new(&params1, None);
        let out1 = model_forward(
            &mut ctx,
            &base_cfg,
            Stage::One,
            &teacher,
            AudioFeatures::Raw(&audio),
            &[],
            false,
        )
        .unwrap();
        let logits1 = ctx.tape.value(out1.logits).clone();

        for mode in [
            FusionMode::FullPgca,
            FusionMode::NoTanh,
            FusionMode::Sequential,
            FusionMode::Shared,
        ] {
            let cfg2 = toy_cfg(mode, vec!["la".into(), "lb".into()]);
            let mut params2 = init_stage1_params(&base_cfg, &SeedRng::new(9)).unwrap();
            init_pgca_params(&cfg2, &mut params2, &SeedRng::new(77)).unwrap();
            let aux = toy_aux(&cfg2, &teacher, 11);
            let mut ctx = FwdCtx::new(&params2, None);
            let out2 = model_forward(
                &mut ctx,
                &cfg2,
                Stage::Two,
                &teacher,
                AudioFeatures::Raw(&audio),
                &aux,
                false,
            )
            .unwrap();
            let logits2 = ctx.tape.value(out2.logits).clone();
            assert!(
                logits1.max_abs_diff(&logits2) < 1e-9,
                "mode {mode}: fresh fusion must not move logits"
            );
        }
    }

    #[test]
    fn cached_encoder_output_matches_raw_path() {
        let cfg = toy_cfg(FusionMode::None, vec![]);
        let params = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        let mut rng = SeedRng::new(2);
        let audio = Tensor::randn(vec![6, 4], 1.0, &mut rng);
        let teacher = [1u32, 4, 2];

        let mut ctx = FwdCtx::new(&params, None);
        let h = encode_audio(&mut ctx, &cfg, &audio).unwrap();
        let h_val = ctx.tape.value(h).clone();
        let out_raw = model_forward(
            &mut ctx,
            &cfg,
            Stage::One,
            &teacher,
            AudioFeatures::Raw(&audio),
            &[],
            false,
        )
        .unwrap();
        let logits_raw = ctx.tape.value(out_raw.logits).clone();

        let mut ctx2 = FwdCtx::new(&params, None);
        let out_cached = model_forward(
            &mut ctx2,
            &cfg,
            Stage::One,
            &teacher,
            AudioFeatures::Encoded(&h_val),
            &[],
            false,
        )
        .unwrap();
        let logits_cached = ctx2.tape.value(out_cached.logits).clone();
        for (a, b) in logits_raw.data().iter().zip(logits_cached.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn trace_captures_branch_weights() {
        let cfg = toy_cfg(FusionMode::FullPgca, vec!["la".into(), "lb".into()]);
        let mut params = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        init_pgca_params(&cfg, &mut params, &SeedRng::new(2)).unwrap();
        let mut rng = SeedRng::new(3);
        let audio = Tensor::randn(vec![4, 4], 1.0, &mut rng);
        let teacher = [1u32, 2];
        let aux = toy_aux(&cfg, &teacher, 4);

        let mut ctx = FwdCtx::new(&params, None);
        let out = model_forward(
            &mut ctx,
            &cfg,
            Stage::Two,
            &teacher,
            AudioFeatures::Raw(&audio),
            &aux,
            true,
        )
        .unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.pgca_attn.len(), cfg.n_dec);
        for block in &trace.pgca_attn {
            assert_eq!(block.len(), cfg.l());
            for (l, w) in block.iter().enumerate() {
                assert_eq!(
                    w.per_head.shape(),
                    &[cfg.heads, teacher.len() + 1, aux[l].shape()[0]]
                );
            }
        }
    }

    #[test]
    fn decoder_block_gradients_match_finite_differences() {
        let cfg = toy_cfg(FusionMode::None, vec![]);
        let full = init_stage1_params(&cfg, &SeedRng::new(21)).unwrap();
        let mut rng = SeedRng::new(22);
        let y = Tensor::randn(vec![3, 8], 1.0, &mut rng);
        let h = Tensor::randn(vec![4, 8], 1.0, &mut rng);

        // Only block-0 decoder parameters participate.
        let mut params = ParamSet::new();
        for (name, t) in full.iter() {
            if name.starts_with("dec.b0.") {
                params.insert(name, t.clone());
            }
        }
        let names: Vec<String> = params.names().map(String::from).collect();
        let report = grad_check(
            &params,
            &names,
            |p| {
                let mut ctx = FwdCtx::new(p, None);
                let yn = ctx.constant(y.clone());
                let hn = ctx.constant(h.clone());
                let out = decoder_block_forward(&mut ctx, &cfg, 0, yn, hn)?;
                let loss = ctx.tape.cross_entropy_sum(out, &[0, 3, 6])?;
                Ok(ctx.into_built(loss))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{report}");
    }
}

//! Parameter initialization and the shared feedforward block.
//!
//! Every parameter draws from an RNG split on its own name, so initialization
//! is independent of traversal order. Matrix weights are Gaussian·0.02,
//! biases and gating scalars zero, layer-norm gains one.

use crate::attention::{AttentionParams, INIT_STD};
use crate::error::Result;
use crate::rng::SeedRng;
use crate::tensor::{FwdCtx, NodeId, ParamSet, Tensor};

use super::{FusionMode, ModelConfig, PgcaParams};

pub(crate) fn insert_randn(params: &mut ParamSet, name: String, shape: Vec<usize>, rng: &SeedRng) {
    let mut r = rng.split(&name);
    params.insert(name, Tensor::randn(shape, INIT_STD, &mut r));
}

pub(crate) fn insert_zeros(params: &mut ParamSet, name: String, shape: Vec<usize>) {
    params.insert(name, Tensor::zeros(shape));
}

fn insert_ones(params: &mut ParamSet, name: String, n: usize) {
    params.insert(name, Tensor::new(vec![n], vec![1.0; n]).unwrap());
}

fn insert_layer_norm(params: &mut ParamSet, prefix: &str, d: usize) {
    insert_ones(params, format!("{prefix}.g"), d);
    insert_zeros(params, format!("{prefix}.b"), vec![d]);
}

pub(crate) fn insert_ffn(
    params: &mut ParamSet,
    prefix: &str,
    d: usize,
    d_ff: usize,
    rng: &SeedRng,
) {
    insert_randn(params, format!("{prefix}.w1"), vec![d, d_ff], rng);
    insert_zeros(params, format!("{prefix}.b1"), vec![d_ff]);
    insert_randn(params, format!("{prefix}.w2"), vec![d_ff, d], rng);
    insert_zeros(params, format!("{prefix}.b2"), vec![d]);
}

/// Two-layer GELU feedforward: gelu(x·w1 + b1)·w2 + b2.
pub fn feed_forward(ctx: &mut FwdCtx, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w1 = ctx.param(&format!("{prefix}.w1"))?;
    let b1 = ctx.param(&format!("{prefix}.b1"))?;
    let w2 = ctx.param(&format!("{prefix}.w2"))?;
    let b2 = ctx.param(&format!("{prefix}.b2"))?;
    let h = ctx.tape.matmul(x, w1)?;
    let h = ctx.tape.add_bias(h, b1)?;
    let h = ctx.tape.gelu(h);
    let h = ctx.tape.matmul(h, w2)?;
    ctx.tape.add_bias(h, b2)
}

/// All encoder, decoder, embedding, and projection parameters (stage 1).
pub fn init_stage1_params(cfg: &ModelConfig, rng: &SeedRng) -> Result<ParamSet> {
    cfg.validate()?;
    let mut p = ParamSet::new();
    let d = cfg.d;

    // Encoder: conv front-end, positions, blocks, final norm.
    insert_randn(
        &mut p,
        "enc.conv.w".into(),
        vec![3, cfg.feature_bins, d],
        rng,
    );
    insert_zeros(&mut p, "enc.conv.b".into(), vec![d]);
    insert_randn(&mut p, "enc.pos".into(), vec![cfg.max_t_s, d], rng);
    for b in 0..cfg.n_enc {
        insert_layer_norm(&mut p, &format!("enc.b{b}.ln1"), d);
        AttentionParams::new(format!("enc.b{b}.attn"), d, cfg.heads)?.init_into(&mut p, rng);
        insert_layer_norm(&mut p, &format!("enc.b{b}.ln2"), d);
        insert_ffn(&mut p, &format!("enc.b{b}.ffn"), d, cfg.d_ff, rng);
    }
    insert_layer_norm(&mut p, "enc.ln_post", d);

    // Decoder: embeddings, positions, blocks, final norm, output head.
    insert_randn(&mut p, "dec.embed".into(), vec![cfg.vocab_tgt, d], rng);
    insert_randn(&mut p, "dec.pos".into(), vec![cfg.max_t_y, d], rng);
    for b in 0..cfg.n_dec {
        insert_layer_norm(&mut p, &format!("dec.b{b}.ln1"), d);
        AttentionParams::new(format!("dec.b{b}.self_attn"), d, cfg.heads)?.init_into(&mut p, rng);
        insert_layer_norm(&mut p, &format!("dec.b{b}.ln2"), d);
        AttentionParams::new(format!("dec.b{b}.cross_attn"), d, cfg.heads)?.init_into(&mut p, rng);
        insert_layer_norm(&mut p, &format!("dec.b{b}.ln3"), d);
        insert_ffn(&mut p, &format!("dec.b{b}.ffn"), d, cfg.d_ff, rng);
    }
    insert_layer_norm(&mut p, "dec.ln_f", d);
    insert_randn(&mut p, "dec.out.w".into(), vec![d, cfg.vocab_tgt], rng);
    insert_zeros(&mut p, "dec.out.b".into(), vec![cfg.vocab_tgt]);

    Ok(p)
}

/// Add the fusion parameters for every decoder block (stage 2). Gating
/// scalars are zero so gated modes start as the identity.
pub fn init_pgca_params(cfg: &ModelConfig, params: &mut ParamSet, rng: &SeedRng) -> Result<()> {
    cfg.validate()?;
    if cfg.fusion_mode == FusionMode::None {
        return Ok(());
    }
    for b in 0..cfg.n_dec {
        let pg = PgcaParams::for_block(cfg, b);
        pg.init_into(params, rng)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent_and_seeded() {
        let cfg = ModelConfig::desk_default(FusionMode::None, vec![]);
        let a = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        let b = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        let names: Vec<String> = a.names().map(String::from).collect();
        assert!(a.bits_equal(&b, &names));
        let c = init_stage1_params(&cfg, &SeedRng::new(2)).unwrap();
        assert!(!a.bits_equal(&c, &names));
    }

    #[test]
    fn gates_start_at_zero() {
        let cfg = ModelConfig::desk_default(FusionMode::FullPgca, vec!["la".into(), "lb".into()]);
        let mut p = init_stage1_params(&cfg, &SeedRng::new(1)).unwrap();
        init_pgca_params(&cfg, &mut p, &SeedRng::new(1)).unwrap();
        let gates: Vec<&str> = p.names().filter(|n| n.contains("alpha")).collect();
        assert_eq!(gates.len(), cfg.n_dec * (cfg.l() + 1));
        for g in gates {
            assert_eq!(p.get(g).unwrap().data(), &[0.0]);
        }
    }
}

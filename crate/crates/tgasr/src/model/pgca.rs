//! Fusion of auxiliary-language embedding streams into the decoder.
//!
//! The full mechanism runs L cross-attention branches in parallel over the
//! same decoder state, each scaled by a learnable tanh gate, then a gated
//! feedforward:
//!
//!   Y' = Y + Σ_l tanh(α_attn_l) · attn(Y, E_l, E_l)
//!   Z  = Y' + tanh(α_fnn) · fnn(Y')
//!
//! All gates start at zero, so a freshly fused model is exactly its
//! unfused parent. The ablation variants replace the gating function, the
//! branch topology, the weight sharing, or the whole module.

use crate::attention::{multi_head_attention, AttentionParams, AttentionWeights};
use crate::error::{Result, TgError};
use crate::rng::SeedRng;
use crate::tensor::{FwdCtx, NodeId, ParamSet};

use super::{params, FusionMode, ModelConfig};

/// Naming and dimensions of one decoder block's fusion parameters.
#[derive(Debug, Clone)]
pub struct PgcaParams {
    pub prefix: String,
    pub mode: FusionMode,
    pub langs: Vec<String>,
    pub d: usize,
    pub d_ff: usize,
    pub heads: usize,
}

impl PgcaParams {
    pub fn for_block(cfg: &ModelConfig, block: usize) -> Self {
        Self {
            prefix: format!("dec.b{block}.pgca"),
            mode: cfg.fusion_mode,
            langs: cfg.langs.clone(),
            d: cfg.d,
            d_ff: cfg.d_ff,
            heads: cfg.heads,
        }
    }

    pub fn l(&self) -> usize {
        self.langs.len()
    }

    fn branch_attn(&self, l: usize) -> Result<AttentionParams> {
        let prefix = match self.mode {
            FusionMode::Shared => format!("{}.shared", self.prefix),
            _ => format!("{}.branch{l}", self.prefix),
        };
        AttentionParams::new(prefix, self.d, self.heads)
    }

    fn alpha_attn(&self, l: usize) -> String {
        format!("{}.alpha_attn{l}", self.prefix)
    }

    fn alpha_fnn(&self) -> String {
        format!("{}.alpha_fnn", self.prefix)
    }

    fn fnn_prefix(&self) -> String {
        format!("{}.fnn", self.prefix)
    }

    pub fn init_into(&self, set: &mut ParamSet, rng: &SeedRng) -> Result<()> {
        match self.mode {
            FusionMode::None => {}
            FusionMode::FullPgca | FusionMode::NoTanh | FusionMode::Sequential => {
                for l in 0..self.l() {
                    self.branch_attn(l)?.init_into(set, rng);
                    params::insert_zeros(set, self.alpha_attn(l), vec![1]);
                }
                params::insert_zeros(set, self.alpha_fnn(), vec![1]);
                params::insert_ffn(set, &self.fnn_prefix(), self.d, self.d_ff, rng);
            }
            FusionMode::Shared => {
                self.branch_attn(0)?.init_into(set, rng);
                for l in 0..self.l() {
                    params::insert_zeros(set, self.alpha_attn(l), vec![1]);
                }
                params::insert_zeros(set, self.alpha_fnn(), vec![1]);
                params::insert_ffn(set, &self.fnn_prefix(), self.d, self.d_ff, rng);
            }
            FusionMode::Addition => {
                for l in 0..self.l() {
                    params::insert_randn(
                        set,
                        format!("{}.proj{l}.w", self.prefix),
                        vec![self.d, self.d],
                        rng,
                    );
                    params::insert_zeros(set, format!("{}.proj{l}.b", self.prefix), vec![self.d]);
                }
            }
            FusionMode::Concatenation => {
                params::insert_randn(
                    set,
                    format!("{}.proj.w", self.prefix),
                    vec![self.l() * self.d, self.d],
                    rng,
                );
                params::insert_zeros(set, format!("{}.proj.b", self.prefix), vec![self.d]);
            }
        }
        Ok(())
    }

    /// Gate coefficient node: tanh(α), or raw α for the no-tanh ablation.
    fn gate(&self, ctx: &mut FwdCtx, name: &str) -> Result<NodeId> {
        let alpha = ctx.param(name)?;
        Ok(match self.mode {
            FusionMode::NoTanh => alpha,
            _ => ctx.tape.tanh(alpha),
        })
    }

    fn validate_inputs(&self, ctx: &FwdCtx, y: NodeId, aux: &[NodeId]) -> Result<()> {
        if aux.len() != self.l() {
            return Err(TgError::Dim(format!(
                "fusion: {} aux streams for {} configured languages",
                aux.len(),
                self.l()
            )));
        }
        if ctx.tape.shape(y).len() != 2 || ctx.tape.shape(y)[1] != self.d {
            return Err(TgError::Dim(format!(
                "fusion: decoder state {:?} vs width {}",
                ctx.tape.shape(y),
                self.d
            )));
        }
        for (l, &e) in aux.iter().enumerate() {
            let s = ctx.tape.shape(e);
            if s.len() != 2 || s[1] != self.d {
                return Err(TgError::Dim(format!(
                    "fusion: stream {l} has shape {s:?}, expected [T x {}]",
                    self.d
                )));
            }
        }
        Ok(())
    }
}

/// The full parallel gated mechanism (equations above). `capture`, when
/// present, receives one per-head weight matrix per language branch.
pub fn pgca_forward(
    ctx: &mut FwdCtx,
    p: &PgcaParams,
    y: NodeId,
    aux: &[NodeId],
    capture: Option<&mut Vec<AttentionWeights>>,
) -> Result<NodeId> {
    if p.mode != FusionMode::FullPgca {
        return Err(TgError::Invalid(format!(
            "pgca_forward requires full_pgca, got {}",
            p.mode
        )));
    }
    pgca_variant_forward(ctx, p, y, aux, capture)
}

/// Dispatch over all fusion variants.
pub fn pgca_variant_forward(
    ctx: &mut FwdCtx,
    p: &PgcaParams,
    y: NodeId,
    aux: &[NodeId],
    mut capture: Option<&mut Vec<AttentionWeights>>,
) -> Result<NodeId> {
    p.validate_inputs(ctx, y, aux)?;
    match p.mode {
        FusionMode::None => Err(TgError::Invalid(
            "fusion forward called with mode none".into(),
        )),

        FusionMode::FullPgca | FusionMode::NoTanh | FusionMode::Shared => {
            // Parallel branches all read the same Y, summed once.
            let mut acc = y;
            for (l, &e) in aux.iter().enumerate() {
                let ap = p.branch_attn(l)?;
                let (branch, weights) = multi_head_attention(ctx, y, e, e, &ap, None)?;
                if let Some(c) = capture.as_deref_mut() {
                    c.push(weights);
                }
                let gate = p.gate(ctx, &p.alpha_attn(l))?;
                let term = ctx.tape.scale_by_scalar(branch, gate)?;
                acc = ctx.tape.add(acc, term)?;
            }
            gated_fnn(ctx, p, acc)
        }

        FusionMode::Sequential => {
            // Branches chained in language order; each reads the running state.
            let mut cur = y;
            for (l, &e) in aux.iter().enumerate() {
                let ap = p.branch_attn(l)?;
                let (branch, weights) = multi_head_attention(ctx, cur, e, e, &ap, None)?;
                if let Some(c) = capture.as_deref_mut() {
                    c.push(weights);
                }
                let gate = p.gate(ctx, &p.alpha_attn(l))?;
                let term = ctx.tape.scale_by_scalar(branch, gate)?;
                cur = ctx.tape.add(cur, term)?;
            }
            gated_fnn(ctx, p, cur)
        }

        FusionMode::Addition => {
            // Y + Σ_l broadcast(proj_l(meanpool(E_l))); no gates, no fnn.
            let d = p.d;
            let mut acc = y;
            for (l, &e) in aux.iter().enumerate() {
                let pooled = ctx.tape.mean_rows(e)?;
                let w = ctx.param(&format!("{}.proj{l}.w", p.prefix))?;
                let b = ctx.param(&format!("{}.proj{l}.b", p.prefix))?;
                let proj = ctx.tape.matmul(pooled, w)?;
                let proj = ctx.tape.add_bias(proj, b)?;
                let row = ctx.tape.reshape(proj, vec![d])?;
                acc = ctx.tape.add_bias(acc, row)?;
            }
            Ok(acc)
        }

        FusionMode::Concatenation => {
            // Pool each stream, concatenate features, project L·d -> d once.
            let d = p.d;
            let mut pooled = Vec::with_capacity(aux.len());
            for &e in aux {
                pooled.push(ctx.tape.mean_rows(e)?);
            }
            let cat = ctx.tape.concat_cols(&pooled)?;
            let w = ctx.param(&format!("{}.proj.w", p.prefix))?;
            let b = ctx.param(&format!("{}.proj.b", p.prefix))?;
            let proj = ctx.tape.matmul(cat, w)?;
            let proj = ctx.tape.add_bias(proj, b)?;
            let row = ctx.tape.reshape(proj, vec![d])?;
            ctx.tape.add_bias(y, row)
        }
    }
}

fn gated_fnn(ctx: &mut FwdCtx, p: &PgcaParams, y_prime: NodeId) -> Result<NodeId> {
    let f = params::feed_forward(ctx, &p.fnn_prefix(), y_prime)?;
    let gate = p.gate(ctx, &p.alpha_fnn())?;
    let term = ctx.tape.scale_by_scalar(f, gate)?;
    ctx.tape.add(y_prime, term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const GELU_C: f64 = 0.797_884_560_802_865_4;
    const GELU_A: f64 = 0.044_715;

    fn toy_pgca(mode: FusionMode, langs: &[&str], d: usize, heads: usize) -> PgcaParams {
        PgcaParams {
            prefix: "dec.b0.pgca".into(),
            mode,
            langs: langs.iter().map(|s| s.to_string()).collect(),
            d,
            d_ff: 2 * d,
            heads,
        }
    }

    fn run(p: &PgcaParams, set: &ParamSet, y: &Tensor, aux: &[Tensor]) -> Result<Tensor> {
        let mut ctx = FwdCtx::new(set, None);
        let yn = ctx.constant(y.clone());
        let an: Vec<NodeId> = aux.iter().map(|e| ctx.constant(e.clone())).collect();
        let z = pgca_variant_forward(&mut ctx, p, yn, &an, None)?;
        Ok(ctx.tape.value(z).clone())
    }

    fn rand_inputs(d: usize, t_y: usize, t_l: &[usize], seed: u64) -> (Tensor, Vec<Tensor>) {
        let mut rng = SeedRng::new(seed);
        let y = Tensor::randn(vec![t_y, d], 1.0, &mut rng);
        let aux = t_l
            .iter()
            .map(|&t| Tensor::randn(vec![t, d], 1.0, &mut rng))
            .collect();
        (y, aux)
    }

    #[test]
    fn zero_init_is_identity_for_gated_modes() {
        for mode in [
            FusionMode::FullPgca,
            FusionMode::NoTanh,
            FusionMode::Sequential,
            FusionMode::Shared,
        ] {
            let p = toy_pgca(mode, &["la", "lb"], 8, 2);
            let mut set = ParamSet::new();
            p.init_into(&mut set, &SeedRng::new(7)).unwrap();
            let (y, aux) = rand_inputs(8, 3, &[4, 5], 11);
            let z = run(&p, &set, &y, &aux).unwrap();
            // tanh(0) = 0 means every fused term vanishes identically.
            assert_eq!(z.data(), y.data(), "mode {mode}");
        }
    }

    #[test]
    fn saturated_gate_passes_branch_through() {
        // α = 20 puts tanh at 1.0 to the last bit; with α_fnn = 0 the output
        // is exactly Y + attn(Y, E, E).
        let p = toy_pgca(FusionMode::FullPgca, &["la"], 4, 1);
        let mut set = ParamSet::new();
        p.init_into(&mut set, &SeedRng::new(3)).unwrap();
        *set.get_mut("dec.b0.pgca.alpha_attn0").unwrap() = Tensor::scalar(20.0);

        let (y, aux) = rand_inputs(4, 2, &[3], 13);
        let z = run(&p, &set, &y, &aux).unwrap();

        let mut ctx = FwdCtx::new(&set, None);
        let yn = ctx.constant(y.clone());
        let en = ctx.constant(aux[0].clone());
        let ap = AttentionParams::new("dec.b0.pgca.branch0", 4, 1).unwrap();
        let (branch, _) = multi_head_attention(&mut ctx, yn, en, en, &ap, None).unwrap();
        let expect = ctx.tape.add(yn, branch).unwrap();
        assert_eq!(z.data(), ctx.tape.value(expect).data());
    }

    // Straight-line transcription of the two fusion equations, written
    // directly against raw parameter arrays (no tape, no shared code).
    #[allow(clippy::needless_range_loop)]
    fn oracle_full(p: &PgcaParams, set: &ParamSet, y: &Tensor, aux: &[Tensor]) -> Vec<f64> {
        let d = p.d;
        let t_y = y.shape()[0];
        let mut y_prime: Vec<f64> = y.data().to_vec();
        for (l, e) in aux.iter().enumerate() {
            let alpha = set
                .get(&format!("{}.alpha_attn{l}", p.prefix))
                .unwrap()
                .data()[0];
            let attn = oracle_mha(p, set, &format!("{}.branch{l}", p.prefix), y.data(), t_y, e);
            for (acc, a) in y_prime.iter_mut().zip(&attn) {
                *acc += alpha.tanh() * a;
            }
        }
        let alpha_f = set.get(&format!("{}.alpha_fnn", p.prefix)).unwrap().data()[0];
        let w1 = set.get(&format!("{}.fnn.w1", p.prefix)).unwrap();
        let b1 = set.get(&format!("{}.fnn.b1", p.prefix)).unwrap();
        let w2 = set.get(&format!("{}.fnn.w2", p.prefix)).unwrap();
        let b2 = set.get(&format!("{}.fnn.b2", p.prefix)).unwrap();
        let d_ff = p.d_ff;
        let mut z = y_prime.clone();
        for t in 0..t_y {
            let row = &y_prime[t * d..(t + 1) * d];
            let mut hidden = vec![0.0; d_ff];
            for j in 0..d_ff {
                let mut s = b1.data()[j];
                for i in 0..d {
                    s += row[i] * w1.data()[i * d_ff + j];
                }
                let inner = GELU_C * (s + GELU_A * s * s * s);
                hidden[j] = 0.5 * s * (1.0 + inner.tanh());
            }
            for o in 0..d {
                let mut s = b2.data()[o];
                for j in 0..d_ff {
                    s += hidden[j] * w2.data()[j * d + o];
                }
                z[t * d + o] += alpha_f.tanh() * s;
            }
        }
        z
    }

    #[allow(clippy::needless_range_loop)]
    fn oracle_mha(
        p: &PgcaParams,
        set: &ParamSet,
        prefix: &str,
        q_in: &[f64],
        t_q: usize,
        e: &Tensor,
    ) -> Vec<f64> {
        let d = p.d;
        let d_k = d / p.heads;
        let t_k = e.shape()[0];
        let mut concat = vec![0.0; t_q * d];
        for h in 0..p.heads {
            let wq = set.get(&format!("{prefix}.h{h}.wq")).unwrap().data();
            let wk = set.get(&format!("{prefix}.h{h}.wk")).unwrap().data();
            let wv = set.get(&format!("{prefix}.h{h}.wv")).unwrap().data();
            let proj = |x: &[f64], rows: usize, w: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; rows * d_k];
                for r in 0..rows {
                    for c in 0..d_k {
                        let mut s = 0.0;
                        for i in 0..d {
                            s += x[r * d + i] * w[i * d_k + c];
                        }
                        out[r * d_k + c] = s;
                    }
                }
                out
            };
            let q = proj(q_in, t_q, wq);
            let k = proj(e.data(), t_k, wk);
            let v = proj(e.data(), t_k, wv);
            for i in 0..t_q {
                let mut scores = vec![0.0; t_k];
                for (j, sc) in scores.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for c in 0..d_k {
                        s += q[i * d_k + c] * k[j * d_k + c];
                    }
                    *sc = s / (d_k as f64).sqrt();
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..d_k {
                    let mut s = 0.0;
                    for j in 0..t_k {
                        s += exps[j] / z * v[j * d_k + c];
                    }
                    concat[i * d + h * d_k + c] = s;
                }
            }
        }
        let wo = set.get(&format!("{prefix}.wo")).unwrap().data();
        let mut out = vec![0.0; t_q * d];
        for r in 0..t_q {
            for o in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    s += concat[r * d + i] * wo[i * d + o];
                }
                out[r * d + o] = s;
            }
        }
        out
    }

    #[test]
    fn matches_equation_transcription_oracle() {
        let p = toy_pgca(FusionMode::FullPgca, &["la", "lb"], 4, 2);
        let mut set = ParamSet::new();
        p.init_into(&mut set, &SeedRng::new(17)).unwrap();
        // Open the gates so the test is not vacuous.
        *set.get_mut("dec.b0.pgca.alpha_attn0").unwrap() = Tensor::scalar(0.4);
        *set.get_mut("dec.b0.pgca.alpha_attn1").unwrap() = Tensor::scalar(-0.8);
        *set.get_mut("dec.b0.pgca.alpha_fnn").unwrap() = Tensor::scalar(0.25);

        let (y, aux) = rand_inputs(4, 2, &[3, 3], 19);
        let z = run(&p, &set, &y, &aux).unwrap();
        let expect = oracle_full(&p, &set, &y, &aux);
        for (a, b) in z.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shared_with_identical_streams_equals_full_with_tied_weights() {
        let d = 6;
        let shared = toy_pgca(FusionMode::Shared, &["la", "lb", "lc"], d, 2);
        let mut sset = ParamSet::new();
        shared.init_into(&mut sset, &SeedRng::new(23)).unwrap();

        let full = toy_pgca(FusionMode::FullPgca, &["la", "lb", "lc"], d, 2);
        let mut fset = ParamSet::new();
        full.init_into(&mut fset, &SeedRng::new(23)).unwrap();
        // Tie every branch to the shared projections.
        for l in 0..3 {
            for h in 0..2 {
                for w in ["wq", "wk", "wv"] {
                    let src = sset
                        .get(&format!("dec.b0.pgca.shared.h{h}.{w}"))
                        .unwrap()
                        .clone();
                    *fset
                        .get_mut(&format!("dec.b0.pgca.branch{l}.h{h}.{w}"))
                        .unwrap() = src;
                }
            }
            let src = sset.get("dec.b0.pgca.shared.wo").unwrap().clone();
            *fset.get_mut(&format!("dec.b0.pgca.branch{l}.wo")).unwrap() = src;
        }
        // Same gates and fnn (copy shared's into full).
        for name in ["alpha_attn0", "alpha_attn1", "alpha_attn2", "alpha_fnn"] {
            *fset.get_mut(&format!("dec.b0.pgca.{name}")).unwrap() = Tensor::scalar(0.3);
            *sset.get_mut(&format!("dec.b0.pgca.{name}")).unwrap() = Tensor::scalar(0.3);
        }
        for name in ["fnn.w1", "fnn.b1", "fnn.w2", "fnn.b2"] {
            let src = sset.get(&format!("dec.b0.pgca.{name}")).unwrap().clone();
            *fset.get_mut(&format!("dec.b0.pgca.{name}")).unwrap() = src;
        }

        let mut rng = SeedRng::new(29);
        let y = Tensor::randn(vec![3, d], 1.0, &mut rng);
        let e = Tensor::randn(vec![4, d], 1.0, &mut rng);
        let aux = vec![e.clone(), e.clone(), e];

        let zs = run(&shared, &sset, &y, &aux).unwrap();
        let zf = run(&full, &fset, &y, &aux).unwrap();
        assert!(zs.max_abs_diff(&zf) < 1e-12);
    }

    #[test]
    fn addition_mode_matches_pool_project_add_oracle() {
        let d = 4;
        let p = toy_pgca(FusionMode::Addition, &["la", "lb"], d, 2);
        let mut set = ParamSet::new();
        p.init_into(&mut set, &SeedRng::new(31)).unwrap();
        let (y, aux) = rand_inputs(d, 3, &[2, 5], 37);

        let z = run(&p, &set, &y, &aux).unwrap();

        let mut expect = y.data().to_vec();
        for (l, e) in aux.iter().enumerate() {
            let t = e.shape()[0];
            let mut pooled = vec![0.0; d];
            for r in 0..t {
                for (c, p) in pooled.iter_mut().enumerate() {
                    *p += e.data()[r * d + c] / t as f64;
                }
            }
            let w = set.get(&format!("dec.b0.pgca.proj{l}.w")).unwrap().data();
            let b = set.get(&format!("dec.b0.pgca.proj{l}.b")).unwrap().data();
            let mut proj = vec![0.0; d];
            for (o, pv) in proj.iter_mut().enumerate() {
                let mut s = b[o];
                for i in 0..d {
                    s += pooled[i] * w[i * d + o];
                }
                *pv = s;
            }
            for r in 0..y.shape()[0] {
                for c in 0..d {
                    expect[r * d + c] += proj[c];
                }
            }
        }
        for (a, b) in z.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn concatenation_changes_output_even_at_init() {
        // No gates in pooled modes: a fresh projection perturbs Y.
        let p = toy_pgca(FusionMode::Concatenation, &["la", "lb"], 4, 2);
        let mut set = ParamSet::new();
        p.init_into(&mut set, &SeedRng::new(41)).unwrap();
        let (y, aux) = rand_inputs(4, 3, &[2, 2], 43);
        let z = run(&p, &set, &y, &aux).unwrap();
        assert!(z.max_abs_diff(&y) > 0.0);
        assert_eq!(z.shape(), y.shape());
    }

    #[test]
    fn parallel_order_invariance() {
        // Permuting streams together with their branch params and gates
        // leaves the output unchanged (the branch sum is commutative).
        let d = 6;
        let p = toy_pgca(FusionMode::FullPgca, &["la", "lb", "lc"], d, 2);
        let mut set = ParamSet::new();
        p.init_into(&mut set, &SeedRng::new(47)).unwrap();
        for (l, a) in [(0, 0.5), (1, -0.3), (2, 0.9)] {
            *set.get_mut(&format!("dec.b0.pgca.alpha_attn{l}")).unwrap() = Tensor::scalar(a);
        }
        let (y, aux) = rand_inputs(d, 3, &[2, 4, 3], 53);

        let z = run(&p, &set, &y, &aux).unwrap();

        // Permutation (2, 0, 1) applied to streams and their parameters.
        let perm = [2usize, 0, 1];
        let mut pset = ParamSet::new();
        p.init_into(&mut pset, &SeedRng::new(47)).unwrap();
        for (new_l, &old_l) in perm.iter().enumerate() {
            for h in 0..2 {
                for w in ["wq", "wk", "wv"] {
                    let src = set
                        .get(&format!("dec.b0.pgca.branch{old_l}.h{h}.{w}"))
                        .unwrap()
                        .clone();
                    *pset
                        .get_mut(&format!("dec.b0.pgca.branch{new_l}.h{h}.{w}"))
                        .unwrap() = src;
                }
            }
            let src = set
                .get(&format!("dec.b0.pgca.branch{old_l}.wo"))
                .unwrap()
                .clone();
            *pset
                .get_mut(&format!("dec.b0.pgca.branch{new_l}.wo"))
                .unwrap() = src;
            let src = set
                .get(&format!("dec.b0.pgca.alpha_attn{old_l}"))
                .unwrap()
                .clone();
            *pset
                .get_mut(&format!("dec.b0.pgca.alpha_attn{new_l}"))
                .unwrap() = src;
        }
        let paux: Vec<Tensor> = perm.iter().map(|&i| aux[i].clone()).collect();
        let zp = run(&p, &pset, &y, &paux).unwrap();
        assert!(z.max_abs_diff(&zp) < 1e-12);
    }

    #[test]
    fn wrong_stream_count_is_rejected() {
        let p = toy_pgca(FusionMode::FullPgca, &["la", "lb"], 4, 2);
        let mut set = ParamSet::new();
        p.init_into(&mut set, &SeedRng::new(3)).unwrap();
        let (y, aux) = rand_inputs(4, 2, &[3], 5);
        assert!(matches!(run(&p, &set, &y, &aux), Err(TgError::Dim(_))));
    }

    #[test]
    fn gate_values_stay_inside_unit_interval() {
        // tanh keeps gate coefficients strictly inside (-1, 1) across the
        // magnitudes training actually produces.
        for a in [-8.0, -2.0, -0.5, 0.0, 1e-3, 0.7, 3.0, 8.0] {
            let g = f64::tanh(a);
            assert!(g > -1.0 && g < 1.0);
        }
    }
}

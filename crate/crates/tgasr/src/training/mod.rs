//! Two-stage trainer: full fine-tune of the encoder/decoder, then
//! fusion-only training on top of the frozen stage-1 checkpoint. AdamW with
//! linear warm-up and linear decay, teacher-forcing cross-entropy, global
//! gradient clipping.
//!
//! Runs are bit-reproducible: batches come from a seeded shuffle, gradient
//! accumulation across a batch reduces in utterance order, and evaluation
//! pools per-utterance results in dataset order.

mod optim;

pub use optim::{adamw_step, clip_global_norm, lr_schedule};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::data::{Dataset, Utterance};
use crate::error::{Result, TgError};
use crate::eval::{evaluate_utts, FeatureCache};
use crate::model::{
    model_forward, model_loss, AudioFeatures, FusionMode, ModelCheckpoint, ModelConfig, Stage,
};
use crate::rng::SeedRng;
use crate::tensor::{FwdCtx, ParamSet};

/// Optimization hyperparameters for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub lr_max: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    /// Held-out evaluation cadence for best-checkpoint selection.
    pub eval_every: u64,
    pub seed: u64,
    pub stage: Stage,
}

impl TrainHyper {
    /// Desk-scale stage-1 budget: minutes on a CPU.
    pub fn desk_stage1(seed: u64) -> Self {
        Self {
            lr_max: 1e-3,
            warmup_steps: 200,
            total_steps: 2000,
            batch_size: 8,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            grad_clip: 1.0,
            eval_every: 200,
            seed,
            stage: Stage::One,
        }
    }

    /// Desk-scale stage-2 budget.
    pub fn desk_stage2(seed: u64) -> Self {
        Self {
            lr_max: 3e-3,
            warmup_steps: 300,
            total_steps: 3000,
            stage: Stage::Two,
            ..Self::desk_stage1(seed)
        }
    }

    /// Reference stage-1 settings of the original full-scale recipe
    /// (batch 4, lr 1.25e-5, 80k steps with 8k warm-up). Not a default.
    pub fn reference_stage1(seed: u64) -> Self {
        Self {
            lr_max: 1.25e-5,
            warmup_steps: 8_000,
            total_steps: 80_000,
            batch_size: 4,
            ..Self::desk_stage1(seed)
        }
    }

    /// Reference stage-2 settings (batch 8, lr 5.0e-5, 180k steps with 30k
    /// warm-up). Not a default.
    pub fn reference_stage2(seed: u64) -> Self {
        Self {
            lr_max: 5.0e-5,
            warmup_steps: 30_000,
            total_steps: 180_000,
            batch_size: 8,
            stage: Stage::Two,
            ..Self::desk_stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_max < 0.0 || !self.lr_max.is_finite() {
            return Err(TgError::Config(
                "train: lr_max must be finite and >= 0".into(),
            ));
        }
        if self.warmup_steps > self.total_steps {
            return Err(TgError::Config(format!(
                "train: warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(TgError::Config("train: batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(TgError::Config("train: eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One log record per training step, plus a step-0 record carrying the
/// initial held-out CER.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub lr: f64,
    /// Batch teacher-forcing loss; absent only on the step-0 record.
    pub loss: Option<f64>,
    /// Held-out CER, present on evaluation steps.
    pub eval_cer: Option<f64>,
    /// tanh gate values in `gate_columns` order; empty when ungated.
    pub gates: Vec<f64>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest held-out CER (ties: earliest step).
    pub best: ModelCheckpoint,
    /// State at the final executed step.
    pub last: ModelCheckpoint,
    pub best_cer: f64,
    pub best_step: u64,
    pub log: Vec<TrainLogRow>,
    /// Column names for `TrainLogRow::gates`.
    pub gate_columns: Vec<String>,
    /// Set when training aborted on a non-finite loss or gradient; `best`
    /// and `last` then hold the last good state.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    /// Fixed comma-separated schema: step, lr, loss, eval_cer, then one
    /// column per gate. Empty cells where a value is absent.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,lr,loss,eval_cer");
        for c in &self.gate_columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for row in &self.log {
            s.push_str(&format!("{},{:.12e}", row.step, row.lr));
            match row.loss {
                Some(l) => s.push_str(&format!(",{l:.12e}")),
                None => s.push(','),
            }
            match row.eval_cer {
                Some(c) => s.push_str(&format!(",{c:.9}")),
                None => s.push(','),
            }
            for g in &row.gates {
                s.push_str(&format!(",{g:.12}"));
            }
            s.push('\n');
        }
        s
    }
}

fn check_compat(cfg: &ModelConfig, ds: &Dataset) -> Result<()> {
    let c = &ds.config;
    if cfg.feature_bins != c.feature_bins {
        return Err(TgError::Config(format!(
            "train: model expects {} feature bins, corpus provides {}",
            cfg.feature_bins, c.feature_bins
        )));
    }
    if cfg.vocab_tgt != c.vocab_tgt() {
        return Err(TgError::Config(format!(
            "train: model vocab {} vs corpus vocab {}",
            cfg.vocab_tgt,
            c.vocab_tgt()
        )));
    }
    if cfg.max_t_s < c.frames_per_token * c.max_len {
        return Err(TgError::Config(format!(
            "train: audio cap {} below corpus maximum {}",
            cfg.max_t_s,
            c.frames_per_token * c.max_len
        )));
    }
    if cfg.max_t_y < c.max_len + 1 {
        return Err(TgError::Config(format!(
            "train: decoder cap {} below corpus maximum {}",
            cfg.max_t_y,
            c.max_len + 1
        )));
    }
    if cfg.fusion_mode != FusionMode::None {
        if c.embed_dim != cfg.d {
            return Err(TgError::Config(format!(
                "train: aux embedding dim {} vs model width {}",
                c.embed_dim, cfg.d
            )));
        }
        for lang in &cfg.langs {
            if !c.languages.iter().any(|l| &l.lang_id == lang) {
                return Err(TgError::Config(format!(
                    "train: corpus has no auxiliary language {lang}"
                )));
            }
        }
    }
    Ok(())
}

/// Stage 1: train every parameter of a fresh unfused model.
pub fn train_stage1(ds: &Dataset, cfg: &ModelConfig, hp: &TrainHyper) -> Result<TrainOutcome> {
    hp.validate()?;
    if hp.stage != Stage::One {
        return Err(TgError::Config(
            "train_stage1: hyperparameters tagged for stage 2".into(),
        ));
    }
    if cfg.fusion_mode != FusionMode::None {
        return Err(TgError::Config(
            "train_stage1: fusion must be none in the first stage".into(),
        ));
    }
    check_compat(cfg, ds)?;
    let init_rng = SeedRng::new(hp.seed).split("init.stage1");
    let ckpt = ModelCheckpoint::init_stage1(cfg, &init_rng)?;
    run_training(ckpt, ds, hp, None)
}

/// Stage 2: extend a stage-1 checkpoint with fusion layers and train only
/// those, with encoder outputs and auxiliary embeddings precomputed (both
/// are frozen).
pub fn train_stage2(
    stage1: &ModelCheckpoint,
    ds: &Dataset,
    fused_cfg: &ModelConfig,
    hp: &TrainHyper,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if hp.stage != Stage::Two {
        return Err(TgError::Config(
            "train_stage2: hyperparameters tagged for stage 1".into(),
        ));
    }
    check_compat(fused_cfg, ds)?;
    let init_rng = SeedRng::new(hp.seed).split("init.stage2");
    let ckpt = stage1.to_stage2(fused_cfg, &init_rng)?;
    let all: Vec<&Utterance> = ds.train.iter().chain(ds.test.iter()).collect();
    let cache = FeatureCache::build(&ckpt, &ds.config, &all)?;
    run_training(ckpt, ds, hp, Some(cache))
}

fn gate_columns(cfg: &ModelConfig) -> Vec<String> {
    if !cfg.fusion_mode.has_gates() {
        return Vec::new();
    }
    let mut cols = Vec::new();
    for b in 0..cfg.n_dec {
        for lang in &cfg.langs {
            cols.push(format!("gate_l{b}_{lang}"));
        }
        cols.push(format!("gate_l{b}_fnn"));
    }
    cols
}

fn gate_values(ckpt: &ModelCheckpoint) -> Vec<f64> {
    if !ckpt.config.fusion_mode.has_gates() {
        return Vec::new();
    }
    let mut vals = Vec::new();
    for b in 0..ckpt.config.n_dec {
        for l in 0..ckpt.config.l() {
            let a = ckpt
                .params
                .get(&format!("dec.b{b}.pgca.alpha_attn{l}"))
                .expect("gate parameter exists")
                .data()[0];
            vals.push(a.tanh());
        }
        let a = ckpt
            .params
            .get(&format!("dec.b{b}.pgca.alpha_fnn"))
            .expect("fnn gate exists")
            .data()[0];
        vals.push(a.tanh());
    }
    vals
}

type UttGrads = (BTreeMap<String, Vec<f64>>, f64, usize);

fn utterance_grads(
    params: &ParamSet,
    cfg: &ModelConfig,
    stage: Stage,
    trainable: &BTreeSet<String>,
    u: &Utterance,
    cache: Option<&FeatureCache>,
) -> Result<UttGrads> {
    let mut ctx = FwdCtx::new(params, Some(trainable));
    let (audio, aux): (AudioFeatures, Vec<crate::tensor::Tensor>) = match cache {
        Some(c) => {
            let h =
                c.h.get(&u.id)
                    .ok_or_else(|| TgError::Invalid(format!("cache missing utterance {}", u.id)))?;
            (
                AudioFeatures::Encoded(h),
                c.aux.get(&u.id).cloned().unwrap_or_default(),
            )
        }
        None => (AudioFeatures::Raw(&u.audio), Vec::new()),
    };
    let out = model_forward(&mut ctx, cfg, stage, &u.target, audio, &aux, false)?;
    let (loss, positions) = model_loss(&mut ctx, cfg, out.logits, &u.target)?;
    let nll = ctx.tape.value(loss).data()[0];
    ctx.tape.backward(loss)?;

    let mut grads = BTreeMap::new();
    for name in trainable {
        let g = match ctx.grad_of(name) {
            Some(g) => g.to_vec(),
            // A trainable parameter outside this forward's graph still gets
            // a zero gradient so weight decay applies uniformly.
            None => vec![0.0; params.get(name)?.numel()],
        };
        grads.insert(name.clone(), g);
    }
    Ok((grads, nll, positions))
}

fn run_training(
    mut ckpt: ModelCheckpoint,
    ds: &Dataset,
    hp: &TrainHyper,
    cache: Option<FeatureCache>,
) -> Result<TrainOutcome> {
    if ds.train.is_empty() && hp.total_steps > 0 {
        return Err(TgError::Invalid("train: empty training split".into()));
    }
    if ds.test.is_empty() {
        return Err(TgError::Invalid(
            "train: empty test split (needed for best-checkpoint selection)".into(),
        ));
    }
    let trainable_list = ckpt.trainable();
    let trainable: BTreeSet<String> = trainable_list.iter().cloned().collect();
    let frozen_names = ckpt.frozen.clone();
    let frozen_snapshot = ckpt.params.clone();

    let test_refs: Vec<&Utterance> = ds.test.iter().collect();
    let evaluate_now = |ckpt: &ModelCheckpoint| -> Result<f64> {
        Ok(evaluate_utts(ckpt, &ds.config, &test_refs, cache.as_ref())?.cer)
    };

    let cols = gate_columns(&ckpt.config);
    let mut log: Vec<TrainLogRow> = Vec::with_capacity(hp.total_steps as usize + 1);

    let cer0 = evaluate_now(&ckpt)?;
    log.push(TrainLogRow {
        step: 0,
        lr: 0.0,
        loss: None,
        eval_cer: Some(cer0),
        gates: gate_values(&ckpt),
    });
    let mut best = ckpt.clone();
    let mut best_cer = cer0;
    let mut best_step = 0u64;
    let mut diverged = None;

    let shuffle_rng = SeedRng::new(hp.seed).split(match hp.stage {
        Stage::One => "shuffle.stage1",
        Stage::Two => "shuffle.stage2",
    });

    let mut epoch = 0u64;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    'steps: for step in 1..=hp.total_steps {
        // Assemble the next batch, reshuffling at epoch boundaries.
        let mut batch: Vec<&Utterance> = Vec::with_capacity(hp.batch_size);
        while batch.len() < hp.batch_size {
            if cursor >= order.len() {
                order = shuffle_rng
                    .split_idx("epoch", epoch)
                    .permutation(ds.train.len());
                epoch += 1;
                cursor = 0;
                if !batch.is_empty() {
                    break; // Short batch at the epoch boundary.
                }
            }
            batch.push(&ds.train[order[cursor]]);
            cursor += 1;
        }

        let results: Vec<Result<UttGrads>> = batch
            .par_iter()
            .map(|u| {
                utterance_grads(
                    &ckpt.params,
                    &ckpt.config,
                    ckpt.stage,
                    &trainable,
                    u,
                    cache.as_ref(),
                )
            })
            .collect();

        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut nll_total = 0.0;
        let mut pos_total = 0usize;
        for r in results {
            let (g, nll, pos) = match r {
                Ok(v) => v,
                Err(TgError::NonFinite(d)) => {
                    diverged = Some(format!("step {step}: {d}"));
                    break 'steps;
                }
                Err(e) => return Err(e),
            };
            nll_total += nll;
            pos_total += pos;
            for (name, gv) in g {
                match grads.get_mut(&name) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&gv) {
                            *a += b;
                        }
                    }
                    None => {
                        grads.insert(name, gv);
                    }
                }
            }
        }
        let loss = nll_total / pos_total as f64;
        if !loss.is_finite() {
            diverged = Some(format!("step {step}: loss = {loss}"));
            break 'steps;
        }
        let inv = 1.0 / pos_total as f64;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
        clip_global_norm(&mut grads, hp.grad_clip);

        let lr = lr_schedule(step, hp);
        match adamw_step(&mut ckpt.params, &grads, &mut ckpt.opt, hp, lr) {
            Ok(()) => {}
            Err(TgError::Diverged { detail, .. }) => {
                diverged = Some(format!("step {step}: {detail}"));
                break 'steps;
            }
            Err(e) => return Err(e),
        }
        ckpt.step = step;

        // Freezing contract: untouched bits, checked every step in debug.
        #[cfg(debug_assertions)]
        assert!(
            ckpt.params.bits_equal(&frozen_snapshot, &frozen_names),
            "frozen parameter changed at step {step}"
        );

        let eval_cer = if step % hp.eval_every == 0 || step == hp.total_steps {
            let cer = evaluate_now(&ckpt)?;
            if cer < best_cer {
                best_cer = cer;
                best_step = step;
                best = ckpt.clone();
            }
            Some(cer)
        } else {
            None
        };

        log.push(TrainLogRow {
            step,
            lr,
            loss: Some(loss),
            eval_cer,
            gates: gate_values(&ckpt),
        });
    }

    // Release-mode final verification of the freezing contract.
    if !ckpt.params.bits_equal(&frozen_snapshot, &frozen_names) {
        return Err(TgError::Invalid(
            "frozen parameters changed during training".into(),
        ));
    }

    Ok(TrainOutcome {
        best,
        last: ckpt,
        best_cer,
        best_step,
        log,
        gate_columns: cols,
        diverged,
    })
}

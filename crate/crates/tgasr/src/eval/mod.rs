//! Recognition metrics and analysis: token error rate with edit-operation
//! decomposition, teacher-forcing evaluation, gate extraction, attention
//! heatmaps, selection strategies, and the incremental-language sweep.
//!
//! Everything here is read-only over checkpoints and datasets and
//! embarrassingly parallel across utterances; per-utterance results are
//! pooled in dataset order so reports are deterministic.

mod gates;
mod heatmap;
mod select;
mod sweep;

pub use gates::{extract_gates, GateReport, LayerGates};
pub use heatmap::{attention_heatmap, Heatmap};
pub use select::{select_topk, SelectionMetric};
pub use sweep::{curve_csv, incremental_experiment, IncrementalPoint};

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::aux_embed::{embed_aux, TokenSeq};
use crate::data::{CorpusConfig, Dataset, Utterance};
use crate::error::{Result, TgError};
use crate::model::{
    encode_audio, model_forward, AudioFeatures, FusionMode, ModelCheckpoint, Stage,
};
use crate::tensor::{FwdCtx, Tensor};

/// Edit-distance decomposition for one reference/hypothesis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CerEntry {
    pub utt_id: u64,
    pub ref_chars: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub cer: f64,
}

/// Corpus-level report: micro-averaged (edits pooled, then divided).
#[derive(Debug, Clone, PartialEq)]
pub struct CerReport {
    pub cer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_chars: usize,
    pub per_utt: Vec<CerEntry>,
}

impl CerReport {
    pub fn from_entries(per_utt: Vec<CerEntry>) -> Result<CerReport> {
        if per_utt.is_empty() {
            return Err(TgError::Invalid("evaluate: empty dataset".into()));
        }
        let substitutions = per_utt.iter().map(|e| e.substitutions).sum();
        let deletions = per_utt.iter().map(|e| e.deletions).sum();
        let insertions = per_utt.iter().map(|e| e.insertions).sum();
        let ref_chars: usize = per_utt.iter().map(|e| e.ref_chars).sum();
        Ok(CerReport {
            cer: (substitutions + deletions + insertions) as f64 / ref_chars as f64,
            substitutions,
            deletions,
            insertions,
            ref_chars,
            per_utt,
        })
    }

    /// Fixed-schema table: per-utterance rows plus a total row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("utt_id,ref_chars,substitutions,deletions,insertions,cer\n");
        for e in &self.per_utt {
            s.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                e.utt_id, e.ref_chars, e.substitutions, e.deletions, e.insertions, e.cer
            ));
        }
        s.push_str(&format!(
            "total,{},{},{},{},{:.6}\n",
            self.ref_chars, self.substitutions, self.deletions, self.insertions, self.cer
        ));
        s
    }
}

/// Relative reduction of `new` versus `base`, as a fraction: (base-new)/base.
pub fn relative_reduction(base: f64, new: f64) -> f64 {
    (base - new) / base
}

/// Minimum-edit-distance error rate with unit costs, decomposed into
/// substitutions/deletions/insertions by backtrace. Ties break substitution
/// over deletion over insertion, so decompositions are deterministic.
pub fn cer(reference: &[u32], hypothesis: &[u32]) -> Result<CerEntry> {
    if reference.is_empty() {
        return Err(TgError::Invalid("cer: empty reference".into()));
    }
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dp[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dp[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[idx(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dp[idx(i - 1, j)] + 1;
            let ins = dp[idx(i, j - 1)] + 1;
            dp[idx(i, j)] = sub.min(del).min(ins);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut s, mut d, mut ins) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        let here = dp[idx(i, j)];
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dp[idx(i - 1, j - 1)] + cost == here {
                s += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[idx(i - 1, j)] + 1 == here {
            d += 1;
            i -= 1;
            continue;
        }
        ins += 1;
        j -= 1;
    }

    Ok(CerEntry {
        utt_id: 0,
        ref_chars: n,
        substitutions: s,
        deletions: d,
        insertions: ins,
        cer: (s + d + ins) as f64 / n as f64,
    })
}

/// Frozen features reusable across many forwards of one stage-2 checkpoint:
/// encoder outputs and auxiliary embeddings per utterance. Valid only while
/// the encoder and embedder stay frozen (stage 2 guarantees both).
#[derive(Debug, Default)]
pub struct FeatureCache {
    pub h: BTreeMap<u64, Tensor>,
    pub aux: BTreeMap<u64, Vec<Tensor>>,
}

impl FeatureCache {
    /// Precompute for every listed utterance, in parallel.
    pub fn build(
        ckpt: &ModelCheckpoint,
        corpus: &CorpusConfig,
        utts: &[&Utterance],
    ) -> Result<FeatureCache> {
        let specs: Vec<_> = ckpt
            .config
            .langs
            .iter()
            .map(|l| corpus.language_spec(l))
            .collect::<Result<Vec<_>>>()?;
        let entries: Vec<(u64, Tensor, Vec<Tensor>)> = utts
            .par_iter()
            .map(|u| -> Result<(u64, Tensor, Vec<Tensor>)> {
                let mut ctx = FwdCtx::new(&ckpt.params, None);
                let h = encode_audio(&mut ctx, &ckpt.config, &u.audio)?;
                let h = ctx.tape.value(h).clone();
                let mut aux = Vec::with_capacity(specs.len());
                for spec in &specs {
                    let seq = u.aux.get(&spec.lang_id).ok_or_else(|| {
                        TgError::Invalid(format!(
                            "utterance {} is missing language {}",
                            u.id, spec.lang_id
                        ))
                    })?;
                    aux.push(embed_aux(seq, spec)?.e);
                }
                Ok((u.id, h, aux))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cache = FeatureCache::default();
        for (id, h, aux) in entries {
            cache.h.insert(id, h);
            cache.aux.insert(id, aux);
        }
        Ok(cache)
    }
}

/// Embed the aux streams a checkpoint needs for one utterance, in branch
/// order.
pub fn aux_streams_for(
    ckpt: &ModelCheckpoint,
    corpus: &CorpusConfig,
    u: &Utterance,
) -> Result<Vec<Tensor>> {
    if ckpt.stage != Stage::Two || ckpt.config.fusion_mode == FusionMode::None {
        return Ok(Vec::new());
    }
    ckpt.config
        .langs
        .iter()
        .map(|l| {
            let spec = corpus.language_spec(l)?;
            let seq = u.aux.get(l).ok_or_else(|| {
                TgError::Invalid(format!("utterance {} is missing language {l}", u.id))
            })?;
            Ok(embed_aux(seq, &spec)?.e)
        })
        .collect()
}

fn logits_for(
    ckpt: &ModelCheckpoint,
    teacher: &[u32],
    audio: AudioFeatures,
    aux: &[Tensor],
) -> Result<Tensor> {
    let mut ctx = FwdCtx::new(&ckpt.params, None);
    let out = model_forward(
        &mut ctx,
        &ckpt.config,
        ckpt.stage,
        teacher,
        audio,
        aux,
        false,
    )?;
    Ok(ctx.tape.value(out.logits).clone())
}

fn argmax_row(logits: &Tensor, row: usize) -> u32 {
    let v = logits.cols();
    let data = &logits.data()[row * v..(row + 1) * v];
    let mut best = 0usize;
    for (c, &val) in data.iter().enumerate() {
        // Strict comparison keeps the lowest index on ties.
        if val > data[best] {
            best = c;
        }
    }
    best as u32
}

/// Hypothesis under teacher forcing: position t conditions on the ground
/// truth prefix; the prediction is the per-position argmax (ties to the
/// lowest token id). Returns |target| tokens; the trailing EOS slot is not
/// part of the transcription.
pub fn teacher_forcing_decode(
    ckpt: &ModelCheckpoint,
    corpus: &CorpusConfig,
    u: &Utterance,
) -> Result<TokenSeq> {
    let aux = aux_streams_for(ckpt, corpus, u)?;
    teacher_forcing_decode_cached(ckpt, u, AudioFeatures::Raw(&u.audio), &aux)
}

pub(crate) fn teacher_forcing_decode_cached(
    ckpt: &ModelCheckpoint,
    u: &Utterance,
    audio: AudioFeatures,
    aux: &[Tensor],
) -> Result<TokenSeq> {
    let logits = logits_for(ckpt, &u.target, audio, aux)?;
    Ok((0..u.target.len())
        .map(|t| argmax_row(&logits, t))
        .collect())
}

/// Free-running greedy decode: feed the model its own argmax outputs until
/// it emits EOS or hits the length cap.
pub fn free_running_decode(
    ckpt: &ModelCheckpoint,
    corpus: &CorpusConfig,
    u: &Utterance,
) -> Result<TokenSeq> {
    let aux = aux_streams_for(ckpt, corpus, u)?;
    let mut hyp: TokenSeq = Vec::new();
    for _ in 0..ckpt.config.max_t_y - 1 {
        let logits = logits_for(ckpt, &hyp, AudioFeatures::Raw(&u.audio), &aux)?;
        let next = argmax_row(&logits, hyp.len());
        if next == ckpt.config.eos() {
            break;
        }
        hyp.push(next);
    }
    Ok(hyp)
}

/// Corpus CER under teacher forcing, micro-averaged over the split.
pub fn evaluate(ckpt: &ModelCheckpoint, ds: &Dataset, split: &str) -> Result<CerReport> {
    let utts = ds.split(split)?;
    let refs: Vec<&Utterance> = utts.iter().collect();
    evaluate_utts(ckpt, &ds.config, &refs, None)
}

/// Same, over explicit utterances with an optional frozen-feature cache.
pub fn evaluate_utts(
    ckpt: &ModelCheckpoint,
    corpus: &CorpusConfig,
    utts: &[&Utterance],
    cache: Option<&FeatureCache>,
) -> Result<CerReport> {
    if utts.is_empty() {
        return Err(TgError::Invalid("evaluate: empty dataset".into()));
    }
    let entries: Vec<CerEntry> = utts
        .par_iter()
        .map(|u| -> Result<CerEntry> {
            let hyp = match cache {
                Some(c) => {
                    let h = c.h.get(&u.id).ok_or_else(|| {
                        TgError::Invalid(format!("cache missing utterance {}", u.id))
                    })?;
                    let aux = c.aux.get(&u.id).cloned().unwrap_or_default();
                    teacher_forcing_decode_cached(ckpt, u, AudioFeatures::Encoded(h), &aux)?
                }
                None => {
                    let aux = aux_streams_for(ckpt, corpus, u)?;
                    teacher_forcing_decode_cached(ckpt, u, AudioFeatures::Raw(&u.audio), &aux)?
                }
            };
            let mut entry = cer(&u.target, &hyp)?;
            entry.utt_id = u.id;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    CerReport::from_entries(entries)
}

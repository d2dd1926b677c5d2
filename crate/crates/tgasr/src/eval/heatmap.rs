//! Cross-lingual attention heatmaps from the fusion branches.

use crate::data::{CorpusConfig, Utterance};
use crate::error::{Result, TgError};
use crate::eval::aux_streams_for;
use crate::model::{model_forward, AudioFeatures, ModelCheckpoint};
use crate::tensor::{FwdCtx, Tensor};

/// Head-averaged fusion attention for one (utterance, layer, language):
/// rows are decoder positions, columns auxiliary tokens, each row a
/// probability distribution.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub layer: usize,
    pub lang: String,
    pub utt_id: u64,
    pub matrix: Tensor,
    pub dec_tokens: Vec<String>,
    pub aux_tokens: Vec<String>,
}

impl Heatmap {
    /// Comma-separated matrix with token labels on both axes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dec\\aux");
        for t in &self.aux_tokens {
            s.push(',');
            s.push_str(t);
        }
        s.push('\n');
        let (rows, cols) = (self.matrix.shape()[0], self.matrix.shape()[1]);
        for r in 0..rows {
            s.push_str(&self.dec_tokens[r]);
            for c in 0..cols {
                s.push_str(&format!(",{:.9}", self.matrix.at2(r, c)));
            }
            s.push('\n');
        }
        s
    }

    /// Fraction of comparable rows whose argmax sits on the diagonal.
    pub fn diagonal_fraction(&self) -> f64 {
        let (rows, cols) = (self.matrix.shape()[0], self.matrix.shape()[1]);
        let n = rows.min(cols);
        let mut hits = 0usize;
        for r in 0..n {
            let mut best = 0usize;
            for c in 0..cols {
                if self.matrix.at2(r, c) > self.matrix.at2(r, best) {
                    best = c;
                }
            }
            if best == r {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    }
}

/// Extract the fusion branch attention for `(layer, lang)` on one utterance,
/// averaged over heads. Requires a gated fusion mode (the pooled baselines
/// have no attention to visualize).
pub fn attention_heatmap(
    ckpt: &ModelCheckpoint,
    corpus: &CorpusConfig,
    u: &Utterance,
    layer: usize,
    lang: &str,
) -> Result<Heatmap> {
    if !ckpt.config.fusion_mode.has_gates() {
        return Err(TgError::Invalid(format!(
            "attention_heatmap: fusion mode {} has no attention branches",
            ckpt.config.fusion_mode
        )));
    }
    if layer >= ckpt.config.n_dec {
        return Err(TgError::Invalid(format!(
            "attention_heatmap: layer {layer} out of range ({} decoder blocks)",
            ckpt.config.n_dec
        )));
    }
    let lang_idx = ckpt
        .config
        .langs
        .iter()
        .position(|l| l == lang)
        .ok_or_else(|| {
            TgError::Invalid(format!(
                "attention_heatmap: language {lang} not in {:?}",
                ckpt.config.langs
            ))
        })?;

    let aux = aux_streams_for(ckpt, corpus, u)?;
    let mut ctx = FwdCtx::new(&ckpt.params, None);
    let out = model_forward(
        &mut ctx,
        &ckpt.config,
        ckpt.stage,
        &u.target,
        AudioFeatures::Raw(&u.audio),
        &aux,
        true,
    )?;
    let trace = out
        .trace
        .ok_or_else(|| TgError::Invalid("attention_heatmap: trace missing".into()))?;
    let matrix = trace.pgca_attn[layer][lang_idx].head_mean();

    for r in 0..matrix.shape()[0] {
        let sum: f64 = (0..matrix.shape()[1]).map(|c| matrix.at2(r, c)).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TgError::Invalid(format!(
                "attention_heatmap: row {r} sums to {sum}"
            )));
        }
    }

    let mut dec_tokens = vec!["<bos>".to_string()];
    dec_tokens.extend(u.target.iter().map(|t| format!("s{t}")));
    let aux_tokens = u
        .aux
        .get(lang)
        .ok_or_else(|| TgError::Invalid(format!("utterance {} is missing language {lang}", u.id)))?
        .iter()
        .map(|t| format!("t{t}"))
        .collect();

    Ok(Heatmap {
        layer,
        lang: lang.to_string(),
        utt_id: u.id,
        matrix,
        dec_tokens,
        aux_tokens,
    })
}

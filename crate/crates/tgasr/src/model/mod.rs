//! The encoder–decoder recognizer with parallel gated cross-attention
//! fusion of auxiliary-language embedding streams.
//!
//! Stage 1 trains the plain encoder/decoder on audio alone; stage 2 bolts a
//! fusion layer onto the start of every decoder block and trains only those
//! parameters, with everything else frozen.

mod checkpoint;
mod decoder;
mod encoder;
mod params;
mod pgca;

pub use checkpoint::{
    freeze_plan, load_checkpoint, save_checkpoint, ModelCheckpoint, OptState, Stage,
};
pub use decoder::{
    decoder_block_forward, model_forward, model_loss, AudioFeatures, ForwardOutput, ModelTrace,
};
pub use encoder::encode_audio;
pub use params::{feed_forward, init_pgca_params, init_stage1_params};
pub use pgca::{pgca_forward, pgca_variant_forward, PgcaParams};

use crate::error::{Result, TgError};

/// How auxiliary streams are fused into the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Parallel gated branches plus a gated feedforward (the full mechanism).
    FullPgca,
    /// Gates kept learnable but applied raw, without the tanh squashing.
    NoTanh,
    /// Branches applied in language order as a chain instead of in parallel.
    Sequential,
    /// One shared set of attention projections across languages; gates stay
    /// per-language.
    Shared,
    /// Mean-pool each stream, project per language, broadcast-add.
    Addition,
    /// Mean-pool each stream, concatenate, project once, broadcast-add.
    Concatenation,
    /// No fusion at all (stage-1 baseline).
    None,
}

impl FusionMode {
    pub const ALL_FUSED: [FusionMode; 6] = [
        FusionMode::FullPgca,
        FusionMode::NoTanh,
        FusionMode::Sequential,
        FusionMode::Shared,
        FusionMode::Addition,
        FusionMode::Concatenation,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "full_pgca" => FusionMode::FullPgca,
            "no_tanh" => FusionMode::NoTanh,
            "sequential" => FusionMode::Sequential,
            "shared" => FusionMode::Shared,
            "addition" => FusionMode::Addition,
            "concatenation" => FusionMode::Concatenation,
            "none" => FusionMode::None,
            other => {
                return Err(TgError::Config(format!(
                    "unknown fusion mode {other:?} (expected full_pgca, no_tanh, sequential, shared, addition, concatenation, or none)"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::FullPgca => "full_pgca",
            FusionMode::NoTanh => "no_tanh",
            FusionMode::Sequential => "sequential",
            FusionMode::Shared => "shared",
            FusionMode::Addition => "addition",
            FusionMode::Concatenation => "concatenation",
            FusionMode::None => "none",
        }
    }

    /// Modes with learnable scalar gates (tanh-reportable).
    pub fn has_gates(&self) -> bool {
        matches!(
            self,
            FusionMode::FullPgca | FusionMode::NoTanh | FusionMode::Sequential | FusionMode::Shared
        )
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters plus the fusion configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Model width.
    pub d: usize,
    /// Input feature bins (F).
    pub feature_bins: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    /// Target vocabulary including BOS and EOS.
    pub vocab_tgt: usize,
    pub max_t_s: usize,
    pub max_t_y: usize,
    pub fusion_mode: FusionMode,
    /// Auxiliary language ids in branch order. Empty iff fusion is none.
    pub langs: Vec<String>,
}

impl ModelConfig {
    /// Desk-scale defaults; fusion configured separately.
    pub fn desk_default(fusion_mode: FusionMode, langs: Vec<String>) -> Self {
        Self {
            d: 32,
            feature_bins: 16,
            heads: 2,
            d_ff: 64,
            n_enc: 2,
            n_dec: 2,
            vocab_tgt: 34,
            max_t_s: 28,
            max_t_y: 14,
            fusion_mode,
            langs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(TgError::Config(format!(
                "model: width {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.vocab_tgt < 3 {
            return Err(TgError::Config(
                "model: vocabulary must hold at least one symbol plus BOS/EOS".into(),
            ));
        }
        match self.fusion_mode {
            FusionMode::None if !self.langs.is_empty() => Err(TgError::Config(
                "model: fusion mode none cannot list auxiliary languages".into(),
            )),
            m if m != FusionMode::None && self.langs.is_empty() => Err(TgError::Config(format!(
                "model: fusion mode {m} needs at least one auxiliary language"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of auxiliary languages (L).
    pub fn l(&self) -> usize {
        self.langs.len()
    }

    /// Symbol count (vocabulary without BOS/EOS).
    pub fn n_symbols(&self) -> usize {
        self.vocab_tgt - 2
    }

    pub fn bos(&self) -> u32 {
        (self.vocab_tgt - 2) as u32
    }

    pub fn eos(&self) -> u32 {
        (self.vocab_tgt - 1) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_mode_roundtrip() {
        for m in FusionMode::ALL_FUSED
            .iter()
            .chain([FusionMode::None].iter())
        {
            assert_eq!(FusionMode::parse(m.as_str()).unwrap(), *m);
        }
        assert!(FusionMode::parse("bogus").is_err());
    }

    #[test]
    fn config_validation() {
        let ok = ModelConfig::desk_default(FusionMode::None, vec![]);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.n_symbols(), 32);
        assert_eq!(ok.bos(), 32);
        assert_eq!(ok.eos(), 33);

        let bad = ModelConfig {
            heads: 3,
            ..ModelConfig::desk_default(FusionMode::None, vec![])
        };
        assert!(bad.validate().is_err());

        let fused_no_lang = ModelConfig::desk_default(FusionMode::FullPgca, vec![]);
        assert!(fused_no_lang.validate().is_err());

        let none_with_lang = ModelConfig::desk_default(FusionMode::None, vec!["x".into()]);
        assert!(none_with_lang.validate().is_err());
    }
}

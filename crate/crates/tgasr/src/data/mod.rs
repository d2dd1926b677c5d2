//! Synthetic controllable corpus.
//!
//! Each utterance pairs a random symbol sequence with audio-like features
//! (per-symbol prototype frames plus Gaussian noise) and one noisy cipher
//! "translation" per auxiliary language. Noise rates emulate translation
//! quality. Generation is deterministic given the master seed and
//! partitionable by utterance id.

mod io;

pub use io::{load_dataset, save_dataset};

use std::collections::BTreeMap;

use crate::aux_embed::{AuxLanguageSpec, TokenSeq};
use crate::error::{Result, TgError};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Nominal seconds per feature frame, used only to report a duration
/// equivalent in corpus summaries (standard 10 ms hop).
pub const FRAME_SECONDS: f64 = 0.01;

/// Per-language knobs of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageConfig {
    pub lang_id: String,
    pub noise_rate: f64,
    pub offset_scale: f64,
    pub swap_rate: f64,
}

/// Everything needed to regenerate a corpus bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Target symbol count (decoder vocabulary adds BOS and EOS on top).
    pub n_symbols: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub audio_noise: f64,
    pub frames_per_token: usize,
    pub feature_bins: usize,
    /// Dimension of the frozen auxiliary embeddings (must match the model).
    pub embed_dim: usize,
    pub languages: Vec<LanguageConfig>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 400,
            n_symbols: 32,
            min_len: 4,
            max_len: 12,
            audio_noise: 0.3,
            frames_per_token: 2,
            feature_bins: 16,
            embed_dim: 32,
            languages: Vec::new(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_symbols < 2 {
            return Err(TgError::Config("corpus: need at least 2 symbols".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(TgError::Config(format!(
                "corpus: bad length range {}..{}",
                self.min_len, self.max_len
            )));
        }
        if self.frames_per_token == 0 || self.feature_bins == 0 || self.embed_dim == 0 {
            return Err(TgError::Config("corpus: zero-sized dimensions".into()));
        }
        if self.audio_noise < 0.0 {
            return Err(TgError::Config("corpus: negative audio noise".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.languages {
            if !seen.insert(l.lang_id.clone()) {
                return Err(TgError::Config(format!(
                    "corpus: duplicate language id {}",
                    l.lang_id
                )));
            }
            if !(0.0..=1.0).contains(&l.noise_rate) || !(0.0..=1.0).contains(&l.swap_rate) {
                return Err(TgError::Config(format!(
                    "corpus: language {} rates must lie in [0,1]",
                    l.lang_id
                )));
            }
        }
        Ok(())
    }

    /// Decoder vocabulary: symbols plus BOS and EOS.
    pub fn vocab_tgt(&self) -> usize {
        self.n_symbols + 2
    }

    /// Root random stream for everything derived from this corpus.
    pub fn root_rng(&self) -> SeedRng {
        SeedRng::new(self.seed).split("corpus")
    }

    /// Frozen embedder spec for one auxiliary language.
    pub fn language_spec(&self, lang_id: &str) -> Result<AuxLanguageSpec> {
        let lc = self
            .languages
            .iter()
            .find(|l| l.lang_id == lang_id)
            .ok_or_else(|| TgError::Invalid(format!("unknown language {lang_id}")))?;
        AuxLanguageSpec::synth(
            &lc.lang_id,
            self.n_symbols,
            self.embed_dim,
            lc.noise_rate,
            lc.offset_scale,
            lc.swap_rate,
            &self.root_rng(),
        )
    }

    /// Frozen embedder spec for the target language (proximity reference).
    pub fn target_spec(&self) -> Result<AuxLanguageSpec> {
        AuxLanguageSpec::target(self.n_symbols, self.embed_dim, &self.root_rng())
    }

    /// Fixed per-symbol audio prototype vectors (unit norm, F dims).
    pub fn prototypes(&self) -> Tensor {
        let mut rng = self.root_rng().split("audio.protos");
        let f = self.feature_bins;
        let mut data = vec![0.0; self.n_symbols * f];
        for s in 0..self.n_symbols {
            let row = &mut data[s * f..(s + 1) * f];
            let mut norm = 0.0;
            for v in row.iter_mut() {
                *v = rng.normal();
                norm += *v * *v;
            }
            let norm = norm.sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Tensor::new(vec![self.n_symbols, f], data).expect("finite prototypes")
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: u64,
    /// [frames_per_token·|target| × feature_bins]
    pub audio: Tensor,
    pub target: TokenSeq,
    /// lang_id -> noisy cipher translation, same length as target.
    pub aux: BTreeMap<String, TokenSeq>,
}

/// Generated corpus with disjoint train/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: CorpusConfig,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[Utterance]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(TgError::Invalid(format!("unknown split {other}"))),
        }
    }
}

/// Emit the audio features for a target sequence: each symbol contributes
/// `frames_per_token` copies of its prototype plus iid Gaussian noise.
pub fn synth_audio(
    target: &[u32],
    protos: &Tensor,
    cfg: &CorpusConfig,
    rng: &mut SeedRng,
) -> Result<Tensor> {
    let f = cfg.feature_bins;
    let mut data = Vec::with_capacity(target.len() * cfg.frames_per_token * f);
    for &sym in target {
        if sym as usize >= cfg.n_symbols {
            return Err(TgError::Invalid(format!(
                "synth_audio: symbol {sym} outside vocab {}",
                cfg.n_symbols
            )));
        }
        let proto = &protos.data()[sym as usize * f..(sym as usize + 1) * f];
        for _ in 0..cfg.frames_per_token {
            for &p in proto {
                data.push(p + cfg.audio_noise * rng.normal());
            }
        }
    }
    Tensor::new(vec![target.len() * cfg.frames_per_token, f], data)
}

/// Cipher the target tokenwise, then independently corrupt each position
/// with probability `noise_rate` by substituting a uniformly random
/// *different* token; optionally apply non-overlapping local swaps.
pub fn translate_aux(
    target: &[u32],
    spec: &AuxLanguageSpec,
    rng: &mut SeedRng,
) -> Result<TokenSeq> {
    let mut out = spec.cipher(target)?;
    let v = spec.vocab as u64;
    for tok in out.iter_mut() {
        if rng.uniform() < spec.noise_rate {
            let offset = 1 + rng.below(v - 1);
            *tok = ((*tok as u64 + offset) % v) as u32;
        }
    }
    if spec.swap_rate > 0.0 {
        let mut i = 0;
        while i + 1 < out.len() {
            if rng.uniform() < spec.swap_rate {
                out.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
    }
    Ok(out)
}

fn gen_utterance(
    id: u64,
    cfg: &CorpusConfig,
    protos: &Tensor,
    specs: &[AuxLanguageSpec],
    root: &SeedRng,
) -> Result<Utterance> {
    let urng = root.split_idx("utt", id);
    let mut trng = urng.split("target");
    let len = cfg.min_len + trng.below((cfg.max_len - cfg.min_len + 1) as u64) as usize;
    let target: TokenSeq = (0..len)
        .map(|_| trng.below(cfg.n_symbols as u64) as u32)
        .collect();

    let mut arng = urng.split("audio");
    let audio = synth_audio(&target, protos, cfg, &mut arng)?;

    let mut aux = BTreeMap::new();
    for spec in specs {
        let mut lrng = urng.split(&format!("aux.{}", spec.lang_id));
        aux.insert(
            spec.lang_id.clone(),
            translate_aux(&target, spec, &mut lrng)?,
        );
    }
    Ok(Utterance {
        id,
        audio,
        target,
        aux,
    })
}

/// Generate the full corpus. Train ids are 0..n_train, test ids continue
/// from n_train, so the splits are disjoint by construction.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = cfg.root_rng();
    let protos = cfg.prototypes();
    let specs: Vec<AuxLanguageSpec> = cfg
        .languages
        .iter()
        .map(|l| cfg.language_spec(&l.lang_id))
        .collect::<Result<_>>()?;

    let gen_range = |from: u64, count: usize| -> Result<Vec<Utterance>> {
        (0..count)
            .map(|i| gen_utterance(from + i as u64, cfg, &protos, &specs, &root))
            .collect()
    };
    Ok(Dataset {
        config: cfg.clone(),
        train: gen_range(0, cfg.n_train)?,
        test: gen_range(cfg.n_train as u64, cfg.n_test)?,
    })
}

/// Corpus statistics in the usual split/duration/utterance layout.
#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub split: String,
    pub utterances: usize,
    pub frames: usize,
    pub hours_equiv: f64,
}

pub fn summarize(ds: &Dataset) -> CorpusSummary {
    let row = |name: &str, utts: &[Utterance]| {
        let frames: usize = utts.iter().map(|u| u.audio.shape()[0]).sum();
        SummaryRow {
            split: name.to_string(),
            utterances: utts.len(),
            frames,
            hours_equiv: frames as f64 * FRAME_SECONDS / 3600.0,
        }
    };
    let train = row("train", &ds.train);
    let test = row("test", &ds.test);
    let total = SummaryRow {
        split: "total".to_string(),
        utterances: train.utterances + test.utterances,
        frames: train.frames + test.frames,
        hours_equiv: train.hours_equiv + test.hours_equiv,
    };
    CorpusSummary {
        rows: vec![train, test, total],
    }
}

impl CorpusSummary {
    /// Plain-text table: split, utterances, frames, frame-hours equivalent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,utterances,frames,hours_equiv\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.6}\n",
                r.split, r.utterances, r.frames, r.hours_equiv
            ));
        }
        s
    }
}

//! Experiment configuration: a flat, line-oriented `key = value` format with
//! `[sections]`, strict parsing (unknown sections or keys are errors), and a
//! canonical resolved dump that echoes every effective value and re-parses
//! to an identical configuration.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::{CorpusConfig, LanguageConfig};
use crate::error::{Result, TgError};
use crate::model::{FusionMode, ModelConfig, Stage};
use crate::training::TrainHyper;

/// Architecture knobs exposed in the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub n_enc: usize,
    pub n_dec: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 2,
            d_ff: 64,
            n_enc: 2,
            n_dec: 2,
        }
    }
}

/// Fully resolved experiment: (config, seed) determines a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub fusion_mode: FusionMode,
    /// Auxiliary-language subset and order used by fused stages.
    pub languages: Vec<String>,
    /// Decoder layer for heatmap exports (resolved; default last).
    pub heatmap_layer: usize,
    /// Language for heatmap exports (default first configured).
    pub heatmap_lang: Option<String>,
    /// Test-utterance index for heatmap exports.
    pub heatmap_utt: usize,
    pub corpus: CorpusConfig,
    pub arch: ArchConfig,
    pub stage1: TrainHyper,
    pub stage2: TrainHyper,
}

fn default_stage1() -> TrainHyper {
    TrainHyper::desk_stage1(0)
}

fn default_stage2() -> TrainHyper {
    TrainHyper::desk_stage2(0)
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TgError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
        let raw = RawConfig::parse(text)?;
        Self::resolve(raw)
    }

    /// Override the master seed (CLI `--seed`), re-deriving every dependent
    /// seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.plumb_seed();
        self
    }

    fn plumb_seed(&mut self) {
        self.corpus.seed = self.seed;
        self.stage1.seed = self.seed;
        self.stage2.seed = self.seed;
    }

    fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig {
            seed: 42,
            fusion_mode: FusionMode::FullPgca,
            languages: Vec::new(),
            heatmap_layer: usize::MAX, // resolved below
            heatmap_lang: None,
            heatmap_utt: 0,
            corpus: CorpusConfig::default(),
            arch: ArchConfig::default(),
            stage1: default_stage1(),
            stage2: default_stage2(),
        };
        let mut fusion_set = false;
        let mut languages_set = false;
        let mut heatmap_layer_set = false;

        for (section, key, value, line_no) in &raw.entries {
            let ctx = || format!("line {line_no}: [{section}] {key}");
            match (section.as_str(), key.as_str()) {
                ("experiment", "seed") => cfg.seed = parse_num(&ctx(), value)?,
                ("experiment", "fusion_mode") => {
                    cfg.fusion_mode = FusionMode::parse(value)?;
                    fusion_set = true;
                }
                ("experiment", "languages") => {
                    cfg.languages = parse_lang_list(&ctx(), value)?;
                    languages_set = true;
                }
                ("experiment", "heatmap_layer") => {
                    if value != "last" {
                        cfg.heatmap_layer = parse_num(&ctx(), value)?;
                        heatmap_layer_set = true;
                    }
                }
                ("experiment", "heatmap_lang") => {
                    if value != "first" {
                        cfg.heatmap_lang = Some(value.clone());
                    }
                }
                ("experiment", "heatmap_utt") => cfg.heatmap_utt = parse_num(&ctx(), value)?,

                ("corpus", "n_train") => cfg.corpus.n_train = parse_num(&ctx(), value)?,
                ("corpus", "n_test") => cfg.corpus.n_test = parse_num(&ctx(), value)?,
                ("corpus", "n_symbols") => cfg.corpus.n_symbols = parse_num(&ctx(), value)?,
                ("corpus", "min_len") => cfg.corpus.min_len = parse_num(&ctx(), value)?,
                ("corpus", "max_len") => cfg.corpus.max_len = parse_num(&ctx(), value)?,
                ("corpus", "audio_noise") => cfg.corpus.audio_noise = parse_num(&ctx(), value)?,
                ("corpus", "frames_per_token") => {
                    cfg.corpus.frames_per_token = parse_num(&ctx(), value)?
                }
                ("corpus", "feature_bins") => cfg.corpus.feature_bins = parse_num(&ctx(), value)?,

                ("model", "d") => cfg.arch.d = parse_num(&ctx(), value)?,
                ("model", "heads") => cfg.arch.heads = parse_num(&ctx(), value)?,
                ("model", "d_ff") => cfg.arch.d_ff = parse_num(&ctx(), value)?,
                ("model", "n_enc") => cfg.arch.n_enc = parse_num(&ctx(), value)?,
                ("model", "n_dec") => cfg.arch.n_dec = parse_num(&ctx(), value)?,

                ("stage1", _) => apply_stage_key(&mut cfg.stage1, &ctx(), key, value)?,
                ("stage2", _) => apply_stage_key(&mut cfg.stage2, &ctx(), key, value)?,

                (s, k) if s.starts_with("language.") => {
                    let id = s.strip_prefix("language.").unwrap().to_string();
                    if id.is_empty() || id.contains(',') || id.contains(char::is_whitespace) {
                        return Err(TgError::Config(format!(
                            "line {line_no}: bad language id {id:?}"
                        )));
                    }
                    let lang = match cfg.corpus.languages.iter_mut().find(|l| l.lang_id == id) {
                        Some(l) => l,
                        None => {
                            cfg.corpus.languages.push(LanguageConfig {
                                lang_id: id.clone(),
                                noise_rate: 0.0,
                                offset_scale: 0.5,
                                swap_rate: 0.0,
                            });
                            cfg.corpus.languages.last_mut().unwrap()
                        }
                    };
                    match k {
                        "noise_rate" => lang.noise_rate = parse_num(&ctx(), value)?,
                        "offset_scale" => lang.offset_scale = parse_num(&ctx(), value)?,
                        "swap_rate" => lang.swap_rate = parse_num(&ctx(), value)?,
                        other => {
                            return Err(TgError::Config(format!(
                                "line {line_no}: unknown key {other:?} in section [{s}]"
                            )))
                        }
                    }
                }

                (s, k) => {
                    return Err(TgError::Config(format!(
                        "line {line_no}: unknown key {k:?} in section [{s}]"
                    )))
                }
            }
        }

        // Defaults that depend on other values.
        if !languages_set {
            cfg.languages = cfg
                .corpus
                .languages
                .iter()
                .map(|l| l.lang_id.clone())
                .collect();
        }
        if !fusion_set && cfg.languages.is_empty() {
            cfg.fusion_mode = FusionMode::None;
        }
        if !heatmap_layer_set {
            cfg.heatmap_layer = cfg.arch.n_dec.saturating_sub(1);
        }
        if cfg.heatmap_lang.is_none() {
            cfg.heatmap_lang = cfg.languages.first().cloned();
        }
        cfg.corpus.embed_dim = cfg.arch.d;
        cfg.stage1.stage = Stage::One;
        cfg.stage2.stage = Stage::Two;
        cfg.plumb_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.fusion_mode != FusionMode::None && self.languages.is_empty() {
            return Err(TgError::Config(format!(
                "fusion mode {} needs at least one language in [experiment] languages",
                self.fusion_mode
            )));
        }
        if self.fusion_mode == FusionMode::None && !self.languages.is_empty() {
            return Err(TgError::Config(
                "fusion mode none cannot list experiment languages".into(),
            ));
        }
        let declared: BTreeSet<&str> = self
            .corpus
            .languages
            .iter()
            .map(|l| l.lang_id.as_str())
            .collect();
        let mut seen = BTreeSet::new();
        for l in &self.languages {
            if !declared.contains(l.as_str()) {
                return Err(TgError::Config(format!(
                    "experiment language {l} has no [language.{l}] section"
                )));
            }
            if !seen.insert(l.as_str()) {
                return Err(TgError::Config(format!(
                    "duplicate experiment language {l}"
                )));
            }
        }
        if self.heatmap_layer >= self.arch.n_dec {
            return Err(TgError::Config(format!(
                "heatmap_layer {} out of range ({} decoder blocks)",
                self.heatmap_layer, self.arch.n_dec
            )));
        }
        if let Some(lang) = &self.heatmap_lang {
            if !self.languages.contains(lang) {
                return Err(TgError::Config(format!(
                    "heatmap_lang {lang} is not among the experiment languages"
                )));
            }
        }
        self.model_config(self.fusion_mode, self.languages.clone())
            .validate()?;
        Ok(())
    }

    /// Model configuration for a given fusion arm. Length caps and
    /// vocabulary derive from the corpus.
    pub fn model_config(&self, fusion: FusionMode, langs: Vec<String>) -> ModelConfig {
        ModelConfig {
            d: self.arch.d,
            feature_bins: self.corpus.feature_bins,
            heads: self.arch.heads,
            d_ff: self.arch.d_ff,
            n_enc: self.arch.n_enc,
            n_dec: self.arch.n_dec,
            vocab_tgt: self.corpus.vocab_tgt(),
            max_t_s: self.corpus.frames_per_token * self.corpus.max_len,
            max_t_y: self.corpus.max_len + 2,
            fusion_mode: fusion,
            langs,
        }
    }

    /// Canonical dump of every effective value. Re-parsing reproduces this
    /// configuration exactly.
    pub fn resolved_dump(&self) -> String {
        let mut s = String::new();
        s.push_str("[experiment]\n");
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("fusion_mode = {}\n", self.fusion_mode));
        s.push_str(&format!("languages = {}\n", self.languages.join(", ")));
        s.push_str(&format!("heatmap_layer = {}\n", self.heatmap_layer));
        if let Some(l) = &self.heatmap_lang {
            s.push_str(&format!("heatmap_lang = {l}\n"));
        }
        s.push_str(&format!("heatmap_utt = {}\n", self.heatmap_utt));
        s.push('\n');
        s.push_str("[corpus]\n");
        s.push_str(&format!("n_train = {}\n", self.corpus.n_train));
        s.push_str(&format!("n_test = {}\n", self.corpus.n_test));
        s.push_str(&format!("n_symbols = {}\n", self.corpus.n_symbols));
        s.push_str(&format!("min_len = {}\n", self.corpus.min_len));
        s.push_str(&format!("max_len = {}\n", self.corpus.max_len));
        s.push_str(&format!("audio_noise = {:?}\n", self.corpus.audio_noise));
        s.push_str(&format!(
            "frames_per_token = {}\n",
            self.corpus.frames_per_token
        ));
        s.push_str(&format!("feature_bins = {}\n", self.corpus.feature_bins));
        s.push('\n');
        s.push_str("[model]\n");
        s.push_str(&format!("d = {}\n", self.arch.d));
        s.push_str(&format!("heads = {}\n", self.arch.heads));
        s.push_str(&format!("d_ff = {}\n", self.arch.d_ff));
        s.push_str(&format!("n_enc = {}\n", self.arch.n_enc));
        s.push_str(&format!("n_dec = {}\n", self.arch.n_dec));
        s.push('\n');
        for (name, hp) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            s.push_str(&format!("[{name}]\n"));
            s.push_str(&format!("lr_max = {:?}\n", hp.lr_max));
            s.push_str(&format!("warmup_steps = {}\n", hp.warmup_steps));
            s.push_str(&format!("total_steps = {}\n", hp.total_steps));
            s.push_str(&format!("batch_size = {}\n", hp.batch_size));
            s.push_str(&format!("weight_decay = {:?}\n", hp.weight_decay));
            s.push_str(&format!("beta1 = {:?}\n", hp.beta1));
            s.push_str(&format!("beta2 = {:?}\n", hp.beta2));
            s.push_str(&format!("eps_adam = {:?}\n", hp.eps_adam));
            s.push_str(&format!("grad_clip = {:?}\n", hp.grad_clip));
            s.push_str(&format!("eval_every = {}\n", hp.eval_every));
            s.push('\n');
        }
        for l in &self.corpus.languages {
            s.push_str(&format!("[language.{}]\n", l.lang_id));
            s.push_str(&format!("noise_rate = {:?}\n", l.noise_rate));
            s.push_str(&format!("offset_scale = {:?}\n", l.offset_scale));
            s.push_str(&format!("swap_rate = {:?}\n", l.swap_rate));
            s.push('\n');
        }
        s
    }
}

fn apply_stage_key(hp: &mut TrainHyper, ctx: &str, key: &str, value: &str) -> Result<()> {
    match key {
        "lr_max" => hp.lr_max = parse_num(ctx, value)?,
        "warmup_steps" => hp.warmup_steps = parse_num(ctx, value)?,
        "total_steps" => hp.total_steps = parse_num(ctx, value)?,
        "batch_size" => hp.batch_size = parse_num(ctx, value)?,
        "weight_decay" => hp.weight_decay = parse_num(ctx, value)?,
        "beta1" => hp.beta1 = parse_num(ctx, value)?,
        "beta2" => hp.beta2 = parse_num(ctx, value)?,
        "eps_adam" => hp.eps_adam = parse_num(ctx, value)?,
        "grad_clip" => hp.grad_clip = parse_num(ctx, value)?,
        "eval_every" => hp.eval_every = parse_num(ctx, value)?,
        other => {
            return Err(TgError::Config(format!(
                "{ctx}: unknown key {other:?} in a stage section"
            )))
        }
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(ctx: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TgError::Config(format!("{ctx}: cannot parse value {value:?}")))
}

fn parse_lang_list(ctx: &str, value: &str) -> Result<Vec<String>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    let langs: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
    if langs
        .iter()
        .any(|l| l.is_empty() || l.contains(char::is_whitespace))
    {
        return Err(TgError::Config(format!(
            "{ctx}: bad language list {value:?}"
        )));
    }
    Ok(langs)
}

/// Section/key/value triples in file order.
struct RawConfig {
    entries: Vec<(String, String, String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = Vec::new();
        let mut section: Option<String> = None;
        let mut seen_keys: BTreeSet<(String, String)> = BTreeSet::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    TgError::Config(format!("line {line_no}: unterminated section {line:?}"))
                })?;
                let known = matches!(
                    name,
                    "experiment" | "corpus" | "model" | "stage1" | "stage2"
                ) || name.starts_with("language.");
                if !known {
                    return Err(TgError::Config(format!(
                        "line {line_no}: unknown section [{name}]"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TgError::Config(format!(
                    "line {line_no}: expected key = value, got {line:?}"
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let section = section.clone().ok_or_else(|| {
                TgError::Config(format!("line {line_no}: key {key:?} outside any section"))
            })?;
            if !seen_keys.insert((section.clone(), key.clone())) {
                return Err(TgError::Config(format!(
                    "line {line_no}: duplicate key {key:?} in section [{section}]"
                )));
            }
            entries.push((section, key, value, line_no));
        }
        Ok(RawConfig { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[corpus]
n_train = 40
n_test = 10

[language.la]
noise_rate = 0.0

[language.lb]
noise_rate = 0.5
";

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = ExperimentConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.fusion_mode, FusionMode::FullPgca);
        assert_eq!(cfg.languages, vec!["la", "lb"]);
        assert_eq!(cfg.corpus.n_train, 40);
        assert_eq!(cfg.corpus.embed_dim, cfg.arch.d);
        assert_eq!(cfg.heatmap_layer, cfg.arch.n_dec - 1);
        assert_eq!(cfg.heatmap_lang.as_deref(), Some("la"));
        assert_eq!(cfg.stage1.stage, Stage::One);
        assert_eq!(cfg.stage2.stage, Stage::Two);
        assert_eq!(cfg.corpus.seed, 42);

        let dump = cfg.resolved_dump();
        for key in [
            "seed = 42",
            "fusion_mode = full_pgca",
            "languages = la, lb",
            "n_train = 40",
            "d = 32",
            "lr_max = 0.003",
            "[language.la]",
        ] {
            assert!(dump.contains(key), "dump missing {key:?}:\n{dump}");
        }
    }

    #[test]
    fn misspelled_key_is_an_error_naming_it() {
        let bad = "[corpus]\nn_trian = 40\n";
        let err = ExperimentConfig::parse_str(bad).unwrap_err().to_string();
        assert!(err.contains("n_trian"), "{err}");

        let bad = "[corpsu]\nn_train = 40\n";
        let err = ExperimentConfig::parse_str(bad).unwrap_err().to_string();
        assert!(err.contains("corpsu"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let bad = "[corpus]\nn_train = 40\nn_train = 50\n";
        assert!(ExperimentConfig::parse_str(bad).is_err());
    }

    #[test]
    fn resolved_dump_roundtrips_identically() {
        let cfg = ExperimentConfig::parse_str(MINIMAL).unwrap();
        let dump = cfg.resolved_dump();
        let back = ExperimentConfig::parse_str(&dump).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.resolved_dump(), dump);
    }

    #[test]
    fn seed_override_propagates() {
        let cfg = ExperimentConfig::parse_str(MINIMAL).unwrap().with_seed(7);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.corpus.seed, 7);
        assert_eq!(cfg.stage1.seed, 7);
        assert_eq!(cfg.stage2.seed, 7);
    }

    #[test]
    fn language_consistency_checks() {
        let bad = "\
[experiment]
languages = la, zz

[language.la]
noise_rate = 0.0
";
        let err = ExperimentConfig::parse_str(bad).unwrap_err().to_string();
        assert!(err.contains("zz"), "{err}");

        let none_with_langs = "\
[experiment]
fusion_mode = none

[language.la]
noise_rate = 0.0
";
        assert!(ExperimentConfig::parse_str(none_with_langs).is_err());

        // No languages at all: fusion defaults to none and validates.
        let bare = "[corpus]\nn_train = 10\nn_test = 2\n";
        let cfg = ExperimentConfig::parse_str(bare).unwrap();
        assert_eq!(cfg.fusion_mode, FusionMode::None);
        assert!(cfg.languages.is_empty());
        assert!(cfg.heatmap_lang.is_none());
    }

    #[test]
    fn paper_scale_budgets_parse() {
        let text = "\
[stage1]
lr_max = 1.25e-5
total_steps = 80000
warmup_steps = 8000
batch_size = 4

[stage2]
lr_max = 5.0e-5
total_steps = 180000
warmup_steps = 30000
batch_size = 8

[language.la]
noise_rate = 0.0
";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.stage1.lr_max, 1.25e-5);
        assert_eq!(cfg.stage1.total_steps, 80_000);
        assert_eq!(cfg.stage2.warmup_steps, 30_000);
        // Matches the built-in reference presets.
        assert_eq!(cfg.stage1.lr_max, TrainHyper::reference_stage1(0).lr_max);
        assert_eq!(cfg.stage2.lr_max, TrainHyper::reference_stage2(0).lr_max);
    }
}

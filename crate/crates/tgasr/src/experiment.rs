//! Config-driven experiment runs: data generation, the two training stages,
//! evaluation, analysis exports, and a checksummed artifact manifest.
//!
//! A run directory is fully determined by (config, seed): re-running
//! reproduces every artifact bit-for-bit, which `verify` checks against the
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::aux_embed::cls_proximity;
use crate::config::ExperimentConfig;
use crate::data::{gen_corpus, load_dataset, save_dataset, summarize, Dataset};
use crate::error::{Result, TgError};
use crate::eval::{
    attention_heatmap, evaluate, extract_gates, incremental_experiment, relative_reduction,
    select_topk, SelectionMetric,
};
use crate::model::{save_checkpoint, FusionMode, ModelCheckpoint};
use crate::training::{train_stage1, train_stage2, TrainOutcome};
use crate::util::crc32;

/// Named experiment suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Stage 1 plus one stage-2 arm with the configured fusion mode.
    Baseline,
    /// Stage 1 plus every fusion variant.
    Ablation,
    /// Stage 1 plus one stage-2 run per prefix of the language order.
    Sweep,
    /// Stage 1 plus one single-language run per language, then top-k
    /// rankings under each selection metric.
    Selection,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Preset::Baseline,
            "ablation" => Preset::Ablation,
            "sweep" => Preset::Sweep,
            "selection" => Preset::Selection,
            other => {
                return Err(TgError::Config(format!(
                    "unknown preset {other:?} (expected baseline, ablation, sweep, or selection)"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::Ablation => "ablation",
            Preset::Sweep => "sweep",
            Preset::Selection => "selection",
        }
    }
}

struct ManifestEntry {
    crc: u32,
    bytes: u64,
    path: String,
}

/// Artifact sink for one run directory.
pub struct RunDir {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

impl RunDir {
    pub fn create(root: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(rel))?;
        self.entries.push(ManifestEntry {
            crc: crc32(&bytes),
            bytes: bytes.len() as u64,
            path: rel.to_string(),
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        std::fs::write(self.path(rel), contents)?;
        self.record(rel)
    }

    pub fn write_str(&mut self, rel: &str, contents: &str) -> Result<()> {
        self.write(rel, contents.as_bytes())
    }

    fn write_manifest(&self, status: &str) -> Result<()> {
        let mut s = String::from("# artifact manifest: crc32 bytes path\n");
        s.push_str(&format!("status {status}\n"));
        for e in &self.entries {
            s.push_str(&format!("{:08x} {} {}\n", e.crc, e.bytes, e.path));
        }
        std::fs::write(self.path(MANIFEST_NAME), s)?;
        Ok(())
    }
}

fn phase<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ TgError::Phase { .. } => e,
        other => other.in_phase(name),
    })
}

fn load_or_generate(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Dataset> {
    let data_path = dir.path("data.tgds");
    let ds = if data_path.exists() {
        let ds = load_dataset(&data_path)?;
        if ds.config != cfg.corpus {
            return Err(TgError::Config(
                "existing data.tgds was generated from a different corpus config".into(),
            ));
        }
        dir.record("data.tgds")?;
        ds
    } else {
        let ds = gen_corpus(&cfg.corpus)?;
        save_dataset(&ds, &data_path)?;
        dir.record("data.tgds")?;
        ds
    };
    dir.write_str("corpus_summary.csv", &summarize(&ds).to_csv())?;
    Ok(ds)
}

/// Mean cosine proximity of each configured language's clean translations to
/// the target transcripts, over the test split.
fn proximity_scores(cfg: &ExperimentConfig, ds: &Dataset) -> Result<BTreeMap<String, f64>> {
    let target_spec = cfg.corpus.target_spec()?;
    let sentences: Vec<Vec<u32>> = ds.test.iter().map(|u| u.target.clone()).collect();
    let mut scores = BTreeMap::new();
    for lang in &cfg.languages {
        let spec = cfg.corpus.language_spec(lang)?;
        let mapped: Vec<Vec<u32>> = sentences
            .iter()
            .map(|s| spec.cipher(s))
            .collect::<Result<_>>()?;
        let p = cls_proximity(&sentences, &target_spec, &mapped, &spec)?;
        scores.insert(lang.clone(), p);
    }
    Ok(scores)
}

fn proximity_csv(scores: &BTreeMap<String, f64>) -> String {
    let mut s = String::from("lang,proximity\n");
    for (lang, p) in scores {
        s.push_str(&format!("{lang},{p:.9}\n"));
    }
    s
}

struct ArmResult {
    id: String,
    fusion: FusionMode,
    langs: Vec<String>,
    cer: f64,
}

fn save_outcome(dir: &mut RunDir, id: &str, outcome: &TrainOutcome) -> Result<()> {
    let ckpt_rel = format!("ckpt_{id}.tgck");
    save_checkpoint(&outcome.best, &dir.path(&ckpt_rel))?;
    dir.record(&ckpt_rel)?;
    dir.write_str(&format!("train_{id}.csv"), &outcome.log_csv())?;
    if let Some(d) = &outcome.diverged {
        return Err(TgError::Diverged {
            step: outcome.last.step,
            detail: d.clone(),
        });
    }
    Ok(())
}

fn run_stage2_arm(
    dir: &mut RunDir,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    stage1: &ModelCheckpoint,
    id: &str,
    fusion: FusionMode,
    langs: &[String],
) -> Result<(ModelCheckpoint, f64)> {
    let mcfg = cfg.model_config(fusion, langs.to_vec());
    let outcome = train_stage2(stage1, ds, &mcfg, &cfg.stage2)?;
    save_outcome(dir, id, &outcome)?;
    let report = evaluate(&outcome.best, ds, "test")?;
    dir.write_str(&format!("cer_{id}.csv"), &report.to_csv())?;
    Ok((outcome.best, report.cer))
}

fn analysis_exports(
    dir: &mut RunDir,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    id: &str,
    ckpt: &ModelCheckpoint,
) -> Result<()> {
    if !ckpt.config.fusion_mode.has_gates() {
        return Ok(());
    }
    let gates = extract_gates(ckpt)?;
    dir.write_str(&format!("gate_report_{id}.csv"), &gates.to_csv())?;

    if let Some(lang) = &cfg.heatmap_lang {
        if ckpt.config.langs.contains(lang) {
            let utt = ds.test.get(cfg.heatmap_utt).ok_or_else(|| {
                TgError::Invalid(format!(
                    "heatmap_utt {} out of range ({} test utterances)",
                    cfg.heatmap_utt,
                    ds.test.len()
                ))
            })?;
            let hm = attention_heatmap(ckpt, &ds.config, utt, cfg.heatmap_layer, lang)?;
            dir.write_str(&format!("heatmap_{id}.csv"), &hm.to_csv())?;
        }
    }
    Ok(())
}

fn summary_csv(stage1_cer: f64, arms: &[ArmResult]) -> String {
    let mut s = String::from("run,fusion_mode,langs,cer,rel_vs_stage1_pct\n");
    s.push_str(&format!("stage1,none,,{stage1_cer:.9},\n"));
    for a in arms {
        s.push_str(&format!(
            "{},{},{},{:.9},{:.4}\n",
            a.id,
            a.fusion,
            a.langs.join(" "),
            a.cer,
            relative_reduction(stage1_cer, a.cer) * 100.0
        ));
    }
    s
}

/// Execute a full experiment run. On failure the manifest is still written,
/// with the failing phase recorded and all completed artifacts listed.
pub fn run_experiment(cfg: &ExperimentConfig, preset: Preset, out: &Path) -> Result<()> {
    let mut dir = RunDir::create(out)?;
    let result = run_phases(cfg, preset, &mut dir);
    match &result {
        Ok(()) => dir.write_manifest("complete")?,
        Err(e) => {
            let phase_name = match e {
                TgError::Phase { phase, .. } => phase.clone(),
                _ => "unknown".to_string(),
            };
            dir.write_manifest(&format!("incomplete phase={phase_name}"))?;
        }
    }
    result
}

fn run_phases(cfg: &ExperimentConfig, preset: Preset, dir: &mut RunDir) -> Result<()> {
    phase("config", cfg.validate())?;
    phase(
        "config",
        dir.write_str("config.resolved.cfg", &cfg.resolved_dump()),
    )?;

    let ds = phase("gen-data", load_or_generate(cfg, dir))?;

    let prox = phase("proximity", proximity_scores(cfg, &ds))?;
    if !prox.is_empty() {
        phase(
            "proximity",
            dir.write_str("proximity.csv", &proximity_csv(&prox)),
        )?;
    }

    // Stage 1.
    let base_cfg = cfg.model_config(FusionMode::None, Vec::new());
    let s1 = phase("stage1", train_stage1(&ds, &base_cfg, &cfg.stage1))?;
    phase("stage1", save_outcome(dir, "stage1", &s1))?;
    let s1_report = phase("stage1", evaluate(&s1.best, &ds, "test"))?;
    phase(
        "stage1",
        dir.write_str("cer_stage1.csv", &s1_report.to_csv()),
    )?;
    let stage1_cer = s1_report.cer;

    let mut arms: Vec<ArmResult> = Vec::new();

    match preset {
        Preset::Baseline => {
            if cfg.fusion_mode != FusionMode::None {
                let id = format!("stage2_{}", cfg.fusion_mode);
                let (ckpt, cer) = phase(
                    "stage2",
                    run_stage2_arm(
                        dir,
                        cfg,
                        &ds,
                        &s1.best,
                        &id,
                        cfg.fusion_mode,
                        &cfg.languages,
                    ),
                )?;
                phase("analysis", analysis_exports(dir, cfg, &ds, &id, &ckpt))?;
                arms.push(ArmResult {
                    id,
                    fusion: cfg.fusion_mode,
                    langs: cfg.languages.clone(),
                    cer,
                });
            }
        }

        Preset::Ablation => {
            for mode in FusionMode::ALL_FUSED {
                let id = format!("stage2_{mode}");
                let (ckpt, cer) = phase(
                    "ablate",
                    run_stage2_arm(dir, cfg, &ds, &s1.best, &id, mode, &cfg.languages),
                )?;
                phase("analysis", analysis_exports(dir, cfg, &ds, &id, &ckpt))?;
                arms.push(ArmResult {
                    id,
                    fusion: mode,
                    langs: cfg.languages.clone(),
                    cer,
                });
            }
        }

        Preset::Sweep => {
            let mcfg = cfg.model_config(cfg.fusion_mode, cfg.languages.clone());
            let curve = phase(
                "sweep",
                incremental_experiment(&s1.best, &ds, &mcfg, &cfg.languages, &cfg.stage2),
            )?;
            phase(
                "sweep",
                dir.write_str("curve.csv", &crate::eval::curve_csv(&curve)),
            )?;
            for p in &curve {
                if let Some(g) = &p.gates {
                    phase(
                        "sweep",
                        dir.write_str(&format!("gate_report_k{}.csv", p.k), &g.to_csv()),
                    )?;
                }
                arms.push(ArmResult {
                    id: format!("sweep_k{}", p.k),
                    fusion: cfg.fusion_mode,
                    langs: p.langs.clone(),
                    cer: p.cer,
                });
            }
        }

        Preset::Selection => {
            if !cfg.fusion_mode.has_gates() {
                return Err(TgError::Config(format!(
                    "selection preset needs a gated fusion mode, got {}",
                    cfg.fusion_mode
                ))
                .in_phase("select"));
            }
            let mut cer_scores = BTreeMap::new();
            let mut gate_scores = BTreeMap::new();
            for lang in &cfg.languages {
                let id = format!("select_{lang}");
                let single = vec![lang.clone()];
                let (ckpt, cer) = phase(
                    "select",
                    run_stage2_arm(dir, cfg, &ds, &s1.best, &id, cfg.fusion_mode, &single),
                )?;
                let gates = phase("select", extract_gates(&ckpt))?;
                cer_scores.insert(lang.clone(), cer);
                gate_scores.insert(lang.clone(), gates.mean_gate(lang).unwrap_or(0.0));
                arms.push(ArmResult {
                    id,
                    fusion: cfg.fusion_mode,
                    langs: single,
                    cer,
                });
            }

            let mut scores = String::from("lang,cer,proximity,gating\n");
            for lang in &cfg.languages {
                scores.push_str(&format!(
                    "{lang},{:.9},{:.9},{:.9}\n",
                    cer_scores[lang], prox[lang], gate_scores[lang]
                ));
            }
            phase("select", dir.write_str("scores.csv", &scores))?;

            let mut sel = String::from("metric,k,langs\n");
            for (metric, table) in [
                (SelectionMetric::Cer, &cer_scores),
                (SelectionMetric::Proximity, &prox),
                (SelectionMetric::Gating, &gate_scores),
            ] {
                for k in 1..=cfg.languages.len() {
                    let chosen = phase("select", select_topk(table, metric, k))?;
                    sel.push_str(&format!("{},{},{}\n", metric.as_str(), k, chosen.join(" ")));
                }
            }
            phase("select", dir.write_str("selection.csv", &sel))?;
        }
    }

    phase(
        "summary",
        dir.write_str("summary.csv", &summary_csv(stage1_cer, &arms)),
    )?;
    Ok(())
}

/// Verification outcome for one run directory.
#[derive(Debug)]
pub struct VerifyReport {
    pub status: String,
    pub checked: usize,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.status == "complete"
    }
}

/// Recompute every artifact checksum against the manifest.
pub fn verify_run(dir: &Path) -> Result<VerifyReport> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| TgError::Invalid(format!("cannot read {}: {e}", manifest_path.display())))?;
    let mut status = String::from("missing");
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if let Some(s) = line.strip_prefix("status ") {
            status = s.to_string();
            continue;
        }
        let mut parts = line.splitn(3, ' ');
        let (crc_s, bytes_s, rel) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(TgError::Format(format!("manifest: bad line {line:?}"))),
        };
        let want_crc = u32::from_str_radix(crc_s, 16)
            .map_err(|_| TgError::Format(format!("manifest: bad checksum {crc_s:?}")))?;
        let want_bytes: u64 = bytes_s
            .parse()
            .map_err(|_| TgError::Format(format!("manifest: bad size {bytes_s:?}")))?;
        checked += 1;
        match std::fs::read(dir.join(rel)) {
            Ok(data) => {
                if data.len() as u64 != want_bytes {
                    failures.push(format!("{rel}: size {} != {want_bytes}", data.len()));
                } else {
                    let got = crc32(&data);
                    if got != want_crc {
                        failures.push(format!("{rel}: crc {got:08x} != {want_crc:08x}"));
                    }
                }
            }
            Err(e) => failures.push(format!("{rel}: {e}")),
        }
    }
    Ok(VerifyReport {
        status,
        checked,
        failures,
    })
}

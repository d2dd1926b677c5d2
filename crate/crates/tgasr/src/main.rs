//! Command-line entry point: config-driven experiment runs, dataset
//! generation, evaluation, ablations, sweeps, selection, analysis exports,
//! and artifact verification.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tgasr::config::ExperimentConfig;
use tgasr::data::{gen_corpus, load_dataset, save_dataset, summarize};
use tgasr::error::{Result, TgError};
use tgasr::eval::{
    attention_heatmap, evaluate, extract_gates, relative_reduction, select_topk, SelectionMetric,
};
use tgasr::experiment::{run_experiment, verify_run, Preset, RunDir};
use tgasr::model::load_checkpoint;

#[derive(Parser)]
#[command(
    name = "tgasr",
    about = "Translation-guided recognition laboratory with gated cross-attention fusion",
    version
)]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for run artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed override (replaces the config's seed everywhere).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Experiment suite when no subcommand is given.
    #[arg(long, global = true, value_parser = Preset::parse)]
    preset: Option<Preset>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its summary table.
    GenData,
    /// Stage-1 and stage-2 training with the configured fusion mode.
    Train,
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint file.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Split to score.
        #[arg(long, default_value = "test")]
        split: String,
        /// Baseline CER for a relative-reduction line.
        #[arg(long)]
        baseline_cer: Option<f64>,
    },
    /// Run every fusion variant under one budget.
    Ablate,
    /// Incremental language curve (one run per prefix of the order).
    Sweep,
    /// Single-language runs plus top-k rankings, or rank an existing
    /// scores table.
    Select {
        /// Rank this scores CSV (columns lang,cer,proximity,gating) instead
        /// of training.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Export gate report and attention heatmap from a checkpoint.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Decoder layer (default: last).
        #[arg(long)]
        layer: Option<usize>,
        /// Language branch (default: first configured).
        #[arg(long)]
        lang: Option<String>,
        /// Test-utterance index.
        #[arg(long, default_value_t = 0)]
        utt: usize,
    },
    /// Recompute artifact checksums against a run manifest.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tgasr: {e}");
            ExitCode::FAILURE
        }
    }
}

fn need_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| TgError::Config("--config PATH is required for this command".into()))?;
    let cfg = ExperimentConfig::parse_file(path)?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn need_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| TgError::Config("--out DIR is required for this command".into()))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        None => {
            let preset = cli.preset.unwrap_or(Preset::Baseline);
            let cfg = need_config(&cli)?;
            let out = need_out(&cli)?;
            run_experiment(&cfg, preset, out)?;
            println!("run complete: {}", out.display());
            Ok(())
        }

        Some(Command::GenData) => {
            let cfg = need_config(&cli)?;
            let out = need_out(&cli)?;
            let mut dir = RunDir::create(out)?;
            let ds = gen_corpus(&cfg.corpus).map_err(|e| e.in_phase("gen-data"))?;
            save_dataset(&ds, &dir.path("data.tgds")).map_err(|e| e.in_phase("gen-data"))?;
            let summary = summarize(&ds);
            dir.write_str("corpus_summary.csv", &summary.to_csv())?;
            dir.write_str("config.resolved.cfg", &cfg.resolved_dump())?;
            for row in &summary.rows {
                println!(
                    "{}: {} utterances, {} frames ({:.4} h equivalent)",
                    row.split, row.utterances, row.frames, row.hours_equiv
                );
            }
            println!("dataset written: {}", dir.path("data.tgds").display());
            Ok(())
        }

        Some(Command::Train) => {
            let cfg = need_config(&cli)?;
            let out = need_out(&cli)?;
            run_experiment(&cfg, Preset::Baseline, out)?;
            println!("run complete: {}", out.display());
            Ok(())
        }

        Some(Command::Eval {
            ckpt,
            data,
            split,
            baseline_cer,
        }) => {
            let ckpt = load_checkpoint(ckpt).map_err(|e| e.in_phase("eval"))?;
            let ds = load_dataset(data).map_err(|e| e.in_phase("eval"))?;
            let report = evaluate(&ckpt, &ds, split).map_err(|e| e.in_phase("eval"))?;
            if let Some(out) = cli.out.as_deref() {
                let mut dir = RunDir::create(out)?;
                dir.write_str("cer_report.csv", &report.to_csv())?;
            }
            println!(
                "cer {:.6} over {} reference tokens (S {} / D {} / I {})",
                report.cer,
                report.ref_chars,
                report.substitutions,
                report.deletions,
                report.insertions
            );
            if let Some(base) = baseline_cer {
                println!(
                    "relative reduction vs {base}: {:.4}%",
                    relative_reduction(*base, report.cer) * 100.0
                );
            }
            Ok(())
        }

        Some(Command::Ablate) => {
            let cfg = need_config(&cli)?;
            let out = need_out(&cli)?;
            run_experiment(&cfg, Preset::Ablation, out)?;
            println!("ablation complete: {}", out.display());
            Ok(())
        }

        Some(Command::Sweep) => {
            let cfg = need_config(&cli)?;
            let out = need_out(&cli)?;
            run_experiment(&cfg, Preset::Sweep, out)?;
            println!("sweep complete: {}", out.display());
            Ok(())
        }

        Some(Command::Select { scores }) => match scores {
            Some(path) => {
                let out = need_out(&cli)?;
                rank_scores_file(path, out)
            }
            None => {
                let cfg = need_config(&cli)?;
                let out = need_out(&cli)?;
                run_experiment(&cfg, Preset::Selection, out)?;
                println!("selection complete: {}", out.display());
                Ok(())
            }
        },

        Some(Command::Analyze {
            ckpt,
            data,
            layer,
            lang,
            utt,
        }) => {
            let out = need_out(&cli)?;
            let ckpt = load_checkpoint(ckpt).map_err(|e| e.in_phase("analyze"))?;
            let ds = load_dataset(data).map_err(|e| e.in_phase("analyze"))?;
            let mut dir = RunDir::create(out)?;

            let gates = extract_gates(&ckpt).map_err(|e| e.in_phase("analyze"))?;
            dir.write_str("gate_report.csv", &gates.to_csv())?;

            let layer = layer.unwrap_or(ckpt.config.n_dec.saturating_sub(1));
            let lang = match lang {
                Some(l) => l.clone(),
                None => ckpt
                    .config
                    .langs
                    .first()
                    .cloned()
                    .ok_or_else(|| TgError::Invalid("checkpoint has no languages".into()))?,
            };
            let u = ds.test.get(*utt).ok_or_else(|| {
                TgError::Invalid(format!(
                    "--utt {utt} out of range ({} test utterances)",
                    ds.test.len()
                ))
            })?;
            let hm = attention_heatmap(&ckpt, &ds.config, u, layer, &lang)
                .map_err(|e| e.in_phase("analyze"))?;
            dir.write_str("heatmap.csv", &hm.to_csv())?;
            println!(
                "analysis written: layer {layer}, language {lang}, utterance {} (diagonal fraction {:.3})",
                u.id,
                hm.diagonal_fraction()
            );
            Ok(())
        }

        Some(Command::Verify) => {
            let out = need_out(&cli)?;
            let report = verify_run(out).map_err(|e| e.in_phase("verify"))?;
            println!(
                "manifest status: {}; {} artifacts checked",
                report.status, report.checked
            );
            for f in &report.failures {
                eprintln!("verify: {f}");
            }
            if report.ok() {
                println!("all checksums match");
                Ok(())
            } else {
                Err(TgError::Checksum(format!(
                    "{} artifact(s) failed verification",
                    report.failures.len().max(1)
                ))
                .in_phase("verify"))
            }
        }
    }
}

/// Rank languages from an explicit scores table (no training).
fn rank_scores_file(path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TgError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| TgError::Format("scores file is empty".into()))?;
    if header.trim() != "lang,cer,proximity,gating" {
        return Err(TgError::Format(format!(
            "scores file must start with 'lang,cer,proximity,gating', got {header:?}"
        )));
    }
    let mut cer = BTreeMap::new();
    let mut prox = BTreeMap::new();
    let mut gate = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(TgError::Format(format!("scores file: bad row {line:?}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| TgError::Format(format!("scores file: bad number {s:?}")))
        };
        let lang = cols[0].trim().to_string();
        cer.insert(lang.clone(), parse(cols[1])?);
        prox.insert(lang.clone(), parse(cols[2])?);
        gate.insert(lang, parse(cols[3])?);
    }

    let mut dir = RunDir::create(out)?;
    let mut sel = String::from("metric,k,langs\n");
    for (metric, table) in [
        (SelectionMetric::Cer, &cer),
        (SelectionMetric::Proximity, &prox),
        (SelectionMetric::Gating, &gate),
    ] {
        for k in 1..=table.len() {
            let chosen = select_topk(table, metric, k).map_err(|e| e.in_phase("select"))?;
            sel.push_str(&format!("{},{},{}\n", metric.as_str(), k, chosen.join(" ")));
        }
    }
    dir.write_str("selection.csv", &sel)?;
    println!("selection written: {}", dir.path("selection.csv").display());
    Ok(())
}

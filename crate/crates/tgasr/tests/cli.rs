//! End-to-end checks of the command-line binary at a micro training budget.

use std::path::Path;
use std::process::{Command, Output};

fn tgasr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgasr"))
        .args(args)
        .output()
        .expect("spawn tgasr")
}

fn write_micro_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("micro.cfg");
    std::fs::write(
        &path,
        "\
[experiment]
seed = 5

[corpus]
n_train = 12
n_test = 4
n_symbols = 6
min_len = 3
max_len = 4
feature_bins = 4

[model]
d = 8
d_ff = 12
n_enc = 1
n_dec = 2

[stage1]
total_steps = 6
warmup_steps = 2
eval_every = 3
batch_size = 4

[stage2]
total_steps = 6
warmup_steps = 2
eval_every = 3
batch_size = 4

[language.la]
noise_rate = 0.0
offset_scale = 0.2

[language.lb]
noise_rate = 0.5
offset_scale = 0.6
",
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_micro_config(tmp.path());
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    let cfg_s = cfg.to_str().unwrap();

    // gen-data alone works and prints the summary table.
    let gen_dir = tmp.path().join("gen");
    let out = tgasr(&[
        "gen-data",
        "--config",
        cfg_s,
        "--out",
        gen_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train: 12 utterances"), "{stdout}");
    assert!(gen_dir.join("data.tgds").exists());

    // Full train run.
    let out = tgasr(&["train", "--config", cfg_s, "--out", run_s]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run.join("ckpt_stage2_full_pgca.tgck").exists());
    assert!(run.join("summary.csv").exists());

    // Verification passes, then fails after tampering, with nonzero exit.
    let out = tgasr(&["verify", "--out", run_s]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let victim = run.join("cer_stage1.csv");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(&victim, bytes).unwrap();
    let out = tgasr(&["verify", "--out", run_s]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("phase verify"), "{stderr}");

    // Evaluate the checkpoint against the dataset file.
    let ckpt = run.join("ckpt_stage2_full_pgca.tgck");
    let data = run.join("data.tgds");
    let out = tgasr(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--baseline-cer",
        "0.9",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cer "), "{stdout}");
    assert!(stdout.contains("relative reduction"), "{stdout}");

    // Analysis exports from the trained checkpoint.
    let analysis = tmp.path().join("analysis");
    let out = tgasr(&[
        "analyze",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--lang",
        "la",
        "--utt",
        "1",
        "--out",
        analysis.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(analysis.join("gate_report.csv").exists());
    assert!(analysis.join("heatmap.csv").exists());
}

#[test]
fn seed_override_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_micro_config(tmp.path());
    let cfg_s = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");

    for (dir, seed) in [(&a, "5"), (&b, "6")] {
        let out = tgasr(&[
            "gen-data",
            "--config",
            cfg_s,
            "--seed",
            seed,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let da = std::fs::read(a.join("data.tgds")).unwrap();
    let db = std::fs::read(b.join("data.tgds")).unwrap();
    assert_ne!(da, db, "different seeds must change the dataset");

    // Same seed through the flag reproduces the config's own seed exactly.
    let c = tmp.path().join("c");
    let out = tgasr(&[
        "gen-data",
        "--config",
        cfg_s,
        "--seed",
        "5",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(da, std::fs::read(c.join("data.tgds")).unwrap());
}

#[test]
fn config_errors_name_the_offender_and_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "[corpus]\nn_trian = 40\n").unwrap();
    let out = tgasr(&[
        "train",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n_trian"), "{stderr}");

    // Missing --config is a clear error.
    let out = tgasr(&["train", "--out", tmp.path().join("y").to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--config"), "{stderr}");
}

#[test]
fn select_ranks_an_external_scores_table() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("scores.csv");
    std::fs::write(
        &scores,
        "lang,cer,proximity,gating\n\
         mandarin,11.87,0.905,0.42\n\
         hindi,13.17,0.854,-0.10\n\
         english,13.10,0.552,-0.12\n\
         french,12.98,0.821,0.05\n\
         spanish,12.84,0.843,0.31\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("sel");
    let out = tgasr(&[
        "select",
        "--scores",
        scores.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let sel = std::fs::read_to_string(out_dir.join("selection.csv")).unwrap();
    assert!(sel.contains("cer,2,mandarin spanish"), "{sel}");
    assert!(sel.contains("proximity,2,mandarin hindi"), "{sel}");
    // All metrics choose the same full set at k = 5.
    let full: Vec<&str> = sel.lines().filter(|l| l.contains(",5,")).collect();
    assert_eq!(full.len(), 3);
    let mut sets: Vec<Vec<&str>> = full
        .iter()
        .map(|l| {
            let mut langs: Vec<&str> = l.split(',').nth(2).unwrap().split(' ').collect();
            langs.sort_unstable();
            langs
        })
        .collect();
    sets.dedup();
    assert_eq!(sets.len(), 1);
}

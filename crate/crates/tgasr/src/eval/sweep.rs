//! Incremental-language experiment: train one stage-2 model per prefix of a
//! language order, under identical budget and seed, and trace the CER curve.

use crate::data::Dataset;
use crate::error::{Result, TgError};
use crate::model::{ModelCheckpoint, ModelConfig};
use crate::training::{train_stage2, TrainHyper};

use super::gates::{extract_gates, GateReport};

/// One point of the curve: the first k languages of the order, the held-out
/// CER of the resulting model, and its gate report.
#[derive(Debug, Clone)]
pub struct IncrementalPoint {
    pub k: usize,
    pub langs: Vec<String>,
    pub cer: f64,
    pub gates: Option<GateReport>,
}

/// Train one stage-2 model per prefix of `order` (k = 1..=|order|), all from
/// the same stage-1 parent with the same hyperparameters and seed.
pub fn incremental_experiment(
    stage1: &ModelCheckpoint,
    ds: &Dataset,
    base_cfg: &ModelConfig,
    order: &[String],
    hp: &TrainHyper,
) -> Result<Vec<IncrementalPoint>> {
    if order.is_empty() {
        return Err(TgError::Invalid(
            "incremental_experiment: empty language order".into(),
        ));
    }
    let mut curve = Vec::with_capacity(order.len());
    for k in 1..=order.len() {
        let langs: Vec<String> = order[..k].to_vec();
        let cfg = ModelConfig {
            langs: langs.clone(),
            ..base_cfg.clone()
        };
        let out = train_stage2(stage1, ds, &cfg, hp)?;
        if let Some(d) = out.diverged {
            return Err(TgError::Diverged {
                step: out.last.step,
                detail: format!("prefix k={k}: {d}"),
            });
        }
        let gates = cfg
            .fusion_mode
            .has_gates()
            .then(|| extract_gates(&out.best))
            .transpose()?;
        curve.push(IncrementalPoint {
            k,
            langs,
            cer: out.best_cer,
            gates,
        });
    }
    Ok(curve)
}

/// Fixed-schema curve table.
pub fn curve_csv(points: &[IncrementalPoint]) -> String {
    let mut s = String::from("k,langs,cer\n");
    for p in points {
        s.push_str(&format!("{},{},{:.9}\n", p.k, p.langs.join(" "), p.cer));
    }
    s
}

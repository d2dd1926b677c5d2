//! Gate activation extraction.
//!
//! Gates are input-independent scalars, so no forward pass is needed: the
//! report is tanh of each stored α, per decoder layer and per language, plus
//! the feedforward gate. For the no-tanh ablation the same squashed view is
//! reported so values stay comparable across modes.

use crate::error::{Result, TgError};
use crate::model::{ModelCheckpoint, Stage};

/// Gate activations of one decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGates {
    pub layer: usize,
    /// (lang_id, tanh gate) in branch order.
    pub attn: Vec<(String, f64)>,
    pub fnn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub layers: Vec<LayerGates>,
}

impl GateReport {
    /// Mean attention gate for one language across decoder layers.
    pub fn mean_gate(&self, lang: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .layers
            .iter()
            .flat_map(|l| l.attn.iter().filter(|(id, _)| id == lang).map(|(_, v)| *v))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Fixed-schema table: layer, gate name (language id or "fnn"), value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,gate,value\n");
        for l in &self.layers {
            for (lang, v) in &l.attn {
                s.push_str(&format!("{},{},{:.12}\n", l.layer, lang, v));
            }
            s.push_str(&format!("{},fnn,{:.12}\n", l.layer, l.fnn));
        }
        s
    }
}

/// Read every gate from a stage-2 checkpoint with a gated fusion mode.
pub fn extract_gates(ckpt: &ModelCheckpoint) -> Result<GateReport> {
    if ckpt.stage != Stage::Two {
        return Err(TgError::Invalid(
            "extract_gates: requires a stage-2 checkpoint".into(),
        ));
    }
    if !ckpt.config.fusion_mode.has_gates() {
        return Err(TgError::Invalid(format!(
            "extract_gates: fusion mode {} has no gates",
            ckpt.config.fusion_mode
        )));
    }
    let mut layers = Vec::with_capacity(ckpt.config.n_dec);
    for b in 0..ckpt.config.n_dec {
        let mut attn = Vec::with_capacity(ckpt.config.l());
        for (l, lang) in ckpt.config.langs.iter().enumerate() {
            let alpha = ckpt
                .params
                .get(&format!("dec.b{b}.pgca.alpha_attn{l}"))?
                .data()[0];
            attn.push((lang.clone(), alpha.tanh()));
        }
        let alpha_fnn = ckpt.params.get(&format!("dec.b{b}.pgca.alpha_fnn"))?.data()[0];
        layers.push(LayerGates {
            layer: b,
            attn,
            fnn: alpha_fnn.tanh(),
        });
    }
    let report = GateReport { layers };
    for l in &report.layers {
        for (lang, v) in &l.attn {
            if !(*v > -1.0 && *v < 1.0) {
                return Err(TgError::Invalid(format!(
                    "gate for {lang} in layer {} left (-1, 1): {v}",
                    l.layer
                )));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionMode, ModelCheckpoint, ModelConfig};
    use crate::rng::SeedRng;
    use crate::tensor::Tensor;

    fn stage2(mode: FusionMode) -> ModelCheckpoint {
        let base = ModelConfig {
            d: 8,
            feature_bins: 4,
            heads: 2,
            d_ff: 12,
            n_enc: 1,
            n_dec: 2,
            vocab_tgt: 8,
            max_t_s: 10,
            max_t_y: 6,
            fusion_mode: FusionMode::None,
            langs: vec![],
        };
        let fused = ModelConfig {
            fusion_mode: mode,
            langs: vec!["la".into(), "lb".into()],
            ..base.clone()
        };
        ModelCheckpoint::init_stage1(&base, &SeedRng::new(1))
            .unwrap()
            .to_stage2(&fused, &SeedRng::new(2))
            .unwrap()
    }

    #[test]
    fn fresh_stage2_reports_all_zeros() {
        let report = extract_gates(&stage2(FusionMode::FullPgca)).unwrap();
        assert_eq!(report.layers.len(), 2);
        for l in &report.layers {
            assert_eq!(l.attn.len(), 2);
            assert!(l.attn.iter().all(|(_, v)| *v == 0.0));
            assert_eq!(l.fnn, 0.0);
        }
        assert_eq!(report.mean_gate("la"), Some(0.0));
        assert_eq!(report.mean_gate("nope"), None);
    }

    #[test]
    fn values_stay_inside_unit_interval() {
        let mut ckpt = stage2(FusionMode::FullPgca);
        *ckpt.params.get_mut("dec.b0.pgca.alpha_attn0").unwrap() = Tensor::scalar(2.5);
        *ckpt.params.get_mut("dec.b1.pgca.alpha_attn1").unwrap() = Tensor::scalar(-4.0);
        let report = extract_gates(&ckpt).unwrap();
        for l in &report.layers {
            for (_, v) in &l.attn {
                assert!(*v > -1.0 && *v < 1.0);
            }
        }
        let csv = report.to_csv();
        assert!(csv.starts_with("layer,gate,value\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
    }

    #[test]
    fn ungated_modes_are_rejected() {
        assert!(extract_gates(&stage2(FusionMode::Addition)).is_err());
        assert!(extract_gates(&stage2(FusionMode::Concatenation)).is_err());

        let base = ModelConfig {
            d: 8,
            feature_bins: 4,
            heads: 2,
            d_ff: 12,
            n_enc: 1,
            n_dec: 2,
            vocab_tgt: 8,
            max_t_s: 10,
            max_t_y: 6,
            fusion_mode: FusionMode::None,
            langs: vec![],
        };
        let c1 = ModelCheckpoint::init_stage1(&base, &SeedRng::new(1)).unwrap();
        assert!(extract_gates(&c1).is_err());
    }
}

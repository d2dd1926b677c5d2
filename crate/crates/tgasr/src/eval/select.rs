//! Top-k auxiliary-language selection strategies.

use std::collections::BTreeMap;

use crate::error::{Result, TgError};

/// Which per-language score drives the ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    /// Single-language CER: lower is better.
    Cer,
    /// Proximity to the target language: higher is better.
    Proximity,
    /// Learned gate activation: higher is better.
    Gating,
}

impl SelectionMetric {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "cer" => SelectionMetric::Cer,
            "proximity" => SelectionMetric::Proximity,
            "gating" => SelectionMetric::Gating,
            other => {
                return Err(TgError::Config(format!(
                    "unknown selection metric {other:?} (expected cer, proximity, or gating)"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMetric::Cer => "cer",
            SelectionMetric::Proximity => "proximity",
            SelectionMetric::Gating => "gating",
        }
    }
}

/// Rank languages by score and return the best k, ties broken by language
/// id. CER sorts ascending; proximity and gating descending.
pub fn select_topk(
    scores: &BTreeMap<String, f64>,
    metric: SelectionMetric,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 || k > scores.len() {
        return Err(TgError::Invalid(format!(
            "select_topk: k = {k} out of range for {} languages",
            scores.len()
        )));
    }
    if let Some((lang, _)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(TgError::NonFinite(format!(
            "select_topk: score for {lang} is not finite"
        )));
    }
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(l, &v)| (l, v)).collect();
    ranked.sort_by(|(la, va), (lb, vb)| {
        let ord = match metric {
            SelectionMetric::Cer => va.partial_cmp(vb).unwrap(),
            SelectionMetric::Proximity | SelectionMetric::Gating => vb.partial_cmp(va).unwrap(),
        };
        ord.then_with(|| la.cmp(lb))
    });
    Ok(ranked.into_iter().take(k).map(|(l, _)| l.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(l, v)| (l.to_string(), *v)).collect()
    }

    // Reference CER table: Mandarin 11.87, Hindi 13.17, English 13.10,
    // French 12.98, Spanish 12.84.
    fn cer_table() -> BTreeMap<String, f64> {
        scores(&[
            ("mandarin", 11.87),
            ("hindi", 13.17),
            ("english", 13.10),
            ("french", 12.98),
            ("spanish", 12.84),
        ])
    }

    // Reference proximity-to-target column: 0.905, 0.854, 0.552, 0.821, 0.843.
    fn proximity_table() -> BTreeMap<String, f64> {
        scores(&[
            ("mandarin", 0.905),
            ("hindi", 0.854),
            ("english", 0.552),
            ("french", 0.821),
            ("spanish", 0.843),
        ])
    }

    #[test]
    fn cer_top2_is_mandarin_spanish() {
        let top = select_topk(&cer_table(), SelectionMetric::Cer, 2).unwrap();
        assert_eq!(top, vec!["mandarin", "spanish"]);
    }

    #[test]
    fn proximity_top2_is_mandarin_hindi() {
        let top = select_topk(&proximity_table(), SelectionMetric::Proximity, 2).unwrap();
        assert_eq!(top, vec!["mandarin", "hindi"]);
    }

    #[test]
    fn k_equals_l_includes_every_language_for_all_metrics() {
        let cer_all = select_topk(&cer_table(), SelectionMetric::Cer, 5).unwrap();
        let prox_all = select_topk(&proximity_table(), SelectionMetric::Proximity, 5).unwrap();
        let gate_all = select_topk(&proximity_table(), SelectionMetric::Gating, 5).unwrap();
        for set in [&cer_all, &prox_all, &gate_all] {
            let mut sorted = set.clone();
            sorted.sort();
            assert_eq!(
                sorted,
                vec!["english", "french", "hindi", "mandarin", "spanish"]
            );
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        assert!(select_topk(&cer_table(), SelectionMetric::Cer, 0).is_err());
        assert!(select_topk(&cer_table(), SelectionMetric::Cer, 6).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = scores(&[("zeta", 1.0), ("alpha", 1.0), ("mid", 0.5)]);
        let top = select_topk(&s, SelectionMetric::Gating, 2).unwrap();
        assert_eq!(top, vec!["alpha", "zeta"]);
        let top = select_topk(&s, SelectionMetric::Cer, 2).unwrap();
        assert_eq!(top, vec!["mid", "alpha"]);
    }

    #[test]
    fn invariant_under_positive_affine_transform() {
        let base = cer_table();
        let shifted: BTreeMap<String, f64> = base
            .iter()
            .map(|(l, v)| (l.clone(), 3.0 * v + 7.0))
            .collect();
        for metric in [
            SelectionMetric::Cer,
            SelectionMetric::Proximity,
            SelectionMetric::Gating,
        ] {
            for k in 1..=5 {
                assert_eq!(
                    select_topk(&base, metric, k).unwrap(),
                    select_topk(&shifted, metric, k).unwrap()
                );
            }
        }
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::scorer::ScorerPlugin;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub user_id: String,
    pub item_id: String,
    pub scorer: String,
    /// `None` when the scorer failed on this pair.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A pair to score, keyed by user and item.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair<'a> {
    pub user_id: &'a str,
    pub item_id: &'a str,
    pub reference: &'a str,
    pub candidate: &'a str,
}

/// One row per pair in input order, plus the number of failed rows.
pub fn score_set(plugin: &dyn ScorerPlugin, pairs: &[ScoredPair<'_>]) -> (Vec<ScoreRow>, usize) {
    let texts: Vec<(&str, &str)> = pairs.iter().map(|p| (p.reference, p.candidate)).collect();
    let scores = plugin.score_pairs(&texts);
    let mut failures = 0;
    let rows = pairs
        .iter()
        .zip(scores)
        .map(|(p, s)| {
            let (score, error) = match s {
                Ok(v) => (Some(v), None),
                Err(e) => {
                    failures += 1;
                    (None, Some(e))
                }
            };
            ScoreRow {
                user_id: p.user_id.to_string(),
                item_id: p.item_id.to_string(),
                scorer: plugin.name().to_string(),
                score,
                error,
            }
        })
        .collect();
    (rows, failures)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scorer: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
    pub failures: usize,
}

/// Population mean and standard deviation. Values are summed in ascending
/// order in both passes, so the result does not depend on input order.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    Ok((mean, (dev.iter().sum::<f64>() / n).sqrt()))
}

/// Per-scorer aggregates over successful rows, ordered by scorer name.
pub fn aggregate(rows: &[ScoreRow]) -> Result<Vec<Aggregate>> {
    let mut by: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let entry = by.entry(r.scorer.as_str()).or_default();
        match r.score {
            Some(v) => entry.0.push(v),
            None => entry.1 += 1,
        }
    }
    by.into_iter()
        .map(|(scorer, (values, failures))| {
            let (mean, std) = mean_std(&values)
                .map_err(|_| Error::Scorer(format!("scorer {scorer} has no successful rows")))?;
            Ok(Aggregate {
                scorer: scorer.to_string(),
                mean,
                std,
                count: values.len(),
                failures,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::scorer::TokenOverlap;

    fn row(scorer: &str, score: Option<f64>) -> ScoreRow {
        ScoreRow {
            user_id: "u".into(),
            item_id: "i".into(),
            scorer: scorer.into(),
            score,
            error: None,
        }
    }

    #[test]
    fn constant_scores_have_zero_spread() {
        let (m, s) = mean_std(&[0.3; 7]).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
        assert_eq!(s, 0.0);
        assert_eq!(mean_std(&[0.0, 1.0]).unwrap(), (0.5, 0.5));
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn failed_rows_are_excluded() {
        let rows = vec![row("a", Some(1.0)), row("a", None), row("a", Some(0.0)), row("b", Some(2.0))];
        let agg = aggregate(&rows).unwrap();
        assert_eq!(agg[0].count, 2);
        assert_eq!(agg[0].failures, 1);
        assert_eq!(agg[0].mean, 0.5);
        assert_eq!(agg[1].scorer, "b");
        assert!(aggregate(&[row("c", None)]).is_err());
    }

    #[test]
    fn score_set_preserves_order() {
        let pairs = [
            ScoredPair { user_id: "u1", item_id: "i1", reference: "a b", candidate: "a b" },
            ScoredPair { user_id: "u2", item_id: "i2", reference: "a", candidate: "z" },
        ];
        let (rows, failures) = score_set(&TokenOverlap, &pairs);
        assert_eq!(failures, 0);
        assert_eq!(rows[0].score, Some(1.0));
        assert_eq!(rows[1].score, Some(0.0));
        assert_eq!(rows[1].user_id, "u2");
    }
}

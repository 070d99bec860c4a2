pub mod report;
pub mod scorer;
pub mod table;
pub mod usr;

use std::collections::BTreeMap;

use crate::corpus::ExplanationRecord;
use crate::error::{Error, Result};

pub use report::{report, Generated, NamedSplit, Report, SplitTable};
pub use scorer::{token_overlap, Direction, ExternalScorer, ScorerPlugin, TokenOverlap};
pub use table::{aggregate, mean_std, score_set, Aggregate, ScoreRow, ScoredPair};
pub use usr::{normalize, usr, usr_with, Granularity};

/// Generated and reference explanations matched on `(user, item)`, in the
/// order of `generated`. Any key present on one side only is an error that
/// lists every such key.
pub fn align<'a>(
    generated: &'a [ExplanationRecord],
    references: &'a [ExplanationRecord],
) -> Result<Vec<(&'a ExplanationRecord, &'a ExplanationRecord)>> {
    let refs: BTreeMap<(&str, &str), &ExplanationRecord> =
        references.iter().map(|r| ((r.user_id.as_str(), r.item_id.as_str()), r)).collect();
    let gens: BTreeMap<(&str, &str), &ExplanationRecord> =
        generated.iter().map(|r| ((r.user_id.as_str(), r.item_id.as_str()), r)).collect();
    let mut missing: Vec<String> = Vec::new();
    for k in gens.keys() {
        if !refs.contains_key(k) {
            missing.push(format!("({}, {}) has no reference", k.0, k.1));
        }
    }
    for k in refs.keys() {
        if !gens.contains_key(k) {
            missing.push(format!("({}, {}) has no generated explanation", k.0, k.1));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("explanation keys do not align: {}", missing.join("; "))));
    }
    Ok(generated
        .iter()
        .map(|g| (g, refs[&(g.user_id.as_str(), g.item_id.as_str())]))
        .collect())
}

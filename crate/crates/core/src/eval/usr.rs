use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What counts as one "sentence" for the unique ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One explanation is one unit.
    #[default]
    Whole,
    /// Explanations are split into sentences at `.`, `!` or `?`.
    Sentence,
}

/// Trimmed, internal whitespace collapsed to single spaces, lowercased.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn sentences(text: &str) -> Vec<String> {
    text.split_inclusive(['.', '!', '?'])
        .map(normalize)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Unique-to-total ratio of the normalized explanations.
pub fn usr(explanations: &[String]) -> Result<f64> {
    usr_with(explanations, Granularity::Whole)
}

pub fn usr_with(explanations: &[String], granularity: Granularity) -> Result<f64> {
    let units: Vec<String> = match granularity {
        Granularity::Whole => explanations.iter().map(|e| normalize(e)).collect(),
        Granularity::Sentence => explanations.iter().flat_map(|e| sentences(e)).collect(),
    };
    if units.is_empty() {
        return Err(Error::EmptyInput);
    }
    let unique: HashSet<&str> = units.iter().map(String::as_str).collect();
    Ok(unique.len() as f64 / units.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_examples() {
        assert_eq!(usr(&v(&["a", "b", "c"])).unwrap(), 1.0);
        assert_eq!(usr(&v(&["a", "a", "b"])).unwrap(), 2.0 / 3.0);
        assert_eq!(usr(&v(&["  A  b ", "a b"])).unwrap(), 0.5);
        assert!(usr(&[]).is_err());
    }

    #[test]
    fn sentence_mode_splits_explanations() {
        let e = v(&["Good plot. Great pacing!", "good plot."]);
        assert_eq!(usr(&e).unwrap(), 1.0);
        assert_eq!(usr_with(&e, Granularity::Sentence).unwrap(), 2.0 / 3.0);
        assert!(usr_with(&v(&["  "]), Granularity::Sentence).is_err());
    }
}

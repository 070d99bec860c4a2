use std::collections::BTreeSet;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Scores `(reference, candidate)` pairs. Each pair may fail on its own.
pub trait ScorerPlugin {
    fn name(&self) -> &str;
    fn direction(&self) -> Direction;
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Vec<std::result::Result<f64, String>>;
}

/// Jaccard similarity of the lowercased alphanumeric word sets. Two texts
/// without words score 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct TokenOverlap;

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_overlap(reference: &str, candidate: &str) -> f64 {
    let a = word_set(reference);
    let b = word_set(candidate);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

impl ScorerPlugin for TokenOverlap {
    fn name(&self) -> &str {
        "token_overlap"
    }

    fn direction(&self) -> Direction {
        Direction::HigherBetter
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Vec<std::result::Result<f64, String>> {
        pairs.iter().map(|(r, c)| Ok(token_overlap(r, c))).collect()
    }
}

/// A scorer run as a child process. It reads one
/// `{"reference": .., "candidate": ..}` object per line on stdin and writes
/// one number per line on stdout. A non-zero exit fails every pair; an
/// unparsable or missing line fails its pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalScorer {
    pub name: String,
    pub command: Vec<String>,
    pub direction: Direction,
}

#[derive(Serialize)]
struct WirePair<'a> {
    reference: &'a str,
    candidate: &'a str,
}

impl ExternalScorer {
    fn run(&self, pairs: &[(&str, &str)]) -> Result<String> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::Scorer(format!("scorer {} has an empty command", self.name)))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Scorer(format!("cannot start {}: {e}", self.name)))?;
        let mut input = String::new();
        for (reference, candidate) in pairs {
            input.push_str(&serde_json::to_string(&WirePair { reference, candidate })?);
            input.push('\n');
        }
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Scorer(format!("{} did not finish: {e}", self.name)))?;
        // A scorer may exit without draining stdin; its exit status decides.
        let _ = writer.join();
        if !out.status.success() {
            return Err(Error::Scorer(format!(
                "{} exited with {}: {}",
                self.name,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }
}

impl ScorerPlugin for ExternalScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Vec<std::result::Result<f64, String>> {
        match self.run(pairs) {
            Err(e) => vec![Err(e.to_string()); pairs.len()],
            Ok(stdout) => {
                let mut lines = stdout.lines();
                (0..pairs.len())
                    .map(|k| match lines.next() {
                        None => Err(format!("no score for pair {k}")),
                        Some(line) => match line.trim().parse::<f64>() {
                            Ok(v) if v.is_finite() => Ok(v),
                            _ => Err(format!("unparsable score {line:?} for pair {k}")),
                        },
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_extremes() {
        assert_eq!(token_overlap("the plot was tense", "The plot was tense."), 1.0);
        assert_eq!(token_overlap("red fox", "blue whale"), 0.0);
        assert_eq!(token_overlap("a b", "b c"), 1.0 / 3.0);
        assert_eq!(token_overlap("", "..."), 1.0);
    }

    fn sh(name: &str, script: &str) -> ExternalScorer {
        ExternalScorer {
            name: name.into(),
            command: vec!["sh".into(), "-c".into(), script.into()],
            direction: Direction::HigherBetter,
        }
    }

    #[test]
    fn external_scorer_reads_one_value_per_line() {
        let s = sh("len", "while read -r line; do echo ${#line}; done");
        let out = s.score_pairs(&[("a", "b"), ("aa", "bb")]);
        assert_eq!(out.len(), 2);
        assert!(out[0].as_ref().unwrap() < out[1].as_ref().unwrap());
    }

    #[test]
    fn nonzero_exit_fails_every_row() {
        let out = sh("bad", "cat >/dev/null; echo 1; exit 3").score_pairs(&[("a", "b"), ("c", "d")]);
        assert!(out.iter().all(|r| r.is_err()));
    }

    #[test]
    fn short_or_garbled_output_fails_single_rows() {
        let out = sh("partial", "cat >/dev/null; echo 0.5; echo nope").score_pairs(&[("a", "b"), ("c", "d"), ("e", "f")]);
        assert_eq!(out[0], Ok(0.5));
        assert!(out[1].is_err() && out[2].is_err());
    }
}

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::table::{aggregate, Aggregate, ScoreRow};
use crate::eval::usr::{usr_with, Granularity};

/// A named subset of users, e.g. a sparsity bin.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedSplit {
    pub name: String,
    pub users: BTreeSet<String>,
}

/// A generated explanation, the unit USR is computed over.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated<'a> {
    pub user_id: &'a str,
    pub item_id: &'a str,
    pub text: &'a str,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub split: String,
    /// Explanations in the split.
    pub size: usize,
    pub usr: Option<f64>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tables: Vec<SplitTable>,
}

/// One line of the machine-readable report: one per split and scorer, or a
/// single line with no scorer for a split without scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReportLine {
    split: String,
    size: usize,
    usr: Option<f64>,
    scorer: Option<String>,
    mean: Option<f64>,
    std: Option<f64>,
    count: Option<usize>,
    failures: Option<usize>,
}

fn table(name: &str, rows: &[&ScoreRow], generated: &[&Generated<'_>], granularity: Granularity) -> Result<SplitTable> {
    let texts: Vec<String> = generated.iter().map(|g| g.text.to_string()).collect();
    let usr = if texts.is_empty() { None } else { Some(usr_with(&texts, granularity)?) };
    let owned: Vec<ScoreRow> = rows.iter().map(|r| (*r).clone()).collect();
    let mut scorers: Vec<&str> = owned.iter().map(|r| r.scorer.as_str()).collect();
    scorers.sort_unstable();
    scorers.dedup();
    let mut aggregates = Vec::new();
    for s in scorers {
        let mine: Vec<ScoreRow> = owned.iter().filter(|r| r.scorer == s).cloned().collect();
        match aggregate(&mine) {
            Ok(mut a) => aggregates.append(&mut a),
            Err(e) => log::warn!("split {name}: {e}"),
        }
    }
    Ok(SplitTable {
        split: name.to_string(),
        size: generated.len(),
        usr,
        aggregates,
    })
}

/// An `overall` table followed by one table per split, in the given order.
pub fn report(
    rows: &[ScoreRow],
    generated: &[Generated<'_>],
    splits: &[NamedSplit],
    granularity: Granularity,
) -> Result<Report> {
    let all_rows: Vec<&ScoreRow> = rows.iter().collect();
    let all_gen: Vec<&Generated<'_>> = generated.iter().collect();
    let mut tables = vec![table("overall", &all_rows, &all_gen, granularity)?];
    for s in splits {
        let r: Vec<&ScoreRow> = rows.iter().filter(|r| s.users.contains(&r.user_id)).collect();
        let g: Vec<&Generated<'_>> = generated.iter().filter(|g| s.users.contains(g.user_id)).collect();
        tables.push(table(&s.name, &r, &g, granularity)?);
    }
    Ok(Report { tables })
}

impl Report {
    pub fn table(&self, split: &str) -> Option<&SplitTable> {
        self.tables.iter().find(|t| t.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = Vec::new();
        for t in &self.tables {
            let base = ReportLine {
                split: t.split.clone(),
                size: t.size,
                usr: t.usr,
                scorer: None,
                mean: None,
                std: None,
                count: None,
                failures: None,
            };
            if t.aggregates.is_empty() {
                lines.push(base);
                continue;
            }
            for a in &t.aggregates {
                lines.push(ReportLine {
                    scorer: Some(a.scorer.clone()),
                    mean: Some(a.mean),
                    std: Some(a.std),
                    count: Some(a.count),
                    failures: Some(a.failures),
                    ..base.clone()
                });
            }
        }
        crate::jsonl::to_string(&lines)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let lines: Vec<ReportLine> = crate::jsonl::parse(text, Path::new("<report>"))?;
        let mut tables: Vec<SplitTable> = Vec::new();
        for l in lines {
            if tables.last().is_none_or(|t| t.split != l.split) {
                tables.push(SplitTable {
                    split: l.split.clone(),
                    size: l.size,
                    usr: l.usr,
                    aggregates: Vec::new(),
                });
            }
            if let Some(scorer) = l.scorer {
                let missing = || Error::Data(format!("report line for {scorer} lacks its statistics"));
                let a = Aggregate {
                    mean: l.mean.ok_or_else(missing)?,
                    std: l.std.ok_or_else(missing)?,
                    count: l.count.ok_or_else(missing)?,
                    failures: l.failures.ok_or_else(missing)?,
                    scorer,
                };
                tables.last_mut().expect("table pushed above").aggregates.push(a);
            }
        }
        Ok(Report { tables })
    }

    /// Plain-text tables.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let usr = t.usr.map_or("-".to_string(), |u| format!("{u:.4}"));
            let _ = writeln!(out, "== {} (n={}, USR {usr})", t.split, t.size);
            if t.aggregates.is_empty() {
                let _ = writeln!(out, "   no scores");
            } else {
                let _ = writeln!(out, "   {:<20} {:>10} {:>10} {:>7} {:>7}", "scorer", "mean", "std", "count", "failed");
                for a in &t.aggregates {
                    let _ = writeln!(
                        out,
                        "   {:<20} {:>10.4} {:>10.4} {:>7} {:>7}",
                        a.scorer, a.mean, a.std, a.count, a.failures
                    );
                }
            }
            out.push('\n');
        }
        out
    }
}

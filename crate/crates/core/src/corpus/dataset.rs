use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One user-item interaction with its review and the item's metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub user_id: String,
    pub item_id: String,
    pub review: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub side: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    /// Number of `(user, item)` pairs that appeared more than once.
    pub duplicate_warnings: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

/// Dense ids for the users and items of a dataset, in sorted external-id
/// order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawIndex", into = "RawIndex")]
pub struct IdIndex {
    pub users: Vec<String>,
    pub items: Vec<String>,
    user_pos: HashMap<String, usize>,
    item_pos: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawIndex {
    users: Vec<String>,
    items: Vec<String>,
}

impl From<RawIndex> for IdIndex {
    fn from(raw: RawIndex) -> Self {
        IdIndex::new(raw.users, raw.items)
    }
}

impl From<IdIndex> for RawIndex {
    fn from(idx: IdIndex) -> Self {
        RawIndex {
            users: idx.users,
            items: idx.items,
        }
    }
}

impl IdIndex {
    pub fn new(users: Vec<String>, items: Vec<String>) -> Self {
        let user_pos = users.iter().enumerate().map(|(k, u)| (u.clone(), k)).collect();
        let item_pos = items.iter().enumerate().map(|(k, i)| (i.clone(), k)).collect();
        Self {
            users,
            items,
            user_pos,
            item_pos,
        }
    }

    pub fn user(&self, id: &str) -> Option<usize> {
        self.user_pos.get(id).copied()
    }

    pub fn item(&self, id: &str) -> Option<usize> {
        self.item_pos.get(id).copied()
    }

    pub fn require_user(&self, id: &str) -> Result<usize> {
        self.user(id).ok_or_else(|| Error::UnknownId(format!("user {id}")))
    }

    pub fn require_item(&self, id: &str) -> Result<usize> {
        self.item(id).ok_or_else(|| Error::UnknownId(format!("item {id}")))
    }
}

fn id_field(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("field {key} must be a nonempty string or a number")),
        None => Err(format!("missing field {key}")),
    }
}

fn string_map(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    match obj.get(key) {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let text = match v {
                    Value::String(s) => s.clone(),
                    Value::Null => continue,
                    other => other.to_string(),
                };
                out.insert(k.clone(), text);
            }
        }
        Some(_) => return Err(format!("field {key} must be an object")),
    }
    Ok(out)
}

fn parse_record(line: &str) -> std::result::Result<DatasetRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record must be a JSON object")?;
    let user_id = id_field(obj, "user_id")?;
    let item_id = id_field(obj, "item_id")?;
    let review = match obj.get("review") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err("field review must be a string".into()),
        None => return Err("missing field review".into()),
    };
    let rating = match obj.get("rating") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or("field rating must be a number")?),
    };
    Ok(DatasetRecord {
        user_id,
        item_id,
        review,
        rating,
        meta: string_map(obj, "meta")?,
        side: string_map(obj, "side")?,
    })
}

impl Dataset {
    /// Parses line-delimited records. Blank lines are skipped; a repeated
    /// `(user, item)` pair replaces the earlier record in place and counts
    /// one warning.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut records: Vec<DatasetRecord> = Vec::new();
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        let mut duplicate_warnings = 0;
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = parse_record(line).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message,
            })?;
            let key = (rec.user_id.clone(), rec.item_id.clone());
            match seen.get(&key) {
                Some(&at) => {
                    duplicate_warnings += 1;
                    records[at] = rec;
                }
                None => {
                    seen.insert(key, records.len());
                    records.push(rec);
                }
            }
        }
        if duplicate_warnings > 0 {
            log::warn!(
                "{}: {duplicate_warnings} duplicate (user, item) pairs, last occurrence kept",
                path.display()
            );
        }
        Ok(Self {
            records,
            duplicate_warnings,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn index(&self) -> IdIndex {
        let users: BTreeSet<&str> = self.records.iter().map(|r| r.user_id.as_str()).collect();
        let items: BTreeSet<&str> = self.records.iter().map(|r| r.item_id.as_str()).collect();
        IdIndex::new(
            users.into_iter().map(str::to_string).collect(),
            items.into_iter().map(str::to_string).collect(),
        )
    }

    pub fn stats(&self) -> DatasetStats {
        let idx = self.index();
        DatasetStats {
            users: idx.users.len(),
            items: idx.items.len(),
            interactions: self.records.len(),
        }
    }

    /// Item metadata merged over all records of each item. Later records
    /// win per key.
    pub fn item_metadata(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for r in &self.records {
            let entry = out.entry(r.item_id.clone()).or_default();
            for (k, v) in &r.meta {
                entry.insert(k.clone(), v.clone());
            }
        }
        out
    }

    /// Record of the pair `(user, item)`, if any.
    pub fn find(&self, user: &str, item: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.user_id == user && r.item_id == item)
    }
}

/// Loads a line-delimited dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::parse(&text, path)
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::backend::{GenInput, GenRequest, Provenance, TextGenerator};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::text::MAX_WORDS;

pub const ITEM_PROFILE_PROMPT: &str = include_str!("../../assets/item_profile_prompt.txt");
pub const USER_PROFILE_PROMPT: &str = include_str!("../../assets/user_profile_prompt.txt");

/// Replaces every `{name}` in `template` with its value. Unknown or
/// unterminated placeholders are errors.
pub fn fill_prompt(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Template(format!("unterminated placeholder in {template:?}")))?;
        let name = &after[..close];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .ok_or_else(|| Error::Template(format!("unknown placeholder {{{name}}}")))?;
        out.push_str(value.1);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Per-subject stream id, so each user or item samples independently of
/// the order subjects are processed in.
pub(crate) fn subject_stream(kind: u8, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in std::iter::once(kind).chain(id.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h | 1 << 63
}

/// Seeded sample of `min(k, n)` indices out of `0..n` without replacement,
/// sorted ascending.
pub fn sample_sorted(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx = rng.sample_indices(n, k);
    idx.sort_unstable();
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    User,
    Item,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub subject: Subject,
    pub subject_id: String,
    pub text: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub max_words: usize,
    /// Reviews shown to the backend per item profile.
    pub review_sample: usize,
    /// Interacted items summarised per user profile.
    pub item_sample: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            max_words: MAX_WORDS,
            review_sample: 3,
            item_sample: 3,
            seed: 0,
        }
    }
}

fn finish(subject: Subject, id: &str, text: String, backend: &dyn TextGenerator) -> Result<Profile> {
    if text.trim().is_empty() {
        return Err(Error::Backend {
            status: None,
            message: format!("empty profile for {subject:?} {id}"),
        });
    }
    Ok(Profile {
        subject,
        subject_id: id.to_string(),
        text,
        provenance: backend.provenance(),
    })
}

/// Profile of one item from its metadata and a seeded sample of its reviews.
/// `title` falls back to `name` and then to the id; `category` to
/// `general`.
pub fn generate_item_profile(
    backend: &dyn TextGenerator,
    item_id: &str,
    meta: &BTreeMap<String, String>,
    reviews: &[String],
    template: &str,
    config: &ProfileConfig,
) -> Result<Profile> {
    let title = meta.get("title").or_else(|| meta.get("name")).cloned().unwrap_or_else(|| item_id.to_string());
    let category = meta.get("category").cloned().unwrap_or_else(|| "general".into());
    let metadata: Vec<(String, String)> = meta
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "title" | "name" | "category"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut rng = Rng::derived(config.seed, subject_stream(b'i', item_id));
    let sampled: Vec<String> = sample_sorted(reviews.len(), config.review_sample, &mut rng)
        .into_iter()
        .map(|k| reviews[k].clone())
        .collect();
    let meta_text = metadata.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ");
    let review_text = sampled.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n");
    let max_words = config.max_words.to_string();
    let prompt = fill_prompt(
        template,
        &[
            ("max_words", &max_words),
            ("title", &title),
            ("category", &category),
            ("metadata", &meta_text),
            ("reviews", &review_text),
        ],
    )?;
    let request = GenRequest {
        input: GenInput::Item {
            title,
            category,
            metadata,
            reviews: sampled,
        },
        prompt,
        max_words: config.max_words,
        seed: config.seed,
    };
    finish(Subject::Item, item_id, backend.generate(&request)?, backend)
}

/// Profile of one user from a seeded sample of the profiles of the items
/// they interacted with. `item_profiles` may come in any order; the sample is
/// taken and presented in item-id order.
pub fn generate_user_profile(
    backend: &dyn TextGenerator,
    user_id: &str,
    item_profiles: &[(&str, &str)],
    template: &str,
    config: &ProfileConfig,
) -> Result<Profile> {
    if item_profiles.is_empty() {
        return Err(Error::Data(format!("user {user_id} has no interacted items with a profile")));
    }
    let mut sorted = item_profiles.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let chosen = sampled_items(user_id, sorted.len(), config);
    let texts: Vec<String> = chosen.iter().map(|&k| sorted[k].1.to_string()).collect();
    let listing = texts.iter().map(|t| format!("- {t}")).collect::<Vec<_>>().join("\n");
    let max_words = config.max_words.to_string();
    let prompt = fill_prompt(template, &[("max_words", &max_words), ("item_profiles", &listing)])?;
    let request = GenRequest {
        input: GenInput::User { item_profiles: texts },
        prompt,
        max_words: config.max_words,
        seed: config.seed,
    };
    finish(Subject::User, user_id, backend.generate(&request)?, backend)
}

/// Positions, within the id-sorted list of a user's `n` items, that
/// [`generate_user_profile`] summarises.
pub fn sampled_items(user_id: &str, n: usize, config: &ProfileConfig) -> Vec<usize> {
    let mut rng = Rng::derived(config.seed, subject_stream(b'u', user_id));
    sample_sorted(n, config.item_sample, &mut rng)
}

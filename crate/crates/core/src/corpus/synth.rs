//! Planted synthetic interaction and review data.
//!
//! Users and items are split evenly into groups and placed on a circle
//! within their group. Each user picks items among the `window` nearest
//! items of its own group; with probability `cross_group_rate` a pick goes
//! to a random item of another group instead. Every item carries a unique
//! pair of aspect words, and every review is a fixed sentence built from the
//! user's group category, the user's mood (its circle sector) and the
//! item's aspects.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::{Dataset, DatasetRecord};
use crate::error::{Error, Result};
use crate::numerics::Rng;

const CATEGORIES: &[&str] = &[
    "mystery", "comedy", "fantasy", "horror", "romance", "western", "thriller", "drama",
];
const MOODS: &[&str] = &["cozy", "dark", "bright", "quiet"];
const PLOT_WORDS: &[&str] = &[
    "twisty", "gentle", "layered", "bold", "tender", "clever", "somber", "playful", "tense", "epic", "quirky",
    "stark", "lush", "wry", "haunting",
];
const PACING_WORDS: &[&str] = &[
    "brisk", "steady", "languid", "frantic", "measured", "relaxed", "rapid", "patient", "uneven", "lively",
    "sluggish", "breezy", "tight", "loose", "rhythmic",
];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "sa", "tor", "vel", "zin", "bra", "do", "fen", "gul", "hap", "jor", "ki", "mun",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub groups: usize,
    /// Mean interactions drawn per user.
    pub interactions_per_user: usize,
    /// Each user draws uniformly within this distance of the mean (at least
    /// one, at most `window`), so training frequencies vary across users.
    pub interaction_spread: usize,
    /// Candidate items per user: the nearest ones of its group.
    pub window: usize,
    pub cross_group_rate: f64,
    /// Draw each user's mood at random instead of from its circle sector,
    /// so nothing observable predicts it.
    pub independent_moods: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 200,
            groups: 2,
            interactions_per_user: 10,
            interaction_spread: 6,
            window: 16,
            cross_group_rate: 0.05,
            independent_moods: false,
            seed: 0,
        }
    }
}

/// What the generator planted, by dense index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    pub categories: Vec<String>,
    pub user_group: Vec<usize>,
    pub item_group: Vec<usize>,
    pub user_mood: Vec<String>,
    pub item_title: Vec<String>,
    pub item_aspects: Vec<(String, String)>,
    /// `(user, item)` pairs, ascending.
    pub interactions: Vec<(usize, usize)>,
}

impl PlantedStructure {
    pub fn user_id(&self, u: usize) -> String {
        format!("u{u:0w$}", w = digits(self.user_group.len()))
    }

    pub fn item_id(&self, i: usize) -> String {
        format!("i{i:0w$}", w = digits(self.item_group.len()))
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// The review a user of `category` and `mood` writes about an item with
/// aspects `(plot, pacing)`.
pub fn synthetic_review(category: &str, mood: &str, plot: &str, pacing: &str) -> String {
    format!("As a {category} fan who likes {mood} stories, I loved the {plot} plot and the {pacing} pacing.")
}

fn members(count: usize, groups: usize, g: usize) -> Vec<usize> {
    (0..count).filter(|k| k % groups == g).collect()
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn unique_titles(n: usize, rng: &mut Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let parts = 2 + rng.below(2);
        let mut t: String = (0..parts).map(|_| SYLLABLES[rng.below(SYLLABLES.len())]).collect();
        if seen.insert(t.clone()) {
            t[..1].make_ascii_uppercase();
            out.push(t);
        }
    }
    out
}

/// Generates records and the structure behind them; a pure function of the
/// config.
pub fn synthesize_dataset(config: &SynthConfig) -> Result<(Dataset, PlantedStructure)> {
    let SynthConfig {
        users: m,
        items: n,
        groups,
        ..
    } = *config;
    if m == 0 || n == 0 || groups == 0 {
        return Err(Error::InvalidArgument("users, items and groups must be at least 1".into()));
    }
    if groups > m || groups > n {
        return Err(Error::InvalidArgument(format!(
            "{groups} groups cannot be filled by {m} users and {n} items"
        )));
    }
    if n > PLOT_WORDS.len() * PACING_WORDS.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} items have distinct aspect pairs",
            PLOT_WORDS.len() * PACING_WORDS.len()
        )));
    }
    if !(0.0..=1.0).contains(&config.cross_group_rate) || config.interactions_per_user == 0 {
        return Err(Error::InvalidArgument(
            "cross_group_rate must lie in [0, 1] and interactions_per_user be positive".into(),
        ));
    }
    let mut rng = Rng::derived(config.seed, 0x5e7);

    let categories: Vec<String> = (0..groups)
        .map(|g| CATEGORIES.get(g).map_or_else(|| format!("genre{g}"), |c| c.to_string()))
        .collect();
    let user_group: Vec<usize> = (0..m).map(|u| u % groups).collect();
    let item_group: Vec<usize> = (0..n).map(|i| i % groups).collect();

    // Positions on the unit circle: items evenly spaced, users jittered.
    let mut item_pos = vec![0.0; n];
    let mut user_pos = vec![0.0; m];
    for g in 0..groups {
        let items = members(n, groups, g);
        for (rank, &i) in items.iter().enumerate() {
            item_pos[i] = (rank as f64 + 0.5) / items.len() as f64;
        }
        let users = members(m, groups, g);
        for (rank, &u) in users.iter().enumerate() {
            user_pos[u] = (rank as f64 + rng.next_f64()) / users.len() as f64;
        }
    }
    let mut mood_rng = Rng::derived(config.seed, 0x5e8);
    let user_mood: Vec<String> = user_pos
        .iter()
        .map(|&p| {
            let k = if config.independent_moods {
                mood_rng.below(MOODS.len())
            } else {
                ((p * MOODS.len() as f64) as usize).min(MOODS.len() - 1)
            };
            MOODS[k].to_string()
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..PLOT_WORDS.len())
        .flat_map(|a| (0..PACING_WORDS.len()).map(move |b| (a, b)))
        .collect();
    rng.shuffle(&mut pairs);
    let item_aspects: Vec<(String, String)> = pairs[..n]
        .iter()
        .map(|&(a, b)| (PLOT_WORDS[a].to_string(), PACING_WORDS[b].to_string()))
        .collect();
    let item_title = unique_titles(n, &mut rng);

    let mut count_rng = Rng::derived(config.seed, 0x5e9);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for u in 0..m {
        let low = config.interactions_per_user.saturating_sub(config.interaction_spread).max(1);
        let count = low + count_rng.below(config.interactions_per_user + config.interaction_spread + 1 - low);
        let g = user_group[u];
        let mut own = members(n, groups, g);
        own.sort_by(|&a, &b| {
            circular_distance(user_pos[u], item_pos[a])
                .total_cmp(&circular_distance(user_pos[u], item_pos[b]))
                .then(a.cmp(&b))
        });
        own.truncate(config.window.max(1));
        let others: Vec<usize> = (0..n).filter(|&i| item_group[i] != g).collect();
        let picks = rng.sample_indices(own.len(), count);
        for k in picks {
            let item = if !others.is_empty() && rng.bernoulli(config.cross_group_rate) {
                others[rng.below(others.len())]
            } else {
                own[k]
            };
            edges.insert((u, item));
        }
    }
    // Items nobody picked get their nearest same-group user.
    for i in 0..n {
        if edges.iter().any(|&(_, j)| j == i) {
            continue;
        }
        let g = item_group[i];
        let u = members(m, groups, g)
            .into_iter()
            .min_by(|&a, &b| {
                circular_distance(user_pos[a], item_pos[i])
                    .total_cmp(&circular_distance(user_pos[b], item_pos[i]))
                    .then(a.cmp(&b))
            })
            .expect("every group has users");
        edges.insert((u, i));
    }

    let structure = PlantedStructure {
        categories,
        user_group,
        item_group,
        user_mood,
        item_title,
        item_aspects,
        interactions: edges.into_iter().collect(),
    };
    let records = structure
        .interactions
        .iter()
        .map(|&(u, i)| {
            let (plot, pacing) = &structure.item_aspects[i];
            let review = synthetic_review(
                &structure.categories[structure.user_group[u]],
                &structure.user_mood[u],
                plot,
                pacing,
            );
            DatasetRecord {
                user_id: structure.user_id(u),
                item_id: structure.item_id(i),
                review,
                rating: Some(4.0 + (rng.below(2) as f64)),
                meta: [
                    ("title", structure.item_title[i].clone()),
                    ("category", structure.categories[structure.item_group[i]].clone()),
                    ("plot", plot.clone()),
                    ("pacing", pacing.clone()),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
                side: Default::default(),
            }
        })
        .collect();
    Ok((
        Dataset {
            records,
            duplicate_warnings: 0,
        },
        structure,
    ))
}

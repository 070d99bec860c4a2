//! Structured prompts with reserved slots for the adapted embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minilm::vocab::{Vocabulary, BOS, EOS, EXPLAIN_POS, ITEM_EMBED, USER_EMBED};

pub const DEFAULT_TEMPLATE: &str = include_str!("../../assets/explain_prompt.txt");

const USER_PROFILE_SLOT: &str = "{user_profile}";
const ITEM_PROFILE_SLOT: &str = "{item_profile}";

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Text(String),
    Special(usize),
    UserProfile,
    ItemProfile,
}

/// Parsed prompt template. The text must contain `<USER_EMBED>`,
/// `<ITEM_EMBED>` and `<EXPLAIN_POS>` exactly once each, in that order, and
/// may contain `{user_profile}` and `{item_profile}` at most once each.
/// Everything after `<EXPLAIN_POS>` is ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    segments: Vec<Segment>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled prompt template is valid")
    }
}

fn count(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        let markers = [
            ("<USER_EMBED>", USER_EMBED),
            ("<ITEM_EMBED>", ITEM_EMBED),
            ("<EXPLAIN_POS>", EXPLAIN_POS),
        ];
        for (name, _) in markers {
            match count(source, name) {
                1 => {}
                0 => return Err(Error::Template(format!("template is missing {name}"))),
                n => return Err(Error::Template(format!("template contains {name} {n} times"))),
            }
        }
        let offsets: Vec<usize> = markers.iter().map(|(n, _)| source.find(n).unwrap()).collect();
        if !(offsets[0] < offsets[1] && offsets[1] < offsets[2]) {
            return Err(Error::Template(
                "placeholders must appear in the order <USER_EMBED>, <ITEM_EMBED>, <EXPLAIN_POS>".into(),
            ));
        }
        for slot in [USER_PROFILE_SLOT, ITEM_PROFILE_SLOT] {
            if count(source, slot) > 1 {
                return Err(Error::Template(format!("template contains {slot} more than once")));
            }
        }

        let mut segments = Vec::new();
        let mut rest = &source[..offsets[2] + "<EXPLAIN_POS>".len()];
        let tags: [(&str, Segment); 5] = [
            (markers[0].0, Segment::Special(USER_EMBED)),
            (markers[1].0, Segment::Special(ITEM_EMBED)),
            (markers[2].0, Segment::Special(EXPLAIN_POS)),
            (USER_PROFILE_SLOT, Segment::UserProfile),
            (ITEM_PROFILE_SLOT, Segment::ItemProfile),
        ];
        while !rest.is_empty() {
            let next = tags
                .iter()
                .filter_map(|(t, seg)| rest.find(t).map(|at| (at, *t, seg)))
                .min_by_key(|&(at, _, _)| at);
            match next {
                Some((at, tag, seg)) => {
                    if at > 0 {
                        segments.push(Segment::Text(rest[..at].to_string()));
                    }
                    segments.push(seg.clone());
                    rest = &rest[at + tag.len()..];
                }
                None => {
                    segments.push(Segment::Text(rest.to_string()));
                    rest = "";
                }
            }
        }
        Ok(Self {
            source: source.to_string(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Optional natural-language side information for one prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profiles {
    pub user: String,
    pub item: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub user_id: usize,
    pub item_id: usize,
    /// Prompt tokens, beginning with `BOS` and ending with `EXPLAIN_POS`.
    pub tokens: Vec<usize>,
    pub user_pos: usize,
    pub item_pos: usize,
    pub explain_pos: usize,
    /// Explanation tokens followed by `EOS`; empty at inference time.
    pub targets: Vec<usize>,
    pub include_profiles: bool,
}

impl PromptInstance {
    /// Prompt and targets as one sequence.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = self.tokens.clone();
        s.extend_from_slice(&self.targets);
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len() + self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Positions whose next-token prediction is scored: `explain_pos` up to
    /// the position before the last target.
    pub fn scored_positions(&self) -> Vec<usize> {
        (0..self.targets.len()).map(|k| self.explain_pos + k).collect()
    }

    pub fn with_targets(mut self, vocab: &Vocabulary, explanation: &str) -> Self {
        self.targets = vocab.encode(explanation);
        self.targets.push(EOS);
        self
    }
}

/// Tokenises the filled template. With `profiles = None` the profile slots
/// are left empty.
pub fn build_prompt(
    vocab: &Vocabulary,
    template: &PromptTemplate,
    user_id: usize,
    item_id: usize,
    profiles: Option<&Profiles>,
) -> PromptInstance {
    let mut tokens = vec![BOS];
    let (mut user_pos, mut item_pos, mut explain_pos) = (0, 0, 0);
    for seg in &template.segments {
        match seg {
            Segment::Text(t) => tokens.extend(vocab.encode(t)),
            Segment::Special(id) => {
                let at = tokens.len();
                match *id {
                    USER_EMBED => user_pos = at,
                    ITEM_EMBED => item_pos = at,
                    _ => explain_pos = at,
                }
                tokens.push(*id);
            }
            Segment::UserProfile => {
                if let Some(p) = profiles {
                    tokens.extend(vocab.encode(&format!(" {}", p.user)));
                }
            }
            Segment::ItemProfile => {
                if let Some(p) = profiles {
                    tokens.extend(vocab.encode(&format!(" {}", p.item)));
                }
            }
        }
    }
    PromptInstance {
        user_id,
        item_id,
        tokens,
        user_pos,
        item_pos,
        explain_pos,
        targets: Vec::new(),
        include_profiles: profiles.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles() -> Profiles {
        Profiles {
            user: "enjoys quiet stories".into(),
            item: "a gritty mystery".into(),
        }
    }

    #[test]
    fn positions_are_ordered() {
        let v = Vocabulary::bytes_only();
        let t = PromptTemplate::parse("x <USER_EMBED> y <ITEM_EMBED> z <EXPLAIN_POS>").unwrap();
        let p = build_prompt(&v, &t, 0, 0, None);
        assert!(p.user_pos < p.item_pos && p.item_pos < p.explain_pos && p.explain_pos < p.tokens.len());
        assert_eq!(p.tokens[p.user_pos], USER_EMBED);
        assert_eq!(p.tokens[p.item_pos], ITEM_EMBED);
        assert_eq!(p.tokens[p.explain_pos], EXPLAIN_POS);
        assert_eq!(p.explain_pos, p.tokens.len() - 1);
        assert_eq!(p, build_prompt(&v, &t, 0, 0, None));
    }

    #[test]
    fn malformed_templates_are_rejected() {
        for bad in [
            "<USER_EMBED><ITEM_EMBED>",
            "<USER_EMBED><USER_EMBED><ITEM_EMBED><EXPLAIN_POS>",
            "<ITEM_EMBED><USER_EMBED><EXPLAIN_POS>",
            "<USER_EMBED>{user_profile}{user_profile}<ITEM_EMBED><EXPLAIN_POS>",
        ] {
            assert!(matches!(PromptTemplate::parse(bad), Err(Error::Template(_))), "{bad}");
        }
    }

    #[test]
    fn profiles_only_change_their_spans() {
        let v = Vocabulary::bytes_only();
        let t = PromptTemplate::default();
        let with = build_prompt(&v, &t, 3, 4, Some(&profiles()));
        let without = build_prompt(&v, &t, 3, 4, None);
        assert!(with.include_profiles && !without.include_profiles);
        let user_span = v.encode(" enjoys quiet stories").len();
        let item_span = v.encode(" a gritty mystery").len();
        assert_eq!(with.tokens.len(), without.tokens.len() + user_span + item_span);
        assert_eq!(with.user_pos, without.user_pos);
        assert_eq!(with.item_pos, without.item_pos + user_span);
        assert_eq!(with.explain_pos, without.explain_pos + user_span + item_span);

        // removing the two profile spans from `with` recovers `without`
        let user_at = with.tokens.windows(user_span).position(|w| w == v.encode(" enjoys quiet stories").as_slice()).unwrap();
        let mut stripped = with.tokens.clone();
        stripped.drain(user_at..user_at + user_span);
        let item_at = stripped.windows(item_span).position(|w| w == v.encode(" a gritty mystery").as_slice()).unwrap();
        stripped.drain(item_at..item_at + item_span);
        assert_eq!(stripped, without.tokens);
    }

    #[test]
    fn targets_end_with_eos() {
        let v = Vocabulary::bytes_only();
        let p = build_prompt(&v, &PromptTemplate::default(), 0, 0, None).with_targets(&v, "ok");
        assert_eq!(p.targets, vec![v.encode("o")[0], v.encode("k")[0], EOS]);
        assert_eq!(p.scored_positions(), vec![p.explain_pos, p.explain_pos + 1, p.explain_pos + 2]);
        assert_eq!(p.sequence().len(), p.len());
    }
}

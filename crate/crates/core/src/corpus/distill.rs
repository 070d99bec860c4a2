use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::backend::{GenInput, GenRequest, Provenance, TextGenerator};
use crate::corpus::profiles::fill_prompt;
use crate::error::{Error, Result};
use crate::text::{truncate_words, MAX_WORDS};

pub const DISTILL_PROMPT: &str = include_str!("../../assets/distill_prompt.txt");

/// A ground-truth or generated explanation for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub user_id: String,
    pub item_id: String,
    pub text: String,
    pub provenance: Provenance,
}

/// Explanation distilled from a review alone. The prompt carries nothing
/// but the review and the word cap, and the result is cut to `max_words`.
pub fn distill_explanation(
    backend: &dyn TextGenerator,
    review: &str,
    template: &str,
    max_words: usize,
    seed: u64,
) -> Result<String> {
    if review.trim().is_empty() {
        return Err(Error::InvalidArgument("cannot distill an empty review".into()));
    }
    let cap = max_words.to_string();
    let prompt = fill_prompt(template, &[("max_words", &cap), ("review", review)])?;
    let request = GenRequest {
        input: GenInput::Distill { review: review.to_string() },
        prompt,
        max_words,
        seed,
    };
    let text = backend.generate(&request)?;
    Ok(truncate_words(text.trim(), max_words).to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub max_words: usize,
    /// Upper bound on concurrent backend calls.
    pub max_in_flight: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            max_words: MAX_WORDS,
            max_in_flight: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillOutcome {
    /// `(input index, explanation)` in input order.
    pub explanations: Vec<(usize, String)>,
    pub skipped: Vec<Skipped>,
}

/// Distills every review, skipping (and logging) the ones the backend fails
/// on. Calls run on up to `max_in_flight` threads; results keep input order.
pub fn distill_batch(
    backend: &dyn TextGenerator,
    reviews: &[&str],
    template: &str,
    config: &DistillConfig,
) -> DistillOutcome {
    let slots: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..reviews.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.clamp(1, reviews.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= reviews.len() {
                    break;
                }
                let r = distill_explanation(backend, reviews[k], template, config.max_words, config.seed);
                slots.lock().expect("distill slots")[k] = Some(r);
            });
        }
    });
    let mut out = DistillOutcome::default();
    for (index, slot) in slots.into_inner().expect("distill slots").into_iter().enumerate() {
        match slot.expect("every review is processed") {
            Ok(text) => out.explanations.push((index, text)),
            Err(e) => {
                log::warn!("skipping review {index}: {e}");
                out.skipped.push(Skipped {
                    index,
                    reason: e.to_string(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::backend::TemplateBackend;
    use crate::text::word_count;

    struct Echo;

    impl TextGenerator for Echo {
        fn generate(&self, request: &GenRequest) -> Result<String> {
            match &request.input {
                GenInput::Distill { review } if review.contains("FAIL") => Err(Error::Backend {
                    status: Some(500),
                    message: "injected".into(),
                }),
                GenInput::Distill { review } => Ok(review.repeat(3)),
                _ => unreachable!(),
            }
        }

        fn provenance(&self) -> Provenance {
            Provenance::External
        }
    }

    #[test]
    fn template_output_mentions_keywords() {
        let out = distill_explanation(&TemplateBackend, "Loved the fast shipping and the plot.", DISTILL_PROMPT, 50, 0).unwrap();
        assert!(word_count(&out) <= 50);
        for kw in ["fast", "shipping", "plot"] {
            assert!(out.contains(kw), "{out}");
        }
    }

    #[test]
    fn prompt_contains_only_the_review() {
        let prompt = fill_prompt(DISTILL_PROMPT, &[("max_words", "50"), ("review", "nice soup")]).unwrap();
        assert!(prompt.contains("nice soup"));
        assert!(!prompt.contains('{'));
    }

    #[test]
    fn overlong_output_is_capped() {
        let review = vec!["word"; 27].join(" ");
        let out = distill_explanation(&Echo, &review, "{review}", 50, 0).unwrap();
        assert_eq!(word_count(&out), 50);
    }

    #[test]
    fn empty_review_is_rejected() {
        assert!(distill_explanation(&TemplateBackend, "  ", DISTILL_PROMPT, 50, 0).is_err());
    }

    #[test]
    fn batch_skips_failures_and_keeps_order() {
        let reviews: Vec<String> = (0..10).map(|k| if k == 6 { "FAIL".into() } else { format!("r{k} ") }).collect();
        let refs: Vec<&str> = reviews.iter().map(String::as_str).collect();
        for max_in_flight in [1, 4, 32] {
            let out = distill_batch(&Echo, &refs, "{review}", &DistillConfig { max_in_flight, ..DistillConfig::default() });
            assert_eq!(out.explanations.len(), 9);
            assert_eq!(out.skipped.len(), 1);
            assert_eq!(out.skipped[0].index, 6);
            let order: Vec<usize> = out.explanations.iter().map(|e| e.0).collect();
            assert_eq!(order, [0, 1, 2, 3, 4, 5, 7, 8, 9]);
            assert_eq!(out.explanations[2].1, "r2 r2 r2");
        }
    }
}

use proptest::prelude::*;

use recexplain::eval::{mean_std, normalize, token_overlap, usr};
use recexplain::graph_cf::{final_embeddings, propagate, Edge, InteractionGraph, NodeEmbeddings, Split};
use recexplain::numerics::Rng;
use recexplain::text::{truncate_words, word_count};

fn graph(users: usize, items: usize, mask: &[bool]) -> Option<InteractionGraph> {
    let edges = (0..users * items)
        .filter(|&k| mask[k])
        .map(|k| Edge {
            user: k / items,
            item: k % items,
            split: Split::Train,
        })
        .collect();
    InteractionGraph::from_edges(users, items, edges).ok()
}

proptest! {
    #[test]
    fn usr_is_a_ratio(texts in prop::collection::vec("[ab ]{0,4}", 1..20)) {
        let r = usr(&texts).unwrap();
        prop_assert!(r > 0.0 && r <= 1.0);
        let distinct: std::collections::HashSet<String> = texts.iter().map(|t| normalize(t)).collect();
        prop_assert_eq!(r, distinct.len() as f64 / texts.len() as f64);
    }

    #[test]
    fn truncation_caps_and_preserves_prefix(text in "[a-c \n]{0,60}", max in 0usize..8) {
        let t = truncate_words(&text, max);
        prop_assert!(word_count(t) <= max);
        prop_assert!(text.starts_with(t));
        if word_count(&text) <= max {
            prop_assert_eq!(t, text.trim_end());
        }
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
        let s = token_overlap(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, token_overlap(&b, &a));
        prop_assert_eq!(token_overlap(&a, &a), 1.0);
    }

    #[test]
    fn std_is_shift_invariant(values in prop::collection::vec(-1.0f64..1.0, 1..50), shift in -100.0f64..100.0) {
        let (m, s) = mean_std(&values).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (ms, ss) = mean_std(&shifted).unwrap();
        prop_assert!((ms - m - shift).abs() < 1e-9);
        prop_assert!((ss - s).abs() < 1e-9);
        prop_assert!(s >= 0.0);
    }

    #[test]
    fn propagation_is_linear(
        users in 1usize..5,
        items in 1usize..5,
        mask in prop::collection::vec(any::<bool>(), 25),
        seed in any::<u64>(),
        layers in 1usize..4,
    ) {
        let Some(g) = graph(users, items, &mask) else { return Ok(()) };
        let mut rng = Rng::new(seed);
        let a = NodeEmbeddings::random_normal(users, items, 3, 1.0, &mut rng);
        let b = NodeEmbeddings::random_normal(users, items, 3, 1.0, &mut rng);
        let mut sum = a.clone();
        for (x, y) in sum.users.as_mut_slice().iter_mut().zip(b.users.as_slice()) { *x += 2.0 * y; }
        for (x, y) in sum.items.as_mut_slice().iter_mut().zip(b.items.as_slice()) { *x += 2.0 * y; }
        let fa = final_embeddings(&propagate(&g, &a, layers).unwrap()).unwrap();
        let fb = final_embeddings(&propagate(&g, &b, layers).unwrap()).unwrap();
        let fs = final_embeddings(&propagate(&g, &sum, layers).unwrap()).unwrap();
        let pairs = [(&fs.users, &fa.users, &fb.users), (&fs.items, &fa.items, &fb.items)];
        for (s, x, y) in pairs {
            for k in 0..s.as_slice().len() {
                prop_assert!((s.as_slice()[k] - x.as_slice()[k] - 2.0 * y.as_slice()[k]).abs() < 1e-12);
            }
        }
    }
}

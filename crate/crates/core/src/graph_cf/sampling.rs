use crate::error::{Error, Result};
use crate::graph_cf::InteractionGraph;
use crate::numerics::Rng;

/// Uniform draw from the items `user` never interacted with (any split),
/// by rejection.
pub fn sample_negative(graph: &InteractionGraph, user: usize, rng: &mut Rng) -> Result<usize> {
    let seen = graph.user_interactions(user);
    if seen.len() >= graph.num_items() {
        return Err(Error::Graph(format!(
            "user {user} interacted with every item; no negative available"
        )));
    }
    loop {
        let j = rng.below(graph.num_items());
        if seen.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_cf::{build_graph, SplitSpec};

    fn graph_missing(missing: &[usize], n: usize) -> InteractionGraph {
        // user 0 sees everything except `missing`; user 1 covers the rest
        let mut inter: Vec<(usize, usize)> =
            (0..n).filter(|i| !missing.contains(i)).map(|i| (0, i)).collect();
        inter.extend(missing.iter().map(|&i| (1, i)));
        build_graph(2, n, &inter, &SplitSpec::full_train(0)).unwrap()
    }

    #[test]
    fn forced_choice() {
        let g = graph_missing(&[7], 10);
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            assert_eq!(sample_negative(&g, 0, &mut rng).unwrap(), 7);
        }
    }

    #[test]
    fn exhausted_user_is_an_error() {
        let g = build_graph(1, 2, &[(0, 0), (0, 1)], &SplitSpec::full_train(0)).unwrap();
        assert!(sample_negative(&g, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn frequencies_are_uniform_within_three_sigma() {
        let missing = [1, 4, 5, 8, 11];
        let g = graph_missing(&missing, 12);
        let mut rng = Rng::new(99);
        let draws = 100_000;
        let mut counts = [0usize; 12];
        for _ in 0..draws {
            counts[sample_negative(&g, 0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / missing.len() as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            if missing.contains(&i) {
                assert!((c as f64 - mean).abs() < 3.0 * sigma, "item {i}: {c}");
            } else {
                assert_eq!(c, 0);
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let g = graph_missing(&[2, 3, 6], 8);
        let draw = |seed| {
            let mut rng = Rng::new(seed);
            (0..50).map(|_| sample_negative(&g, 0, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }
}

use crate::error::{Error, Result};
use crate::graph_cf::{InteractionGraph, NodeEmbeddings, Split};
use crate::numerics::dot;

#[derive(Clone, Debug, PartialEq)]
pub struct RecallReport {
    /// `(user, recall)` for every user with at least one held-out item.
    pub per_user: Vec<(usize, f64)>,
    pub mean: f64,
}

/// Candidate items for `user` ordered by score descending, ties by
/// ascending item id. Train neighbours are excluded.
pub fn rank_candidates(emb: &NodeEmbeddings, graph: &InteractionGraph, user: usize) -> Vec<usize> {
    let eu = emb.users.row(user);
    let train = graph.user_neighbors(user);
    let mut scored: Vec<(f64, usize)> = (0..graph.num_items())
        .filter(|i| train.binary_search(i).is_err())
        .map(|i| (dot(eu, emb.items.row(i)), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Recall@K over the users holding out at least one item in `split`.
pub fn recall_at_k(
    emb: &NodeEmbeddings,
    graph: &InteractionGraph,
    split: Split,
    k: usize,
) -> Result<RecallReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let held = graph.held_out(split);
    let mut per_user = Vec::new();
    for (user, items) in held.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let ranked = rank_candidates(emb, graph, user);
        if k > ranked.len() {
            return Err(Error::InvalidArgument(format!(
                "K={k} exceeds the {} candidate items of user {user}",
                ranked.len()
            )));
        }
        let hits = ranked[..k].iter().filter(|i| items.contains(i)).count();
        per_user.push((user, hits as f64 / items.len() as f64));
    }
    if per_user.is_empty() {
        return Err(Error::Data(format!("no {split:?} edges to evaluate")));
    }
    let mean = per_user.iter().map(|(_, r)| r).sum::<f64>() / per_user.len() as f64;
    Ok(RecallReport { per_user, mean })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_cf::InteractionGraph;
use crate::numerics::{axpy, dot, ContentHasher, DenseMatrix, Rng};

/// One embedding matrix per node type; rows are node ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    pub users: DenseMatrix,
    pub items: DenseMatrix,
}

impl NodeEmbeddings {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            users: DenseMatrix::zeros(num_users, dim),
            items: DenseMatrix::zeros(num_items, dim),
        }
    }

    /// Users first, then items, each row-major.
    pub fn random_normal(num_users: usize, num_items: usize, dim: usize, std: f64, rng: &mut Rng) -> Self {
        let users = DenseMatrix::random_normal(num_users, dim, std, rng);
        let items = DenseMatrix::random_normal(num_items, dim, std, rng);
        Self { users, items }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }

    pub fn scale(&mut self, s: f64) {
        self.users.scale(s);
        self.items.scale(s);
    }

    pub fn max_abs_diff(&self, other: &NodeEmbeddings) -> f64 {
        self.users
            .max_abs_diff(&other.users)
            .max(self.items.max_abs_diff(&other.items))
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.tensor("users", self.users.as_slice());
        h.tensor("items", self.items.as_slice());
        h.finish()
    }

    fn check_shape(&self, graph: &InteractionGraph) -> Result<()> {
        if self.users.rows() != graph.num_users()
            || self.items.rows() != graph.num_items()
            || self.users.cols() != self.items.cols()
        {
            return Err(Error::Shape(format!(
                "embeddings {}x{} / {}x{} for a graph with {} users and {} items",
                self.users.rows(),
                self.users.cols(),
                self.items.rows(),
                self.items.cols(),
                graph.num_users(),
                graph.num_items()
            )));
        }
        Ok(())
    }
}

/// Trainable layer-0 embeddings plus the propagation depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub layer0: NodeEmbeddings,
    pub num_layers: usize,
}

impl EmbeddingTable {
    pub fn new_random(
        num_users: usize,
        num_items: usize,
        dim: usize,
        num_layers: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        Self {
            layer0: NodeEmbeddings::random_normal(num_users, num_items, dim, std, rng),
            num_layers,
        }
    }

    pub fn dim(&self) -> usize {
        self.layer0.dim()
    }

    pub fn final_embeddings(&self, graph: &InteractionGraph) -> Result<NodeEmbeddings> {
        final_embeddings(&propagate(graph, &self.layer0, self.num_layers)?)
    }
}

/// One symmetric-normalised message-passing step. Degrees are assumed
/// validated.
fn propagate_once(graph: &InteractionGraph, x: &NodeEmbeddings) -> NodeEmbeddings {
    let dim = x.dim();
    let mut out = NodeEmbeddings::zeros(graph.num_users(), graph.num_items(), dim);
    for u in 0..graph.num_users() {
        let nu = graph.user_neighbors(u);
        let du = nu.len() as f64;
        let row = out.users.row_mut(u);
        for &i in nu {
            let w = 1.0 / (du * graph.item_neighbors(i).len() as f64).sqrt();
            axpy(w, x.items.row(i), row);
        }
    }
    for i in 0..graph.num_items() {
        let ni = graph.item_neighbors(i);
        let di = ni.len() as f64;
        let row = out.items.row_mut(i);
        for &u in ni {
            let w = 1.0 / (di * graph.user_neighbors(u).len() as f64).sqrt();
            axpy(w, x.users.row(u), row);
        }
    }
    out
}

/// LightGCN propagation. Returns `num_layers + 1` layers, layer 0 first.
pub fn propagate(
    graph: &InteractionGraph,
    layer0: &NodeEmbeddings,
    num_layers: usize,
) -> Result<Vec<NodeEmbeddings>> {
    layer0.check_shape(graph)?;
    if num_layers > 0 {
        if let Some(u) = (0..graph.num_users()).find(|&u| graph.user_neighbors(u).is_empty()) {
            return Err(Error::Graph(format!("isolated user {u} in propagation")));
        }
        if let Some(i) = (0..graph.num_items()).find(|&i| graph.item_neighbors(i).is_empty()) {
            return Err(Error::Graph(format!("isolated item {i} in propagation")));
        }
    }
    let mut layers = Vec::with_capacity(num_layers + 1);
    layers.push(layer0.clone());
    for l in 0..num_layers {
        let next = propagate_once(graph, &layers[l]);
        layers.push(next);
    }
    Ok(layers)
}

/// Layer average `sum_k w * e^(k)` with `w = 1 / (K + 1)`, accumulated in
/// layer order.
pub fn final_embeddings(layers: &[NodeEmbeddings]) -> Result<NodeEmbeddings> {
    let first = layers.first().ok_or(Error::EmptyInput)?;
    let (m, n, d) = (first.num_users(), first.num_items(), first.dim());
    if layers
        .iter()
        .any(|l| l.num_users() != m || l.num_items() != n || l.dim() != d || l.items.cols() != d)
    {
        return Err(Error::Shape("layers with inconsistent shapes".into()));
    }
    let w = 1.0 / layers.len() as f64;
    let mut out = NodeEmbeddings::zeros(m, n, d);
    for layer in layers {
        axpy(w, layer.users.as_slice(), out.users.as_mut_slice());
        axpy(w, layer.items.as_slice(), out.items.as_mut_slice());
    }
    Ok(out)
}

/// Gradient with respect to layer 0 of a loss whose gradient with respect
/// to the final (layer-averaged) embeddings is `grad_final`.
///
/// The normalised adjacency is symmetric, so the adjoint of propagation is
/// propagation itself: `(1/(K+1)) * sum_k A^k g`, evaluated Horner-style.
pub fn propagation_adjoint(
    graph: &InteractionGraph,
    grad_final: &NodeEmbeddings,
    num_layers: usize,
) -> Result<NodeEmbeddings> {
    grad_final.check_shape(graph)?;
    let mut base = grad_final.clone();
    base.scale(1.0 / (num_layers + 1) as f64);
    let mut acc = base.clone();
    for _ in 0..num_layers {
        let mut next = propagate_once(graph, &acc);
        next.users.add_assign(&base.users);
        next.items.add_assign(&base.items);
        acc = next;
    }
    Ok(acc)
}

/// Predicted preference `e_u . e_i`.
pub fn score(user: &[f64], item: &[f64]) -> Result<f64> {
    if user.len() != item.len() {
        return Err(Error::Shape(format!(
            "user embedding has {} dims, item embedding {}",
            user.len(),
            item.len()
        )));
    }
    Ok(dot(user, item))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_cf::{build_graph, SplitSpec};

    #[test]
    fn zero_layers_is_identity() {
        let g = build_graph(1, 1, &[(0, 0)], &SplitSpec::full_train(0)).unwrap();
        let mut rng = Rng::new(1);
        let x = NodeEmbeddings::random_normal(1, 1, 4, 1.0, &mut rng);
        let layers = propagate(&g, &x, 0).unwrap();
        assert_eq!(layers, vec![x]);
    }

    #[test]
    fn unit_degree_pair_swaps_embeddings() {
        let g = build_graph(1, 1, &[(0, 0)], &SplitSpec::full_train(0)).unwrap();
        let mut rng = Rng::new(2);
        let x = NodeEmbeddings::random_normal(1, 1, 3, 1.0, &mut rng);
        let layers = propagate(&g, &x, 1).unwrap();
        assert_eq!(layers[1].users.row(0), x.items.row(0));
        assert_eq!(layers[1].items.row(0), x.users.row(0));
    }

    #[test]
    fn final_embedding_examples() {
        let mut rng = Rng::new(3);
        let v = NodeEmbeddings::random_normal(2, 3, 4, 1.0, &mut rng);
        assert_eq!(final_embeddings(std::slice::from_ref(&v)).unwrap(), v);
        let mut neg = v.clone();
        neg.scale(-1.0);
        let z = final_embeddings(&[v.clone(), neg]).unwrap();
        assert!(z.users.as_slice().iter().chain(z.items.as_slice()).all(|&x| x == 0.0));
        let bad = NodeEmbeddings::zeros(2, 3, 5);
        assert!(final_embeddings(&[v, bad]).is_err());
        assert!(final_embeddings(&[]).is_err());
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = [1.5, -2.0, 0.25];
        assert_eq!(score(&v, &v).unwrap(), 1.5 * 1.5 + 4.0 + 0.0625);
        assert!(score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = build_graph(1, 1, &[(0, 0)], &SplitSpec::full_train(0)).unwrap();
        assert!(propagate(&g, &NodeEmbeddings::zeros(2, 1, 3), 1).is_err());
    }
}

use crate::error::{Error, Result};
use crate::graph_cf::{propagate, propagation_adjoint, EmbeddingTable, InteractionGraph, NodeEmbeddings};
use crate::numerics::{axpy, dot, log_sigmoid, norm_sq, sigmoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Validated `(u, i, j)` triples: `i` is a train neighbour of `u` and `j`
/// is not an interaction of `u` in any split.
#[derive(Clone, Debug, PartialEq)]
pub struct BprBatch {
    triples: Vec<BprTriple>,
}

impl BprBatch {
    pub fn new(graph: &InteractionGraph, triples: Vec<BprTriple>) -> Result<Self> {
        for t in &triples {
            if t.user >= graph.num_users()
                || t.positive >= graph.num_items()
                || t.negative >= graph.num_items()
            {
                return Err(Error::Graph(format!("triple {t:?} out of range")));
            }
            if graph.user_neighbors(t.user).binary_search(&t.positive).is_err() {
                return Err(Error::Graph(format!(
                    "item {} is not a train interaction of user {}",
                    t.positive, t.user
                )));
            }
            if graph.user_interactions(t.user).binary_search(&t.negative).is_ok() {
                return Err(Error::Graph(format!(
                    "negative item {} was interacted with by user {}",
                    t.negative, t.user
                )));
            }
        }
        Ok(Self { triples })
    }

    pub fn triples(&self) -> &[BprTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Users and items (positives then negatives) with batch multiplicity.
    pub fn nodes(&self) -> (Vec<usize>, Vec<usize>) {
        let users = self.triples.iter().map(|t| t.user).collect();
        let items = self
            .triples
            .iter()
            .map(|t| t.positive)
            .chain(self.triples.iter().map(|t| t.negative))
            .collect();
        (users, items)
    }
}

/// `-ln sigmoid(margin)` for one triple.
pub fn bpr_triple_loss(margin: f64) -> f64 {
    -log_sigmoid(margin)
}

/// Summed BPR loss and its gradient with respect to the final embeddings.
pub fn bpr_loss(batch: &BprBatch, emb: &NodeEmbeddings) -> (f64, NodeEmbeddings) {
    let mut grad = NodeEmbeddings::zeros(emb.num_users(), emb.num_items(), emb.dim());
    let mut loss = 0.0;
    for t in batch.triples() {
        let eu = emb.users.row(t.user);
        let ei = emb.items.row(t.positive);
        let ej = emb.items.row(t.negative);
        let margin = dot(eu, ei) - dot(eu, ej);
        loss += bpr_triple_loss(margin);
        // d/d margin of -ln sigmoid(margin)
        let g = -sigmoid(-margin);
        let gu = grad.users.row_mut(t.user);
        axpy(g, ei, gu);
        axpy(-g, ej, gu);
        axpy(g, eu, grad.items.row_mut(t.positive));
        axpy(-g, eu, grad.items.row_mut(t.negative));
    }
    (loss, grad)
}

/// `lambda * (sum ||e_u||^2 + sum ||e_i||^2)` over the listed layer-0 rows
/// (with multiplicity).
pub fn reg_loss(layer0: &NodeEmbeddings, users: &[usize], items: &[usize], lambda: f64) -> f64 {
    let u: f64 = users.iter().map(|&u| norm_sq(layer0.users.row(u))).sum();
    let i: f64 = items.iter().map(|&i| norm_sq(layer0.items.row(i))).sum();
    lambda * (u + i)
}

fn add_reg_grad(layer0: &NodeEmbeddings, users: &[usize], items: &[usize], lambda: f64, grad: &mut NodeEmbeddings) {
    for &u in users {
        axpy(2.0 * lambda, layer0.users.row(u), grad.users.row_mut(u));
    }
    for &i in items {
        axpy(2.0 * lambda, layer0.items.row(i), grad.items.row_mut(i));
    }
}

#[derive(Clone, Debug)]
pub struct Objective {
    pub bpr: f64,
    pub reg: f64,
    pub grad_layer0: NodeEmbeddings,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.bpr + self.reg
    }
}

/// Joint `L_BPR + L_reg` for one batch, with the gradient carried back
/// through layer averaging and propagation to the layer-0 parameters.
pub fn joint_objective(
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    batch: &BprBatch,
    lambda: f64,
) -> Result<Objective> {
    let layers = propagate(graph, &table.layer0, table.num_layers)?;
    let fin = crate::graph_cf::final_embeddings(&layers)?;
    let (bpr, grad_final) = bpr_loss(batch, &fin);
    let mut grad_layer0 = propagation_adjoint(graph, &grad_final, table.num_layers)?;
    let (users, items) = batch.nodes();
    let reg = reg_loss(&table.layer0, &users, &items, lambda);
    add_reg_grad(&table.layer0, &users, &items, lambda, &mut grad_layer0);
    Ok(Objective {
        bpr,
        reg,
        grad_layer0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_cf::{build_graph, SplitSpec};
    use crate::numerics::DenseMatrix;

    #[test]
    fn tied_scores_cost_ln2() {
        assert!((bpr_triple_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let mut prev = bpr_triple_loss(-5.0);
        for k in -49..200 {
            let cur = bpr_triple_loss(k as f64 * 0.1);
            assert!(cur > 0.0 && cur < prev);
            prev = cur;
        }
        assert!(bpr_triple_loss(40.0) < 1e-16);
    }

    #[test]
    fn reg_examples() {
        let emb = NodeEmbeddings {
            users: DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap(),
            items: DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap(),
        };
        assert_eq!(reg_loss(&emb, &[0], &[0], 1.0), 25.0);
        assert_eq!(reg_loss(&emb, &[0], &[0], 0.0), 0.0);
    }

    #[test]
    fn batch_validation() {
        let g = build_graph(2, 3, &[(0, 0), (1, 1), (1, 2)], &SplitSpec::full_train(0)).unwrap();
        let ok = BprBatch::new(&g, vec![BprTriple { user: 0, positive: 0, negative: 2 }]);
        assert!(ok.is_ok());
        let bad_neg = BprBatch::new(&g, vec![BprTriple { user: 1, positive: 1, negative: 2 }]);
        assert!(bad_neg.is_err());
        let bad_pos = BprBatch::new(&g, vec![BprTriple { user: 0, positive: 1, negative: 2 }]);
        assert!(bad_pos.is_err());
    }
}

use crate::error::{Error, Result};
use crate::minilm::PromptInstance;
use crate::numerics::{log_sum_exp, DenseMatrix};

/// Summed `-ln p(target)` over rows, where row `r` of `logits` predicts
/// `targets[r]`, together with the gradient with respect to the logits.
pub fn sequence_nll(logits: &DenseMatrix, targets: &[usize]) -> Result<(f64, DenseMatrix)> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target".into()));
    }
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let v = logits.cols();
    let mut grad = DenseMatrix::zeros(logits.rows(), v);
    let mut loss = 0.0;
    for (r, &target) in targets.iter().enumerate() {
        if target >= v {
            return Err(Error::InvalidArgument(format!("target {target} outside vocabulary of {v}")));
        }
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        loss += lse - row[target];
        let g = grad.row_mut(r);
        for (gc, &z) in g.iter_mut().zip(row) {
            *gc = (z - lse).exp();
        }
        g[target] -= 1.0;
    }
    Ok((loss, grad))
}

/// Negative log-likelihood of the explanation tokens of `prompt`, given
/// logits for every position of `prompt.sequence()`. Only tokens after
/// `EXPLAIN_POS` are scored.
pub fn nll_loss(logits: &DenseMatrix, prompt: &PromptInstance) -> Result<f64> {
    if prompt.targets.is_empty() {
        return Err(Error::InvalidArgument("empty target".into()));
    }
    if logits.rows() != prompt.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for a sequence of {}",
            logits.rows(),
            prompt.len()
        )));
    }
    let rows = prompt.scored_positions();
    let picked = DenseMatrix::from_fn(rows.len(), logits.cols(), |r, c| logits.get(rows[r], c));
    Ok(sequence_nll(&picked, &prompt.targets)?.0)
}

/// Mean over sequences of [`nll_loss`].
pub fn batch_nll(pairs: &[(DenseMatrix, PromptInstance)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (logits, prompt) in pairs {
        total += nll_loss(logits, prompt)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_v_per_token() {
        let logits = DenseMatrix::zeros(4, 10);
        let (loss, _) = sequence_nll(&logits, &[1, 2, 3, 4]).unwrap();
        assert!((loss - 4.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_model_costs_nothing() {
        let mut logits = DenseMatrix::zeros(2, 5);
        logits.set(0, 3, 800.0);
        logits.set(1, 1, 800.0);
        let (loss, grad) = sequence_nll(&logits, &[3, 1]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-300));
    }

    #[test]
    fn empty_target_is_an_error() {
        assert!(sequence_nll(&DenseMatrix::zeros(0, 3), &[]).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = DenseMatrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.0, 0.1, 0.2]]).unwrap();
        let (_, g) = sequence_nll(&logits, &[0, 2]).unwrap();
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}

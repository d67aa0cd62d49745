use crate::error::{Error, Result};
use crate::model::{sequence_nll, ModelParams};

/// Mean per-token next-token loss over packed test sequences.
///
/// Per-sequence sums are computed in `f64` and added in sorted order, so the
/// result does not depend on sequence order or batch size.
pub fn eval_loss(params: &ModelParams, sequences: &[Vec<u32>], batch_size: usize) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::Input("evaluation set has no sequences".into()));
    }
    if batch_size == 0 {
        return Err(Error::Parameter("evaluation batch size must be positive".into()));
    }
    let mut sums = Vec::with_capacity(sequences.len());
    let mut count = 0usize;
    for chunk in sequences.chunks(batch_size) {
        for (s, n) in sequence_nll(params, chunk)? {
            sums.push(s);
            count += n;
        }
    }
    sums.sort_by(f64::total_cmp);
    let loss = sums.iter().sum::<f64>() / count as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("evaluation loss is {loss}")));
    }
    Ok(loss)
}

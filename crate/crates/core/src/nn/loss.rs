use crate::error::{input_err, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `[B, N]` tensor, shifted by the row max for stability.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (b, n) = logits.dims2()?;
    let mut out = logits.clone();
    for i in 0..b {
        let row = &mut out.data_mut()[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Mean negative log-softmax of the labelled class, with gradient `(softmax − onehot) / B`.
pub fn cross_entropy_with_softmax(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return input_err(format!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return input_err(format!("label {bad} outside [0, {n})"));
    }
    let mut grad = softmax_rows(logits)?;
    let mut loss = 0.0;
    let x = logits.data();
    for (i, &y) in labels.iter().enumerate() {
        let row = &x[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = &mut grad.data_mut()[i * n..(i + 1) * n];
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

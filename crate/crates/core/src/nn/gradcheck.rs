//! Central finite-difference checks of reverse-mode gradients.

use super::loss::cross_entropy_with_softmax;
use super::network::Network;
use crate::error::Result;
use crate::tensor::Tensor;

/// Step used by the central differences.
pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Relative errors of one network gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `(parameter name, relative error)` for every trainable tensor.
    pub params: Vec<(String, f64)>,
    pub input: f64,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.1).fold(self.input, f64::max)
    }
}

/// Checks `backward` against finite differences of the scalar `Σ output ⊙ projection`
/// in training mode, for every trainable parameter and the input.
pub fn check_network(net: &Network, input: &Tensor, projection: &Tensor) -> Result<GradCheck> {
    let objective = |n: &Network, x: &Tensor| -> Result<f64> {
        let (y, _) = n.forward(x, true)?;
        Ok(y.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };
    let (out, tape) = net.forward(input, true)?;
    let grad_out = projection.reshape(out.shape())?;
    let grads = net.backward(&tape, &grad_out)?;

    let mut params = Vec::new();
    let mut probe = net.clone();
    for (i, p) in net.params().iter().enumerate() {
        if !p.kind.trainable() {
            continue;
        }
        let numeric = numeric_gradient(p.value.data(), FD_STEP, |v| {
            probe.params_mut().get_mut(i).value.data_mut().copy_from_slice(v);
            objective(&probe, input)
        })?;
        probe.params_mut().get_mut(i).value = p.value.clone();
        let analytic = grads.params[i].as_ref().map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; p.value.len()]);
        params.push((p.name.clone(), relative_error(&analytic, &numeric)));
    }
    let numeric = numeric_gradient(input.data(), FD_STEP, |v| {
        objective(net, &Tensor::new(input.shape().to_vec(), v.to_vec())?)
    })?;
    Ok(GradCheck {
        params,
        input: relative_error(grads.input.data(), &numeric),
    })
}

/// Relative error of the cross-entropy logit gradient.
pub fn check_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (_, analytic) = cross_entropy_with_softmax(logits, labels)?;
    let numeric = numeric_gradient(logits.data(), FD_STEP, |v| {
        Ok(cross_entropy_with_softmax(&Tensor::new(logits.shape().to_vec(), v.to_vec())?, labels)?.0)
    })?;
    Ok(relative_error(analytic.data(), &numeric))
}

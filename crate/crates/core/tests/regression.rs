use std::f64::consts::PI;

use packed_core::nn::gradcheck::{numeric_gradient, relative_error, FD_STEP};
use packed_core::regression::{
    gaussian_nll, gaussian_nll_batch, mixture_aggregate, softplus, GaussianPrediction, VAR_FLOOR,
};
use packed_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn g(mu: f64, var: f64) -> GaussianPrediction {
    GaussianPrediction::new(mu, var).unwrap()
}

#[test]
fn nll_substitution() {
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    assert!((gaussian_nll(g(1.5, 1.0), 1.5).loss - half_ln_2pi).abs() < 1e-15);
    assert!((half_ln_2pi - 0.9189).abs() < 1e-4);
    // at the mean, the loss keeps falling as the variance shrinks
    let e = std::f64::consts::E;
    assert!((gaussian_nll(g(0.0, e), 0.0).loss - (half_ln_2pi + 0.5)).abs() < 1e-15);
    assert!(gaussian_nll(g(0.0, 0.1), 0.0).loss < gaussian_nll(g(0.0, 1.0), 0.0).loss);
}

#[test]
fn mean_gradient_closed_form() {
    let t = gaussian_nll(g(0.0, 2.0), 1.0);
    assert!((t.d_mu + 0.5).abs() < 1e-15);
    let fd = numeric_gradient(&[0.0], FD_STEP, |v| Ok(gaussian_nll(g(v[0], 2.0), 1.0).loss)).unwrap();
    assert!((fd[0] + 0.5).abs() <= 1e-8);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (mu, var, y) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.2..3.0), rng.gen_range(-3.0..3.0));
        let t = gaussian_nll(g(mu, var), y);
        let fd = numeric_gradient(&[mu, var], FD_STEP, |v| Ok(gaussian_nll(g(v[0], v[1]), y).loss)).unwrap();
        assert!(relative_error(&[t.d_mu, t.d_var], &fd) < 1e-4);

        let raw = Tensor::from_fn(&[4, 2], |_| rng.gen_range(-2.0..2.0));
        let ys: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (_, grad, _) = gaussian_nll_batch(&raw, &ys).unwrap();
        let fd = numeric_gradient(raw.data(), FD_STEP, |v| {
            Ok(gaussian_nll_batch(&Tensor::new(vec![4, 2], v.to_vec())?, &ys)?.0)
        })
        .unwrap();
        assert!(relative_error(grad.data(), &fd) < 1e-4);
    }
}

#[test]
fn variance_floor() {
    assert!(GaussianPrediction::from_raw(0.0, -800.0).var >= VAR_FLOOR);
    assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    let t = gaussian_nll(GaussianPrediction { mu: 0.0, var: 1e-9 }, 0.0);
    assert!(t.clamped);
    assert!(t.loss.is_finite());
    assert!(GaussianPrediction::new(0.0, 0.0).is_err());
}

#[test]
fn mixture_cases() {
    let one = g(0.7, 1.3);
    assert_eq!(mixture_aggregate(&[one]).unwrap(), one);
    let two = mixture_aggregate(&[g(0.0, 1.0), g(2.0, 1.0)]).unwrap();
    assert_eq!((two.mu, two.var), (1.0, 2.0));
    let same = mixture_aggregate(&[one, one, one]).unwrap();
    assert!((same.mu - one.mu).abs() < 1e-15 && (same.var - one.var).abs() < 1e-15);
    assert!(mixture_aggregate(&[]).is_err());
}

#[test]
fn mixture_invariants_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let m = rng.gen_range(1..6);
        let mut preds: Vec<_> = (0..m).map(|_| g(rng.gen_range(-5.0..5.0), rng.gen_range(0.01..4.0))).collect();
        let agg = mixture_aggregate(&preds).unwrap();
        let mean_var = preds.iter().map(|p| p.var).sum::<f64>() / m as f64;
        assert!(agg.var >= mean_var - 1e-12);
        // the literal formula with the squared mean
        let literal = preds.iter().map(|p| p.var + p.mu * p.mu).sum::<f64>() / m as f64 - agg.mu * agg.mu;
        assert!((agg.var - literal).abs() < 1e-9 * (1.0 + literal.abs()));
        preds.reverse();
        let rev = mixture_aggregate(&preds).unwrap();
        assert!((rev.mu - agg.mu).abs() < 1e-12 && (rev.var - agg.var).abs() < 1e-12);
    }
}

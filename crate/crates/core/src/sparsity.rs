//! Gaussian moment propagation through a dense layer with Bernoulli-masked weights,
//! and the bound on the KL divergence the mask introduces.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, input_err, Result};
use crate::tensor::Tensor;

/// Per-channel means and (diagonal) variances of a layer input.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl MomentSpec {
    pub fn new(mu: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mu.len() != var.len() {
            return dim_err(format!("{} means but {} variances", mu.len(), var.len()));
        }
        if var.iter().any(|&v| !(v >= 0.0)) {
            return input_err("variances must be non-negative");
        }
        Ok(Self { mu, var })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// Dense weights `[C_out, C_in]`, input moments and the keep-probability `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSetup {
    pub p: f64,
    pub weights: Tensor,
    pub moments: MomentSpec,
}

impl PruneSetup {
    pub fn new(p: f64, weights: Tensor, moments: MomentSpec) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return input_err(format!("keep-probability must lie in (0, 1], got {p}"));
        }
        let (_, c_in) = weights.dims2()?;
        if c_in != moments.channels() {
            return dim_err(format!("weights expect {c_in} inputs, moments describe {}", moments.channels()));
        }
        Ok(Self { p, weights, moments })
    }
}

fn weight_rows<'a>(weights: &'a Tensor, moments: &MomentSpec) -> Result<std::slice::Chunks<'a, f64>> {
    let (_, c_in) = weights.dims2()?;
    if c_in != moments.channels() {
        return dim_err(format!("weights expect {c_in} inputs, moments describe {}", moments.channels()));
    }
    Ok(weights.data().chunks(c_in))
}

/// Pre-activation moments `μ_z(c) = Σ_k w(c,k)μ(k)` and `σ_z²(c) = Σ_k w(c,k)²Σ(k,k)`.
pub fn propagate_moments(weights: &Tensor, moments: &MomentSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(weight_rows(weights, moments)?
        .map(|w| {
            let mean = w.iter().zip(&moments.mu).map(|(a, m)| a * m).sum::<f64>();
            let var = w.iter().zip(&moments.var).map(|(a, v)| a * a * v).sum::<f64>();
            (mean, var)
        })
        .unzip())
}

/// `Σ_k w(c,k)²μ(k)²` per output channel.
fn mean_energy(weights: &Tensor, moments: &MomentSpec) -> Result<Vec<f64>> {
    Ok(weight_rows(weights, moments)?
        .map(|w| w.iter().zip(&moments.mu).map(|(a, m)| (a * m).powi(2)).sum())
        .collect())
}

/// Moments of the masked pre-activation: `μ̃ = p·μ_z`,
/// `σ̃² = p·[σ_z² + (1 − p)·Σ_k w²μ²]`.
pub fn pruned_moments(setup: &PruneSetup) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = setup.p;
    let (mu_z, var_z) = propagate_moments(&setup.weights, &setup.moments)?;
    let energy = mean_energy(&setup.weights, &setup.moments)?;
    let mu = mu_z.iter().map(|m| p * m).collect();
    let var = var_z.iter().zip(&energy).map(|(v, e)| p * (v + (1.0 - p) * e)).collect();
    Ok((mu, var))
}

/// `KL(N(mu1, var1) ‖ N(mu2, var2))`.
pub fn kl_gaussian(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64> {
    if !(var1 > 0.0 && var2 > 0.0) {
        return input_err(format!("variances must be positive, got {var1} and {var2}"));
    }
    Ok(0.5 * ((var2 / var1).ln() + (var1 + (mu1 - mu2).powi(2)) / var2 - 1.0))
}

/// The bound for one channel given its pre-activation moments and `Σ_k w²μ²`.
pub fn kl_bound_scalar(p: f64, mu_z: f64, var_z: f64, energy: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return input_err(format!("keep-probability must lie in (0, 1], got {p}"));
    }
    if !(var_z > 0.0) {
        return input_err(format!("pre-activation variance must be positive, got {var_z}"));
    }
    Ok(0.5
        * (p + 1.0 / p - 2.0
            + p * (1.0 - p) * energy / var_z
            + ((1.0 - p) * mu_z).powi(2) / (p * var_z)))
}

/// Upper bound on `KL(z ‖ z̃)` for every output channel.
pub fn kl_bound(setup: &PruneSetup) -> Result<Vec<f64>> {
    let (mu_z, var_z) = propagate_moments(&setup.weights, &setup.moments)?;
    let energy = mean_energy(&setup.weights, &setup.moments)?;
    (0..mu_z.len())
        .map(|c| kl_bound_scalar(setup.p, mu_z[c], var_z[c], energy[c]))
        .collect()
}

/// Exact KL between the unmasked and masked pre-activation Gaussians, per channel.
pub fn exact_kl(setup: &PruneSetup) -> Result<Vec<f64>> {
    let (mu_z, var_z) = propagate_moments(&setup.weights, &setup.moments)?;
    let (mu_t, var_t) = pruned_moments(setup)?;
    (0..mu_z.len())
        .map(|c| kl_gaussian(mu_z[c], var_z[c], mu_t[c], var_t[c]))
        .collect()
}

/// Sample mean and variance of one output channel with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloMoments {
    pub mean: f64,
    pub var: f64,
    pub mean_se: f64,
    pub var_se: f64,
}

/// Monte-Carlo moments of `z(c) = Σ_k mask(c,k)·w(c,k)·h(k)` with `h ~ N(μ, diag Σ)`
/// and `mask ~ Ber(p)` drawn jointly per sample (`p = 1` disables masking).
pub fn monte_carlo_moments<R: Rng + ?Sized>(
    weights: &Tensor,
    moments: &MomentSpec,
    p: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<MonteCarloMoments>> {
    if samples < 2 {
        return input_err("need at least two samples");
    }
    let rows: Vec<&[f64]> = weight_rows(weights, moments)?.collect();
    let c_in = moments.channels();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sd: Vec<f64> = moments.var.iter().map(|v| v.sqrt()).collect();
    // Shifted accumulators (around the first draw) keep the variance estimate stable.
    let mut acc = vec![[0.0f64; 4]; rows.len()];
    let mut shift = vec![None; rows.len()];
    let mut h = vec![0.0; c_in];
    for _ in 0..samples {
        for k in 0..c_in {
            h[k] = moments.mu[k] + sd[k] * std_normal.sample(rng);
        }
        for (c, w) in rows.iter().enumerate() {
            let mut z = 0.0;
            for k in 0..c_in {
                if p >= 1.0 || rng.gen::<f64>() < p {
                    z += w[k] * h[k];
                }
            }
            let s = *shift[c].get_or_insert(z);
            let d = z - s;
            let a = &mut acc[c];
            a[0] += d;
            a[1] += d * d;
            a[2] += d * d * d;
            a[3] += d * d * d * d;
        }
    }
    let n = samples as f64;
    Ok(acc
        .iter()
        .zip(&shift)
        .map(|(a, s)| {
            let (m1, m2, m3, m4) = (a[0] / n, a[1] / n, a[2] / n, a[3] / n);
            let var = (m2 - m1 * m1) * n / (n - 1.0);
            // fourth central moment from raw moments about the shift
            let mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
            MonteCarloMoments {
                mean: s.unwrap_or(0.0) + m1,
                var,
                mean_se: (var / n).sqrt(),
                var_se: ((mu4 - var * var).max(0.0) / n).sqrt(),
            }
        })
        .collect())
}

/// One point of the bound surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlSweepPoint {
    pub p: f64,
    pub sigma_z: f64,
    pub bound: f64,
}

/// Bound over a `(p, σ_z)` grid with `μ(k) = mu` and `w(c,k) = w` for all `C_in` inputs.
/// `σ_z` is the free axis; the input variances are implied by it.
pub fn kl_sweep(ps: &[f64], sigmas: &[f64], c_in: usize, mu: f64, w: f64) -> Result<Vec<KlSweepPoint>> {
    let mu_z = c_in as f64 * w * mu;
    let energy = c_in as f64 * (w * mu).powi(2);
    let mut out = Vec::with_capacity(ps.len() * sigmas.len());
    for &p in ps {
        for &sigma_z in sigmas {
            out.push(KlSweepPoint {
                p,
                sigma_z,
                bound: kl_bound_scalar(p, mu_z, sigma_z * sigma_z, energy)?,
            });
        }
    }
    Ok(out)
}

/// CSV with header `p,sigma_z,bound`.
pub fn sweep_csv(points: &[KlSweepPoint]) -> String {
    let mut s = String::from("p,sigma_z,bound\n");
    for pt in points {
        s.push_str(&format!("{},{},{}\n", pt.p, pt.sigma_z, pt.bound));
    }
    s
}

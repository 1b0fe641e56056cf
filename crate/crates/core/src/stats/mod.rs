//! Forecast-error modelling: zero-mean Gaussian bus errors, sample-variance
//! estimation, chi-square variance ambiguity intervals, and seeded sampling.

pub mod rng;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::ValidatedNetwork;
pub use special::{chi2_cdf, chi2_quantile, normal_cdf, normal_quantile};

/// How reactive-power forecast errors relate to active-power errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorTreatment {
    /// eps_Q drawn independently of eps_P with its own standard deviation.
    IndependentPQ,
    /// eps_Q = eps_P * tan(phi) with the bus power factor held constant.
    ConstantPowerFactor,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample set needs at least 2 observations, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level xi must lie in (0, 1), got {0}")]
    BadXi(f64),
    #[error("sample blocks disagree: {0}")]
    ShapeMismatch(String),
}

/// Zero-mean Gaussian forecast-error model: one standard deviation per bus
/// and component, plus the load power-factor tangent used by the
/// constant-power-factor treatment. Index 0 is the root bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrorModel {
    pub sigma_p: Vec<f64>,
    pub sigma_q: Vec<f64>,
    pub tan_phi: Vec<f64>,
}

impl ForecastErrorModel {
    /// Builds the model with per-bus sigma = `fraction` times the forecast
    /// load magnitude (both components), as in the bundled case studies.
    pub fn from_load_fraction(net: &ValidatedNetwork, fraction: f64) -> Self {
        let mut sigma_p = Vec::with_capacity(net.n_buses());
        let mut sigma_q = Vec::with_capacity(net.n_buses());
        let mut tan_phi = Vec::with_capacity(net.n_buses());
        for b in net.buses() {
            sigma_p.push(fraction * b.load_p.abs());
            sigma_q.push(fraction * b.load_q.abs());
            tan_phi.push(if b.load_p != 0.0 { b.load_q / b.load_p } else { 0.0 });
        }
        Self {
            sigma_p,
            sigma_q,
            tan_phi,
        }
    }

    pub fn n_buses(&self) -> usize {
        self.sigma_p.len()
    }

    /// Per-bus variances, active component.
    pub fn var_p(&self) -> Vec<f64> {
        self.sigma_p.iter().map(|s| s * s).collect()
    }

    /// Per-bus variances, reactive component under the given treatment.
    pub fn var_q(&self, treatment: ErrorTreatment) -> Vec<f64> {
        match treatment {
            ErrorTreatment::IndependentPQ => self.sigma_q.iter().map(|s| s * s).collect(),
            ErrorTreatment::ConstantPowerFactor => self
                .sigma_p
                .iter()
                .zip(&self.tan_phi)
                .map(|(s, t)| (s * t) * (s * t))
                .collect(),
        }
    }
}

/// A rectangular block of observed (or drawn) forecast errors:
/// `n_samples` rows by `n_buses` columns for each power component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    n_samples: usize,
    n_buses: usize,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl SampleSet {
    pub fn new(n_samples: usize, n_buses: usize, p: Vec<f64>, q: Vec<f64>) -> Result<Self, StatsError> {
        if p.len() != n_samples * n_buses || q.len() != n_samples * n_buses {
            return Err(StatsError::ShapeMismatch(format!(
                "expected {} values per block, got p={}, q={}",
                n_samples * n_buses,
                p.len(),
                q.len()
            )));
        }
        Ok(Self {
            n_samples,
            n_buses,
            p,
            q,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn p(&self, sample: usize, bus: usize) -> f64 {
        self.p[sample * self.n_buses + bus]
    }

    pub fn q(&self, sample: usize, bus: usize) -> f64 {
        self.q[sample * self.n_buses + bus]
    }

    pub fn p_row(&self, sample: usize) -> &[f64] {
        &self.p[sample * self.n_buses..(sample + 1) * self.n_buses]
    }

    pub fn q_row(&self, sample: usize) -> &[f64] {
        &self.q[sample * self.n_buses..(sample + 1) * self.n_buses]
    }
}

/// Zero-mean sample variance with the full 1/N weight (the error mean is
/// known to be zero, so no mean is subtracted and no degree is lost).
pub fn sample_variance(observations: &[f64]) -> f64 {
    let n = observations.len();
    assert!(n >= 1, "variance of an empty sample");
    observations.iter().map(|e| e * e).sum::<f64>() / n as f64
}

/// Two-sided (1 - xi) confidence interval for the variance of a zero-mean
/// Gaussian from `n` observations with sample variance `sigma_hat2`:
/// `[n s2 / chi2(n, 1-xi/2), n s2 / chi2(n, xi/2)]`.
pub fn variance_interval(sigma_hat2: f64, n: usize, xi: f64) -> Result<(f64, f64), StatsError> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(StatsError::BadXi(xi));
    }
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    let dof = n as u32;
    let lo = n as f64 * sigma_hat2 / chi2_quantile(dof, 1.0 - xi / 2.0);
    let hi = n as f64 * sigma_hat2 / chi2_quantile(dof, xi / 2.0);
    Ok((lo, hi))
}

/// Variance shifted a fraction `delta` of the way from the point estimate to
/// the interval's upper end: `sigma_hat2 + delta * (zeta_hi - sigma_hat2)`.
pub fn shifted_variance(sigma_hat2: f64, zeta_hi: f64, delta: f64) -> f64 {
    sigma_hat2 + delta * (zeta_hi - sigma_hat2)
}

/// Per-bus variance point estimates and ambiguity intervals fitted from a
/// sample set at confidence parameter `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityModel {
    pub n_samples: usize,
    pub xi: f64,
    pub sigma_hat2_p: Vec<f64>,
    pub sigma_hat2_q: Vec<f64>,
    pub lo_p: Vec<f64>,
    pub hi_p: Vec<f64>,
    pub lo_q: Vec<f64>,
    pub hi_q: Vec<f64>,
}

impl AmbiguityModel {
    pub fn fit(samples: &SampleSet, xi: f64) -> Result<Self, StatsError> {
        let n = samples.n_samples();
        if n < 2 {
            return Err(StatsError::TooFewSamples(n));
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(StatsError::BadXi(xi));
        }
        let nb = samples.n_buses();
        let mut m = Self {
            n_samples: n,
            xi,
            sigma_hat2_p: Vec::with_capacity(nb),
            sigma_hat2_q: Vec::with_capacity(nb),
            lo_p: Vec::with_capacity(nb),
            hi_p: Vec::with_capacity(nb),
            lo_q: Vec::with_capacity(nb),
            hi_q: Vec::with_capacity(nb),
        };
        // Quantiles depend only on (n, xi); hoist them out of the bus loop.
        let q_lo = chi2_quantile(n as u32, 1.0 - xi / 2.0);
        let q_hi = chi2_quantile(n as u32, xi / 2.0);
        for bus in 0..nb {
            let mut s2p = 0.0;
            let mut s2q = 0.0;
            for t in 0..n {
                s2p += samples.p(t, bus) * samples.p(t, bus);
                s2q += samples.q(t, bus) * samples.q(t, bus);
            }
            s2p /= n as f64;
            s2q /= n as f64;
            m.sigma_hat2_p.push(s2p);
            m.sigma_hat2_q.push(s2q);
            m.lo_p.push(n as f64 * s2p / q_lo);
            m.hi_p.push(n as f64 * s2p / q_hi);
            m.lo_q.push(n as f64 * s2q / q_lo);
            m.hi_q.push(n as f64 * s2q / q_hi);
        }
        Ok(m)
    }
}

/// Draws `count` forecast-error samples from `model` under `treatment`.
///
/// Draw order per sample: the active-power block first (one Gaussian per
/// bus), then the reactive block. Under `ConstantPowerFactor` the reactive
/// block consumes no randomness (eps_Q = tan_phi * eps_P), so the active
/// block is bit-identical across treatments for a given seed.
pub fn draw_errors(
    model: &ForecastErrorModel,
    treatment: ErrorTreatment,
    count: usize,
    seed: u64,
) -> SampleSet {
    let nb = model.n_buses();
    // Separate substreams so the active-power block is bit-identical no
    // matter how the reactive block is generated.
    let mut p_stream = rng::GaussianStream::new(rng::derive_seed(seed, 1));
    let mut q_stream = rng::GaussianStream::new(rng::derive_seed(seed, 2));
    let mut p = Vec::with_capacity(count * nb);
    let mut q = Vec::with_capacity(count * nb);
    for _ in 0..count {
        let row_start = p.len();
        for i in 0..nb {
            let z = if model.sigma_p[i] > 0.0 {
                p_stream.next_standard_normal()
            } else {
                0.0
            };
            p.push(model.sigma_p[i] * z);
        }
        match treatment {
            ErrorTreatment::IndependentPQ => {
                for i in 0..nb {
                    let z = if model.sigma_q[i] > 0.0 {
                        q_stream.next_standard_normal()
                    } else {
                        0.0
                    };
                    q.push(model.sigma_q[i] * z);
                }
            }
            ErrorTreatment::ConstantPowerFactor => {
                for i in 0..nb {
                    q.push(model.tan_phi[i] * p[row_start + i]);
                }
            }
        }
    }
    SampleSet {
        n_samples: count,
        n_buses: nb,
        p,
        q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_variance_uses_full_n_and_zero_mean() {
        assert_eq!(sample_variance(&[1.0, -1.0]), 1.0);
        // With mean subtraction this would be 0; with 1/(n-1) it would be 2.
        assert_eq!(sample_variance(&[1.0, 1.0]), 1.0);
    }

    #[test]
    fn variance_interval_frozen_values() {
        let (lo, hi) = variance_interval(1.0, 100, 0.05).unwrap();
        assert!((lo - 0.7718).abs() < 1e-4, "lo={lo}");
        assert!((hi - 1.3473).abs() < 1e-4, "hi={hi}");
        // The interval is asymmetric: more room above the estimate.
        assert!(hi - 1.0 > 1.0 - lo);
        assert!(lo < 1.0 && hi > 1.0);
    }

    #[test]
    fn variance_interval_narrows_with_sample_count() {
        let mut widths = Vec::new();
        for n in [30usize, 100, 300, 1000] {
            let (lo, hi) = variance_interval(1.0, n, 0.05).unwrap();
            widths.push(hi - lo);
        }
        for w in widths.windows(2) {
            assert!(w[1] < w[0], "widths must shrink: {widths:?}");
        }
    }

    #[test]
    fn variance_interval_rejects_bad_inputs() {
        assert!(matches!(
            variance_interval(1.0, 1, 0.05),
            Err(StatsError::TooFewSamples(1))
        ));
        assert!(matches!(
            variance_interval(1.0, 100, 0.0),
            Err(StatsError::BadXi(_))
        ));
    }

    #[test]
    fn shifted_variance_interpolates_to_upper_end() {
        assert!((shifted_variance(1.0, 1.3473, 0.5) - 1.17365).abs() < 1e-12);
        assert_eq!(shifted_variance(1.0, 1.3473, 0.0), 1.0);
        assert_eq!(shifted_variance(1.0, 1.3473, 1.0), 1.3473);
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let model = ForecastErrorModel {
            sigma_p: vec![0.0, 0.2, 0.1],
            sigma_q: vec![0.0, 0.05, 0.02],
            tan_phi: vec![0.0, 0.3, 0.2],
        };
        let a = draw_errors(&model, ErrorTreatment::IndependentPQ, 50, 9);
        let b = draw_errors(&model, ErrorTreatment::IndependentPQ, 50, 9);
        assert_eq!(a, b);
        let c = draw_errors(&model, ErrorTreatment::IndependentPQ, 50, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn constant_power_factor_couples_q_exactly_and_preserves_p_stream() {
        let model = ForecastErrorModel {
            sigma_p: vec![0.0, 0.2, 0.1],
            sigma_q: vec![0.0, 0.06, 0.02],
            tan_phi: vec![0.0, 0.3, 0.2],
        };
        let cpf = draw_errors(&model, ErrorTreatment::ConstantPowerFactor, 20, 5);
        let ind = draw_errors(&model, ErrorTreatment::IndependentPQ, 20, 5);
        for t in 0..20 {
            for i in 0..3 {
                assert_eq!(cpf.p(t, i).to_bits(), ind.p(t, i).to_bits());
                assert_eq!(cpf.q(t, i), model.tan_phi[i] * cpf.p(t, i));
            }
        }
    }

    #[test]
    fn fitted_variances_approach_truth() {
        let model = ForecastErrorModel {
            sigma_p: vec![0.0, 0.5],
            sigma_q: vec![0.0, 0.25],
            tan_phi: vec![0.0, 0.5],
        };
        let samples = draw_errors(&model, ErrorTreatment::IndependentPQ, 4000, 11);
        let amb = AmbiguityModel::fit(&samples, 0.05).unwrap();
        assert!((amb.sigma_hat2_p[1] - 0.25).abs() < 0.02);
        assert!((amb.sigma_hat2_q[1] - 0.0625).abs() < 0.01);
        assert_eq!(amb.sigma_hat2_p[0], 0.0);
        assert_eq!(amb.hi_p[0], 0.0);
        assert!(amb.lo_p[1] < amb.sigma_hat2_p[1] && amb.sigma_hat2_p[1] < amb.hi_p[1]);
    }
}

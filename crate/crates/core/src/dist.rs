//! Probability kernels, closed-form modes, reparameterized samplers, and
//! maximum-likelihood fits for the distributions of the model.
//!
//! Kernels are generic over [`Real`], so one definition serves plain
//! number crunching (generators, oracles) and tape-recorded training.

use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::error::{LpsError, Result};

/// Floor applied to fitted log-scale variances so downstream densities
/// stay finite when a sample set is (nearly) constant.
pub const VAR_FLOOR: f64 = 1e-6;

const LN_TWO_PI: f64 = 1.837_877_066_409_345_3;

/// Beta concentration pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

/// Log-normal location/variance on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub var: f64,
}

/// Independent Gaussian with per-coordinate standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        gaussian_logpdf(x, &self.mean, &self.sigma)
    }
}

/// Two-component log-normal mixture: the risk-weighted concept prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskMixtureParams {
    pub high_risk: LogNormalParams,
    pub low_risk: LogNormalParams,
}

/// log Beta(x; a, b).
pub fn beta_logpdf<T: Real>(x: T, a: T, b: T) -> Result<T> {
    let (xv, av, bv) = (x.val(), a.val(), b.val());
    if !(0.0 < xv && xv < 1.0) {
        return Err(LpsError::domain(
            "beta_logpdf",
            format!("x must lie in (0, 1), got {xv}"),
        ));
    }
    if av <= 0.0 || bv <= 0.0 {
        return Err(LpsError::domain(
            "beta_logpdf",
            format!("concentrations must be positive, got a={av}, b={bv}"),
        ));
    }
    let ln_norm = a.lgamma() + b.lgamma() - (a + b).lgamma();
    Ok(a.sub_c(1.0) * x.ln() + b.sub_c(1.0) * x.rsub_c(1.0).ln() - ln_norm)
}

/// log Bernoulli(y; π) for y ∈ {0, 1}.
pub fn bernoulli_logpmf<T: Real>(y: u8, pi: T) -> Result<T> {
    let pv = pi.val();
    if !(0.0 < pv && pv < 1.0) {
        return Err(LpsError::domain(
            "bernoulli_logpmf",
            format!("probability must lie in (0, 1), got {pv}"),
        ));
    }
    if y > 1 {
        return Err(LpsError::domain(
            "bernoulli_logpmf",
            format!("outcome must be 0 or 1, got {y}"),
        ));
    }
    Ok(if y == 1 { pi.ln() } else { pi.rsub_c(1.0).ln() })
}

/// log LN(x; μ, σ²).
pub fn lognormal_logpdf<T: Real>(x: T, mu: T, var: T) -> Result<T> {
    let (xv, vv) = (x.val(), var.val());
    if xv <= 0.0 {
        return Err(LpsError::domain(
            "lognormal_logpdf",
            format!("x must be positive, got {xv}"),
        ));
    }
    if vv <= 0.0 {
        return Err(LpsError::domain(
            "lognormal_logpdf",
            format!("variance must be positive, got {vv}"),
        ));
    }
    let lx = x.ln();
    let resid = lx - mu;
    Ok(-lx - var.mul_c(std::f64::consts::TAU).ln().mul_c(0.5)
        - resid.square() / var.mul_c(2.0))
}

/// Sum of independent univariate normal log-densities.
pub fn gaussian_logpdf<T: Real>(x: &[T], mean: &[T], sigma: &[f64]) -> Result<T> {
    if x.len() != mean.len() || x.len() != sigma.len() || x.is_empty() {
        return Err(LpsError::Usage(format!(
            "gaussian_logpdf shape mismatch: x={}, mean={}, sigma={}",
            x.len(),
            mean.len(),
            sigma.len()
        )));
    }
    let mut total: Option<T> = None;
    for i in 0..x.len() {
        let s = sigma[i];
        if s <= 0.0 {
            return Err(LpsError::domain(
                "gaussian_logpdf",
                format!("sigma must be positive, got {s}"),
            ));
        }
        let z = (x[i] - mean[i]).div_c(s);
        let term = z.square().mul_c(-0.5).add_c(-0.5 * LN_TWO_PI - s.ln());
        total = Some(match total {
            None => term,
            Some(t) => t + term,
        });
    }
    Ok(total.unwrap())
}

/// log of the risk-weighted mixture π·LN₁ + (1−π)·LN₀, evaluated by
/// factoring out the larger component so extreme log-densities stay finite.
/// `high`/`low` are (μ, σ²) pairs.
pub fn mixture_logpdf<T: Real>(z: T, pi: T, high: (T, T), low: (T, T)) -> Result<T> {
    let pv = pi.val();
    if !(0.0..=1.0).contains(&pv) {
        return Err(LpsError::domain(
            "mixture_logpdf",
            format!("mixture weight must lie in [0, 1], got {pv}"),
        ));
    }
    let lp1 = lognormal_logpdf(z, high.0, high.1)?;
    let lp0 = lognormal_logpdf(z, low.0, low.1)?;
    // Exact collapse at the endpoints; the factored form below would
    // otherwise underflow for widely separated components.
    if pv == 0.0 {
        return Ok(lp0);
    }
    if pv == 1.0 {
        return Ok(lp1);
    }
    if lp1.val() >= lp0.val() {
        Ok(lp1 + (pi + pi.rsub_c(1.0) * (lp0 - lp1).exp()).ln())
    } else {
        Ok(lp0 + (pi.rsub_c(1.0) + pi * (lp1 - lp0).exp()).ln())
    }
}

/// Mode of a log-normal: exp(μ − σ²).
pub fn lognormal_mode(p: LogNormalParams) -> f64 {
    (p.mu - p.var).exp()
}

/// Mode of a Beta with a, b ≥ 1: (a−1)/(a+b−2), with the uniform case
/// mapped to the symmetric choice 0.5.
pub fn beta_mode(p: BetaParams) -> Result<f64> {
    if p.a < 1.0 || p.b < 1.0 {
        return Err(LpsError::domain(
            "beta_mode",
            format!("requires a, b >= 1, got a={}, b={}", p.a, p.b),
        ));
    }
    if p.a + p.b == 2.0 {
        return Ok(0.5);
    }
    Ok((p.a - 1.0) / (p.a + p.b - 2.0))
}

/// Reparameterized log-normal draw exp(μ + σ·ε); gradients flow into the
/// parameters, not the standard-normal draw.
pub fn sample_lognormal_reparam<T: Real>(mu: T, var: T, eps: f64) -> Result<T> {
    if var.val() <= 0.0 {
        return Err(LpsError::domain(
            "sample_lognormal_reparam",
            format!("variance must be positive, got {}", var.val()),
        ));
    }
    Ok((mu + var.sqrt_r().mul_c(eps)).exp())
}

/// Kumaraswamy inverse-CDF draw with the same concentrations as the Beta
/// posterior: x = (1 − (1−u)^{1/b})^{1/a}. Differentiable in (a, b).
pub fn sample_beta_reparam<T: Real>(a: T, b: T, u: f64) -> Result<T> {
    if !(0.0 < u && u < 1.0) {
        return Err(LpsError::domain(
            "sample_beta_reparam",
            format!("uniform draw must lie in (0, 1), got {u}"),
        ));
    }
    if a.val() <= 0.0 || b.val() <= 0.0 {
        return Err(LpsError::domain(
            "sample_beta_reparam",
            format!(
                "concentrations must be positive, got a={}, b={}",
                a.val(),
                b.val()
            ),
        ));
    }
    // t = (1-u)^{1/b}, x = (1-t)^{1/a}
    let t = b.rdiv_c((1.0 - u).ln()).exp();
    Ok((t.rsub_c(1.0).ln() / a).exp())
}

/// log Kumaraswamy(x; a, b) = ln a + ln b + (a−1)ln x + (b−1)ln(1−xᵃ).
pub fn kumaraswamy_logpdf<T: Real>(x: T, a: T, b: T) -> Result<T> {
    let xv = x.val();
    if !(0.0 < xv && xv < 1.0) {
        return Err(LpsError::domain(
            "kumaraswamy_logpdf",
            format!("x must lie in (0, 1), got {xv}"),
        ));
    }
    if a.val() <= 0.0 || b.val() <= 0.0 {
        return Err(LpsError::domain(
            "kumaraswamy_logpdf",
            format!(
                "concentrations must be positive, got a={}, b={}",
                a.val(),
                b.val()
            ),
        ));
    }
    let lx = x.ln();
    let xa = (a * lx).exp();
    Ok(a.ln() + b.ln() + a.sub_c(1.0) * lx + b.sub_c(1.0) * xa.rsub_c(1.0).ln())
}

/// Kumaraswamy CDF, the reference law for the reparameterized Beta draws.
pub fn kumaraswamy_cdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        1.0 - (1.0 - x.powf(a)).powf(b)
    }
}

/// Maximum-likelihood log-normal fit: μ and population variance of the
/// log-samples, with the variance floored at [`VAR_FLOOR`]. A single
/// sample yields its log with the floor variance.
pub fn lognormal_fit(samples: &[f64]) -> Result<LogNormalParams> {
    if samples.is_empty() {
        return Err(LpsError::domain(
            "lognormal_fit",
            "needs at least one sample",
        ));
    }
    let mut logs = Vec::with_capacity(samples.len());
    for &s in samples {
        if s <= 0.0 {
            return Err(LpsError::domain(
                "lognormal_fit",
                format!("samples must be positive, got {s}"),
            ));
        }
        logs.push(s.ln());
    }
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = if logs.len() < 2 {
        VAR_FLOOR
    } else {
        (logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n).max(VAR_FLOOR)
    };
    Ok(LogNormalParams { mu, var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_diff_check, Tape};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn beta_examples() {
        // Beta(1,1) is the uniform density.
        for &x in &[0.05, 0.3, 0.99] {
            assert!(beta_logpdf(x, 1.0, 1.0).unwrap().abs() < 1e-12);
        }
        // Beta(2,2) at 0.5: pdf = 6·x(1−x) = 1.5.
        let v = beta_logpdf(0.5, 2.0, 2.0).unwrap();
        assert!((v - 1.5f64.ln()).abs() < 1e-12);
        assert!(beta_logpdf(1.0, 2.0, 2.0).is_err());
        assert!(beta_logpdf(0.5, -1.0, 2.0).is_err());
    }

    #[test]
    fn bernoulli_examples() {
        assert!((bernoulli_logpmf(1, 0.25).unwrap() - 0.25f64.ln()).abs() < 1e-12);
        assert!((bernoulli_logpmf(0, 0.25).unwrap() - 0.75f64.ln()).abs() < 1e-12);
        assert!(
            (bernoulli_logpmf(1, 0.5).unwrap() - bernoulli_logpmf(0, 0.5).unwrap()).abs() < 1e-15
        );
        assert!(bernoulli_logpmf(1, 0.0).is_err());
    }

    #[test]
    fn lognormal_examples() {
        let v = lognormal_logpdf(1.0, 0.0, 1.0).unwrap();
        assert!((v + 0.5 * std::f64::consts::TAU.ln()).abs() < 1e-12);
        let v = lognormal_logpdf(std::f64::consts::E, 1.0, 1.0).unwrap();
        assert!((v - (-1.0 - 0.5 * std::f64::consts::TAU.ln())).abs() < 1e-12);
        // ∂/∂μ at the mean of log x is zero.
        let t = Tape::new();
        let mu = t.scalar(0.0);
        let out = lognormal_logpdf(t.scalar(1.0), mu, t.scalar(1.0)).unwrap();
        let g = t.backward(out).unwrap();
        assert!(g.wrt(mu).abs() < 1e-15);
    }

    #[test]
    fn gaussian_matches_scalar_oracle() {
        let x = [0.4, -1.0, 2.5];
        let mean = [0.1, 0.0, 2.0];
        let sigma = [0.5, 1.0, 2.0];
        let total = gaussian_logpdf(&x, &mean, &sigma).unwrap();
        let mut by_hand = 0.0;
        for i in 0..3 {
            let z = (x[i] - mean[i]) / sigma[i];
            by_hand += -0.5 * z * z - 0.5 * LN_TWO_PI - sigma[i].ln();
        }
        assert!((total - by_hand).abs() < 1e-12);

        // At the mean each coordinate contributes −½ln(2πσ²).
        let at_mean = gaussian_logpdf(&mean, &mean, &sigma).unwrap();
        let expect: f64 = sigma.iter().map(|s| -0.5 * LN_TWO_PI - s.ln()).sum();
        assert!((at_mean - expect).abs() < 1e-12);

        // Displacing one coordinate by σ costs exactly ½.
        let mut x2 = mean;
        x2[1] += sigma[1];
        let v = gaussian_logpdf(&x2, &mean, &sigma).unwrap();
        assert!((v - (expect - 0.5)).abs() < 1e-12);

        assert!(gaussian_logpdf(&x[..2], &mean, &sigma).is_err());
    }

    #[test]
    fn mixture_collapses_and_is_stable() {
        let high = (3.8f64.ln(), 0.04);
        let low = (5.5f64.ln(), 0.0225);
        let z = 4.4;
        let lp1 = lognormal_logpdf(z, high.0, high.1).unwrap();
        let lp0 = lognormal_logpdf(z, low.0, low.1).unwrap();
        assert!((mixture_logpdf(z, 0.0, high, low).unwrap() - lp0).abs() < 1e-12);
        assert!((mixture_logpdf(z, 1.0, high, low).unwrap() - lp1).abs() < 1e-12);
        // Identical components: any π returns the component density.
        let v = mixture_logpdf(z, 0.37, high, high).unwrap();
        assert!((v - lp1).abs() < 1e-12);
        // Extreme separation stays finite.
        let far = (50.0, 0.01);
        let v = mixture_logpdf(1e-3, 0.2, far, (1e-3f64.ln(), 0.01)).unwrap();
        assert!(v.is_finite());
        assert!(mixture_logpdf(-1.0, 0.5, high, low).is_err());
    }

    #[test]
    fn mixture_monotone_in_pi_iff_high_component_larger() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let high = (rng.gen_range(-1.0..2.0), rng.gen_range(0.01..0.4));
            let low = (rng.gen_range(-1.0..2.0), rng.gen_range(0.01..0.4));
            let z = rng.gen_range(0.2..6.0);
            let lp1 = lognormal_logpdf(z, high.0, high.1).unwrap();
            let lp0 = lognormal_logpdf(z, low.0, low.1).unwrap();
            let lo = mixture_logpdf(z, 0.1, high, low).unwrap();
            let hi = mixture_logpdf(z, 0.9, high, low).unwrap();
            if lp1 > lp0 {
                assert!(hi > lo);
            } else if lp1 < lp0 {
                assert!(hi < lo);
            }
        }
    }

    #[test]
    fn modes() {
        assert!(
            (lognormal_mode(LogNormalParams { mu: 0.0, var: 1.0 }) - (-1.0f64).exp()).abs()
                < 1e-12
        );
        assert!(
            (lognormal_mode(LogNormalParams { mu: 0.7, var: 1e-12 }) - 0.7f64.exp()).abs() < 1e-9
        );
        assert!((beta_mode(BetaParams { a: 3.0, b: 2.0 }).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(beta_mode(BetaParams { a: 1.0, b: 1.0 }).unwrap(), 0.5);
        assert!(beta_mode(BetaParams { a: 0.5, b: 2.0 }).is_err());
    }

    #[test]
    fn lognormal_reparam_examples() {
        // ε = 0 gives exp(μ).
        assert!((sample_lognormal_reparam(0.4, 0.09, 0.0).unwrap() - 0.4f64.exp()).abs() < 1e-12);
        // Monotone increasing in ε.
        let mut prev = 0.0;
        for k in -3..=3 {
            let v = sample_lognormal_reparam(0.0, 0.25, k as f64).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn lognormal_reparam_matches_analytic_mean() {
        let (mu, var) = (0.3, 0.16);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            let v = sample_lognormal_reparam(mu, var, eps).unwrap();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let sd = ((sumsq / n as f64) - mean * mean).sqrt();
        let expect = (mu + var / 2.0).exp();
        let se = sd / (n as f64).sqrt();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn beta_reparam_examples() {
        // Kumaraswamy(1,1) is uniform: x = u.
        for &u in &[0.1, 0.5, 0.9] {
            assert!((sample_beta_reparam(1.0, 1.0, u).unwrap() - u).abs() < 1e-12);
        }
        // u → 0 drives the draw to 0.
        assert!(sample_beta_reparam(2.0, 3.0, 1e-12).unwrap() < 1e-5);
        assert!(sample_beta_reparam(2.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn kumaraswamy_mean_matches_analytic() {
        // mean = b·B(1+1/a, b); for a=b=2 that is 2·B(1.5, 2) ≈ 0.5333.
        let (a, b) = (2.0, 2.0);
        let expect = 8.0 / 15.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let u: f64 = rng.gen_range(1e-16..1.0);
            let v = sample_beta_reparam(a, b, u).unwrap();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let sd = ((sumsq / n as f64) - mean * mean).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn fit_examples() {
        // All samples equal: μ = log c, variance at the floor.
        let p = lognormal_fit(&[1000.0; 8]).unwrap();
        assert!((p.mu - 1000.0f64.ln()).abs() < 1e-12);
        assert_eq!(p.var, VAR_FLOOR);
        // {1, e²}: logs {0, 2} → μ = 1, population variance 1... times 2/2.
        let p = lognormal_fit(&[1.0, std::f64::consts::E.powi(2)]).unwrap();
        assert!((p.mu - 1.0).abs() < 1e-12);
        assert!((p.var - 1.0).abs() < 1e-12);
        assert!(lognormal_fit(&[1.0, -2.0]).is_err());
        assert!(lognormal_fit(&[]).is_err());
        let single = lognormal_fit(&[2.0]).unwrap();
        assert!((single.mu - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(single.var, VAR_FLOOR);
    }

    #[test]
    fn fit_recovers_generating_params() {
        let (mu, var) = (0.5, 0.09);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| {
                let eps: f64 = rng.sample(StandardNormal);
                sample_lognormal_reparam(mu, var, eps).unwrap()
            })
            .collect();
        let p = lognormal_fit(&samples).unwrap();
        assert!((p.mu - mu).abs() < 0.01);
        assert!((p.var.sqrt() - var.sqrt()).abs() < 0.01);
    }

    /// Every kernel's gradient against the finite-difference oracle.
    #[test]
    fn kernel_gradients_match_finite_differences() {
        let cases: Vec<(&str, f64)> = vec![
            ("beta", {
                finite_diff_check(
                    |_, v| beta_logpdf(v[0], v[1], v[2]),
                    &[0.35, 2.2, 4.1],
                    1e-5,
                )
                .unwrap()
            }),
            ("bernoulli", {
                finite_diff_check(|_, v| bernoulli_logpmf(1, v[0]), &[0.3], 1e-5).unwrap()
            }),
            ("lognormal", {
                finite_diff_check(
                    |_, v| lognormal_logpdf(v[0], v[1], v[2]),
                    &[1.4, 0.2, 0.5],
                    1e-5,
                )
                .unwrap()
            }),
            ("mixture", {
                finite_diff_check(
                    |_, v| mixture_logpdf(v[0], v[1], (v[2], v[3]), (v[4], v[5])),
                    &[1.2, 0.4, 0.1, 0.3, 0.6, 0.2],
                    1e-5,
                )
                .unwrap()
            }),
            ("gaussian", {
                finite_diff_check(
                    |_, v| gaussian_logpdf(&[v[0], v[1]], &[v[2], v[3]], &[0.5, 1.5]),
                    &[0.3, -0.2, 0.1, 0.4],
                    1e-5,
                )
                .unwrap()
            }),
            ("kumaraswamy", {
                finite_diff_check(
                    |_, v| kumaraswamy_logpdf(v[0], v[1], v[2]),
                    &[0.42, 2.5, 3.5],
                    1e-5,
                )
                .unwrap()
            }),
            ("lognormal_reparam", {
                finite_diff_check(
                    |_, v| sample_lognormal_reparam(v[0], v[1], 0.7),
                    &[0.2, 0.3],
                    1e-5,
                )
                .unwrap()
            }),
            ("beta_reparam", {
                finite_diff_check(|_, v| sample_beta_reparam(v[0], v[1], 0.61), &[2.0, 3.0], 1e-5)
                    .unwrap()
            }),
        ];
        for (name, err) in cases {
            assert!(err < 1e-6, "{name}: err = {err}");
        }
    }
}

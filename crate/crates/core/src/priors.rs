//! Bernoulli-Gaussian signal prior and its AWGN denoisers.
//!
//! The prior draws each coordinate as CN(0, active_var) with probability
//! `rho_s` and zero otherwise, with `rho_s * active_var = 1` so the signal
//! has unit variance. Module B of the message-passing loop treats its input
//! as an AWGN observation `r = x + CN(0, v)` and needs three maps: the
//! posterior mean, the scalar MMSE as a function of `v`, and the extrinsic
//! denoiser obtained by subtracting the input information back out.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::quadrature::{panel_rule, radial_rule};
use crate::rng::{complex_gaussian, seeded_rng};

/// Lower clamp for message variances.
pub const V_FLOOR: f64 = 1e-12;
/// Upper clamp for message variances. The extrinsic variance diverges as
/// MMSE(v) approaches v (near-Gaussian regime); the clamp keeps the
/// recursion numerically defined there.
pub const V_CEIL: f64 = 1e6;

/// Bernoulli-Gaussian prior with unit total variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    rho_s: f64,
    active_var: f64,
}

impl PriorSpec {
    /// Validates `0 < rho_s <= 1`, `active_var > 0`, and
    /// `rho_s * active_var = 1`.
    pub fn new(rho_s: f64, active_var: f64) -> Result<Self> {
        if !(rho_s > 0.0 && rho_s <= 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "sparsity rate must be in (0, 1], got {rho_s}"
            )));
        }
        if !(active_var > 0.0) || !active_var.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "active component variance must be > 0, got {active_var}"
            )));
        }
        if (rho_s * active_var - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidParameter(format!(
                "rho_s * active_var must equal 1 (unit signal variance), got {}",
                rho_s * active_var
            )));
        }
        if rho_s == 1.0 {
            log::warn!(
                "rho_s = 1 selects a pure Gaussian signal; this is an analytic \
                 test mode, not a sparse recovery setting"
            );
        }
        Ok(Self { rho_s, active_var })
    }

    /// Prior with the given sparsity rate and `active_var = 1/rho_s`.
    pub fn from_sparsity(rho_s: f64) -> Result<Self> {
        if !(rho_s > 0.0 && rho_s <= 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "sparsity rate must be in (0, 1], got {rho_s}"
            )));
        }
        Self::new(rho_s, 1.0 / rho_s)
    }

    pub fn rho_s(&self) -> f64 {
        self.rho_s
    }

    pub fn active_var(&self) -> f64 {
        self.active_var
    }

    pub fn is_gaussian(&self) -> bool {
        self.rho_s == 1.0
    }

    /// Closed-form fourth moment `E|x|^4 = 2 rho_s active_var^2` of the
    /// circular mixture.
    pub fn fourth_moment(&self) -> f64 {
        2.0 * self.rho_s * self.active_var * self.active_var
    }
}

/// Output of the extrinsic denoiser: elementwise means plus one scalar
/// variance, clamped into `[V_FLOOR, V_CEIL]`.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub mean: Vec<Complex64>,
    pub variance: f64,
}

/// Scalar denoising engine for one AWGN level `v`.
///
/// Precomputes the posterior gain, the log-odds line for the active
/// component, and the quadrature MMSE, so that per-coordinate work in hot
/// loops is a single exp.
#[derive(Debug, Clone)]
pub struct AwgnDenoiser {
    prior: PriorSpec,
    v: f64,
    gain: f64,
    var_active: f64,
    // w(|r|^2) = sigmoid(-(log_odds0 - |r|^2 * log_odds_slope))
    log_odds0: f64,
    log_odds_slope: f64,
    mmse: f64,
    extrinsic_var: f64,
}

fn stable_sigmoid(l: f64) -> f64 {
    // 1 / (1 + e^l) without overflow for large |l|.
    if l > 0.0 {
        let e = (-l).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + l.exp())
    }
}

impl AwgnDenoiser {
    pub fn new(prior: PriorSpec, v: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CoreError::InvalidVariance(v));
        }
        let av = prior.active_var;
        let rho = prior.rho_s;
        let c_active = av + v;
        let gain = av / c_active;
        let var_active = av * v / c_active;
        let (log_odds0, log_odds_slope) = if prior.is_gaussian() {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (
                ((1.0 - rho) / rho).ln() + (c_active / v).ln(),
                av / (c_active * v),
            )
        };
        let mut den = Self {
            prior,
            v,
            gain,
            var_active,
            log_odds0,
            log_odds_slope,
            mmse: 0.0,
            extrinsic_var: 0.0,
        };
        den.mmse = den.compute_mmse();
        den.extrinsic_var = den.compute_extrinsic_var();
        Ok(den)
    }

    /// Posterior probability that the coordinate is active, given |r|^2.
    fn active_weight(&self, r_norm_sqr: f64) -> f64 {
        if self.prior.is_gaussian() {
            1.0
        } else {
            stable_sigmoid(self.log_odds0 - r_norm_sqr * self.log_odds_slope)
        }
    }

    /// Posterior mean of `x` given `r = x + CN(0, v)`.
    pub fn posterior(&self, r: Complex64) -> Complex64 {
        r * (self.active_weight(r.norm_sqr()) * self.gain)
    }

    /// Posterior variance of `x` given the observation `r`.
    pub fn posterior_var_given(&self, r: Complex64) -> f64 {
        let w = self.active_weight(r.norm_sqr());
        let mean_sqr = (self.gain * self.gain) * r.norm_sqr();
        w * self.var_active + w * (1.0 - w) * mean_sqr
    }

    /// `int_0^inf f(u) e^{-u/c}/c du` by 128-node radial quadrature: a
    /// Gauss-Legendre panel over the sigmoid transition of the posterior
    /// weight (where the integrand is not smooth on the scale of `c`),
    /// plus a shifted Gauss-Laguerre tail. Deterministic, so downstream
    /// recursions reproduce bit for bit.
    fn radial_integral<F: Fn(f64) -> f64>(&self, c: f64, f: F) -> f64 {
        let u_cut = if self.prior.is_gaussian() {
            0.0
        } else {
            let u_star = self.log_odds0 / self.log_odds_slope;
            if u_star <= 0.0 {
                0.0
            } else {
                (u_star + 20.0 / self.log_odds_slope).min(45.0 * c)
            }
        };
        let mut acc = 0.0;
        if u_cut > 0.0 {
            for &(x, wt) in panel_rule() {
                let u = u_cut * x;
                acc += wt * u_cut * f(u) * (-u / c).exp() / c;
            }
        }
        let damp = (-u_cut / c).exp();
        if damp > 0.0 {
            let mut tail = 0.0;
            for &(t, wt) in radial_rule() {
                tail += wt * f(u_cut + c * t);
            }
            acc += damp * tail;
        }
        acc
    }

    /// Per-coordinate MMSE at this noise level: the conditional variance
    /// integrated against the mixture marginal of |r|^2.
    fn compute_mmse(&self) -> f64 {
        let rho = self.prior.rho_s;
        let c_active = self.prior.active_var + self.v;
        let c_null = self.v;
        let f = |u: f64| {
            let w = self.active_weight(u);
            w * self.var_active + w * (1.0 - w) * (self.gain * self.gain) * u
        };
        let active_part = self.radial_integral(c_active, &f);
        let null_part = if rho < 1.0 {
            self.radial_integral(c_null, &f)
        } else {
            0.0
        };
        rho * active_part + (1.0 - rho) * null_part
    }

    pub fn mmse(&self) -> f64 {
        self.mmse
    }

    fn compute_extrinsic_var(&self) -> f64 {
        let inv = 1.0 / self.mmse - 1.0 / self.v;
        if inv <= 0.0 {
            // MMSE(v) >= v cannot happen analytically; under quadrature error
            // it can. Clamp and log.
            log::warn!(
                "extrinsic variance diverged (MMSE(v) = {} >= v = {}); clamping to {V_CEIL}",
                self.mmse,
                self.v
            );
            V_CEIL
        } else {
            (1.0 / inv).clamp(V_FLOOR, V_CEIL)
        }
    }

    /// Extrinsic variance `(1/MMSE(v) - 1/v)^{-1}`, clamped.
    pub fn extrinsic_var(&self) -> f64 {
        self.extrinsic_var
    }

    /// Extrinsic mean `v' (posterior(r)/MMSE(v) - r/v)`.
    pub fn extrinsic(&self, r: Complex64) -> Complex64 {
        (self.posterior(r) / self.mmse - r / self.v) * self.extrinsic_var
    }

    pub fn noise_var(&self) -> f64 {
        self.v
    }
}

/// Draws an i.i.d. signal from the prior. Deterministic given `seed`.
pub fn sample_signal(prior: &PriorSpec, n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < prior.rho_s {
                complex_gaussian(&mut rng, prior.active_var)
            } else {
                Complex64::ZERO
            }
        })
        .collect()
}

/// Elementwise posterior mean of `x` given `r = x + CN(0, v)`.
pub fn posterior_mean(prior: &PriorSpec, r: &[Complex64], v: f64) -> Result<Vec<Complex64>> {
    let den = AwgnDenoiser::new(*prior, v)?;
    Ok(r.iter().map(|&z| den.posterior(z)).collect())
}

/// Per-coordinate MMSE of estimating `x` from `x + CN(0, v)`.
pub fn mmse(prior: &PriorSpec, v: f64) -> Result<f64> {
    Ok(AwgnDenoiser::new(*prior, v)?.mmse())
}

/// Extrinsic denoiser: mean and clamped variance fed back to the linear
/// module.
pub fn extrinsic_denoise(prior: &PriorSpec, r: &[Complex64], v: f64) -> Result<DenoiserOutput> {
    let den = AwgnDenoiser::new(*prior, v)?;
    Ok(DenoiserOutput {
        mean: r.iter().map(|&z| den.extrinsic(z)).collect(),
        variance: den.extrinsic_var(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bg01() -> PriorSpec {
        PriorSpec::new(0.1, 10.0).unwrap()
    }

    fn gaussian() -> PriorSpec {
        PriorSpec::new(1.0, 1.0).unwrap()
    }

    /// Complex Gaussian density CN(0, c) evaluated at z.
    fn cn_density(z: Complex64, c: f64) -> f64 {
        (-z.norm_sqr() / c).exp() / (std::f64::consts::PI * c)
    }

    /// Posterior mean and second moment by brute-force 2-D Simpson
    /// integration of the Bayes rule over the active component. The box is
    /// centered on the observation and sized by the likelihood width, which
    /// dominates the product; independent of the closed-form path.
    fn posterior_moments_oracle(prior: &PriorSpec, r: Complex64, v: f64) -> (Complex64, f64) {
        let av = prior.active_var();
        let rho = prior.rho_s();
        let half = 8.0 * v.sqrt();
        let n = 2000usize; // even number of Simpson intervals per axis
        let h = 2.0 * half / n as f64;
        let w1d = |i: usize| -> f64 {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut num = Complex64::ZERO;
        let mut num2 = 0.0;
        let mut den_active = 0.0;
        for i in 0..=n {
            let re = r.re - half + i as f64 * h;
            let wi = w1d(i);
            for j in 0..=n {
                let im = r.im - half + j as f64 * h;
                let x = Complex64::new(re, im);
                let f = cn_density(r - x, v) * cn_density(x, av) * (wi * w1d(j));
                num += x * f;
                num2 += x.norm_sqr() * f;
                den_active += f;
            }
        }
        let cell = h * h / 9.0;
        num *= cell;
        num2 *= cell;
        den_active *= cell;
        let den = rho * den_active + (1.0 - rho) * cn_density(r, v);
        (num * (rho / den), num2 * rho / den)
    }

    fn posterior_mean_oracle(prior: &PriorSpec, r: Complex64, v: f64) -> Complex64 {
        posterior_moments_oracle(prior, r, v).0
    }

    /// MMSE by dense Simpson integration of the conditional variance against
    /// the radial marginal; an integration route independent of the
    /// Gauss-Laguerre rule.
    fn mmse_reference(prior: &PriorSpec, v: f64) -> f64 {
        let den = AwgnDenoiser::new(*prior, v).unwrap();
        let rho = prior.rho_s();
        let c1 = prior.active_var() + v;
        let c2 = v;
        let upper = 60.0 * c1.max(c2);
        // step count sized to resolve the posterior-weight transition
        let steps = 400_000usize; // even
        let h = upper / steps as f64;
        let integrand = |u: f64| {
            let var = den.posterior_var_given(Complex64::new(u.sqrt(), 0.0));
            let marginal = rho * (-u / c1).exp() / c1
                + if rho < 1.0 {
                    (1.0 - rho) * (-u / c2).exp() / c2
                } else {
                    0.0
                };
            var * marginal
        };
        let mut acc = integrand(0.0) + integrand(upper);
        for k in 1..steps {
            let coef = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += coef * integrand(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn prior_spec_validation() {
        assert!(PriorSpec::new(0.1, 10.0).is_ok());
        assert!(PriorSpec::new(0.1, 5.0).is_err());
        assert!(PriorSpec::new(0.0, 1.0).is_err());
        assert!(PriorSpec::new(1.5, 1.0).is_err());
        let p = PriorSpec::from_sparsity(0.25).unwrap();
        assert!((p.active_var() - 4.0).abs() < 1e-12);
        assert!((bg01().fourth_moment() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_samples_have_unit_variance() {
        let x = sample_signal(&gaussian(), 4096, 7);
        let var: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "empirical variance {var}");
    }

    #[test]
    fn sparse_samples_have_expected_zero_fraction() {
        let x = sample_signal(&bg01(), 100_000, 3);
        let zeros = x.iter().filter(|z| z.norm_sqr() == 0.0).count() as f64;
        let frac = zeros / x.len() as f64;
        assert!((frac - 0.9).abs() < 0.01, "zero fraction {frac}");
    }

    #[test]
    fn sparse_samples_fourth_moment() {
        let x = sample_signal(&bg01(), 1_000_000, 5);
        let m4: f64 = x.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() / x.len() as f64;
        assert!((m4 - 20.0).abs() / 20.0 < 0.1, "fourth moment {m4}");
    }

    #[test]
    fn gaussian_posterior_is_linear_shrinkage() {
        let out = posterior_mean(&gaussian(), &[Complex64::new(2.0, 0.0)], 1.0).unwrap();
        assert!((out[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn posterior_of_zero_is_zero() {
        let out = posterior_mean(&bg01(), &[Complex64::ZERO], 0.5).unwrap();
        assert_eq!(out[0], Complex64::ZERO);
    }

    #[test]
    fn posterior_rejects_bad_variance() {
        assert!(matches!(
            posterior_mean(&bg01(), &[Complex64::ONE], 0.0),
            Err(CoreError::InvalidVariance(_))
        ));
        assert!(matches!(mmse(&bg01(), -1.0), Err(CoreError::InvalidVariance(_))));
    }

    #[test]
    fn posterior_matches_bayes_oracle() {
        let prior = bg01();
        let v = 0.5;
        for &r in &[
            Complex64::new(3.0, 0.0),
            Complex64::new(0.4, -1.2),
            Complex64::new(-2.0, 2.5),
        ] {
            let ours = posterior_mean(&prior, &[r], v).unwrap()[0];
            let oracle = posterior_mean_oracle(&prior, r, v);
            assert!(
                (ours - oracle).norm() < 1e-8,
                "r={r}: {ours} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn posterior_variance_matches_bayes_oracle() {
        let prior = bg01();
        let v = 0.5;
        let den = AwgnDenoiser::new(prior, v).unwrap();
        for &r in &[Complex64::new(3.0, 0.0), Complex64::new(0.3, 0.9)] {
            let (mean, second) = posterior_moments_oracle(&prior, r, v);
            let oracle_var = second - mean.norm_sqr();
            let ours = den.posterior_var_given(r);
            assert!(
                (ours - oracle_var).abs() < 1e-8,
                "r={r}: {ours} vs oracle {oracle_var}"
            );
        }
    }

    #[test]
    fn gaussian_mmse_closed_form() {
        let mm = mmse(&gaussian(), 1.0).unwrap();
        assert!((mm - 0.5).abs() < 1e-12);
        for &v in &[0.01, 0.3, 2.0, 50.0] {
            let mm = mmse(&gaussian(), v).unwrap();
            assert!((mm - v / (1.0 + v)).abs() < 1e-12, "v={v}: {mm}");
        }
    }

    #[test]
    fn mmse_vanishing_noise() {
        for prior in [gaussian(), bg01()] {
            let mm = mmse(&prior, 1e-9).unwrap();
            assert!(mm < 1e-8, "{prior:?}: {mm}");
            assert!(mm > 0.0);
        }
    }

    #[test]
    fn mmse_matches_simpson_reference() {
        let prior = bg01();
        for &v in &[0.05, 0.1, 0.5, 2.0, 20.0] {
            let quad = mmse(&prior, v).unwrap();
            let reference = mmse_reference(&prior, v);
            assert!(
                (quad - reference).abs() / reference < 1e-9,
                "v={v}: {quad} vs {reference}"
            );
        }
    }

    #[test]
    fn mmse_bounds_and_monotonicity() {
        let prior = bg01();
        let mut prev = 0.0;
        for k in 0..=80 {
            let v = 10f64.powf(-4.0 + 8.0 * k as f64 / 80.0);
            let mm = mmse(&prior, v).unwrap();
            assert!(mm > 0.0);
            assert!(mm <= v / (1.0 + v) + 1e-12, "v={v}: {mm} vs {}", v / (1.0 + v));
            assert!(mm + 1e-12 >= prev, "not monotone at v={v}");
            prev = mm;
        }
    }

    #[test]
    fn gaussian_extrinsic_is_the_prior() {
        let r: Vec<Complex64> = vec![
            Complex64::new(0.7, -0.3),
            Complex64::new(-4.0, 1.0),
            Complex64::ZERO,
        ];
        let out = extrinsic_denoise(&gaussian(), &r, 1.0).unwrap();
        assert!((out.variance - 1.0).abs() < 1e-12);
        for z in &out.mean {
            assert!(z.norm() < 1e-12, "extrinsic mean {z} should vanish");
        }
    }

    #[test]
    fn extrinsic_of_zero_is_zero() {
        let out = extrinsic_denoise(&bg01(), &[Complex64::ZERO], 0.5).unwrap();
        assert_eq!(out.mean[0], Complex64::ZERO);
        assert!(out.variance > 0.0);
    }

    #[test]
    fn extrinsic_matches_oracle_composition() {
        let prior = bg01();
        let v = 0.5;
        let r = Complex64::new(1.0, 1.0);
        let out = extrinsic_denoise(&prior, &[r], v).unwrap();
        let eta_oracle = posterior_mean_oracle(&prior, r, v);
        let mmse_oracle = mmse_reference(&prior, v);
        let vprime = 1.0 / (1.0 / mmse_oracle - 1.0 / v);
        let mean_oracle = (eta_oracle / mmse_oracle - r / v) * vprime;
        assert!((out.variance - vprime).abs() < 1e-6, "{} vs {vprime}", out.variance);
        assert!(
            (out.mean[0] - mean_oracle).norm() < 1e-6,
            "{} vs {mean_oracle}",
            out.mean[0]
        );
    }

    proptest! {
        #[test]
        fn posterior_is_phase_equivariant(
            mag in 0.01f64..8.0,
            theta in 0.0f64..std::f64::consts::TAU,
            v in 0.01f64..10.0,
        ) {
            let prior = bg01();
            let den = AwgnDenoiser::new(prior, v).unwrap();
            let r = Complex64::new(mag, 0.0);
            let phase = Complex64::from_polar(1.0, theta);
            let lhs = den.posterior(r * phase);
            let rhs = den.posterior(r) * phase;
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
        }

        #[test]
        fn extrinsic_variance_is_clamped_positive(v in 1e-6f64..1e4) {
            let den = AwgnDenoiser::new(bg01(), v).unwrap();
            prop_assert!(den.extrinsic_var() >= V_FLOOR);
            prop_assert!(den.extrinsic_var() <= V_CEIL);
        }
    }
}

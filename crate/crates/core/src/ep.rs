//! The two-module message-passing loop.
//!
//! Module A applies the LMMSE filter `A^H (sigma^2 I + v A A^H)^{-1}` in SVD
//! coordinates (a diagonal solve, no dense inversion) and emits an extrinsic
//! mean/variance pair. Module B denoises under the prior and feeds its own
//! extrinsic pair back. Iteration starts from a zero mean and unit variance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{MeasurementModel, SpectralDensity};
use crate::error::{CoreError, Result};
use crate::priors::{AwgnDenoiser, PriorSpec, V_FLOOR};

/// Knobs for [`run_ep`]. Damping exists as a hook but defaults to off and is
/// excluded from the acceptance runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpOptions {
    pub v_floor: f64,
    /// Stop when |mse_t - mse_{t-1}| < tol * mse_t (needs a ground truth).
    pub early_stop_tol: Option<f64>,
    /// Convex damping factor in (0, 1]; `None` or 1.0 means undamped.
    pub damping: Option<f64>,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self {
            v_floor: V_FLOOR,
            early_stop_tol: Some(1e-8),
            damping: None,
        }
    }
}

/// One iteration record of the loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpIteration {
    pub t: usize,
    /// Variance of the denoiser-to-LMMSE message entering this iteration.
    pub v_b2a: f64,
    /// Variance of the LMMSE-to-denoiser message produced this iteration.
    pub v_a2b: f64,
    pub gamma: f64,
    /// `N^{-1} ||x - posterior(x_a2b)||^2` when the truth is supplied.
    pub mse_posterior: Option<f64>,
    /// `N^{-1} ||x - x_a2b||^2` when the truth is supplied.
    pub mse_lmmse: Option<f64>,
}

/// Per-iteration records plus the final posterior-mean estimate.
#[derive(Debug, Clone)]
pub struct EpTrajectory {
    pub iterations: Vec<EpIteration>,
    pub estimate: Vec<Complex64>,
    pub early_stopped: bool,
}

/// The decoupling coefficient: `1/gamma = delta * E[lambda / (sigma^2 + v
/// lambda)]` over the spectrum. Always `gamma >= v / delta`.
pub fn gamma_coeff(spectrum: &SpectralDensity, sigma2: f64, v: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(CoreError::InvalidVariance(v));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "sigma2 must be >= 0, got {sigma2}"
        )));
    }
    let mean = spectrum.integrate(|l| {
        let den = sigma2 + v * l;
        if den > 0.0 {
            l / den
        } else {
            0.0
        }
    });
    let inv_gamma = spectrum.delta() * mean;
    if inv_gamma <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "spectrum carries no usable mass (all eigenvalues zero)".into(),
        ));
    }
    Ok(1.0 / inv_gamma)
}

/// One scalar variance round shared by `run_ep` and the instrumented error
/// recursion, so the two paths follow bit-identical schedules.
pub(crate) fn variance_step(
    spectrum: &SpectralDensity,
    prior: &PriorSpec,
    sigma2: f64,
    v_b2a: f64,
    v_floor: f64,
) -> Result<(f64, f64, AwgnDenoiser)> {
    let gamma = gamma_coeff(spectrum, sigma2, v_b2a)?;
    let v_a2b = (gamma - v_b2a).max(v_floor);
    if !v_a2b.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "non-finite LMMSE variance (gamma={gamma}, v={v_b2a})"
        )));
    }
    let den = AwgnDenoiser::new(*prior, v_a2b)?;
    Ok((gamma, v_a2b, den))
}

fn has_nan(xs: &[Complex64]) -> bool {
    xs.iter().any(|z| z.re.is_nan() || z.im.is_nan())
}

/// Module A's extrinsic step: `x_a2b = x_b2a + gamma W^t (y - A x_b2a)` with
/// the filter applied diagonally in SVD coordinates, `v_a2b = gamma - v_b2a`.
/// `gamma` comes from the realized empirical spectrum of the model.
pub fn lmmse_step(
    model: &MeasurementModel,
    y: &[Complex64],
    x_b2a: &[Complex64],
    v_b2a: f64,
) -> Result<(Vec<Complex64>, f64, f64)> {
    if y.len() != model.m() {
        return Err(CoreError::DimensionMismatch {
            what: "measurement vector",
            expected: model.m(),
            got: y.len(),
        });
    }
    if x_b2a.len() != model.n() {
        return Err(CoreError::DimensionMismatch {
            what: "message vector",
            expected: model.n(),
            got: x_b2a.len(),
        });
    }
    if !(v_b2a > 0.0) {
        return Err(CoreError::InvalidVariance(v_b2a));
    }
    let spectrum = model.spectrum();
    let gamma = gamma_coeff(&spectrum, model.sigma2(), v_b2a)?;
    let v_a2b = gamma - v_b2a;

    // Residual in measurement space, then W^t r in SVD coordinates.
    let ax = model.apply(x_b2a)?;
    let residual: Vec<Complex64> = y.iter().zip(&ax).map(|(yi, ai)| yi - ai).collect();
    let rotated = model.u().apply_adjoint(&residual)?;
    let sigma2 = model.sigma2();
    let sv = model.singular_values();
    let mut filtered = vec![Complex64::ZERO; model.n()];
    for i in 0..model.m() {
        let s = sv[i];
        filtered[i] = rotated[i] * (s / (sigma2 + v_b2a * s * s));
    }
    let correction = model.v().apply(&filtered)?;
    let x_a2b: Vec<Complex64> = x_b2a
        .iter()
        .zip(&correction)
        .map(|(xi, ci)| xi + ci * gamma)
        .collect();
    Ok((x_a2b, v_a2b, gamma))
}

/// Runs the full loop for up to `t_max` iterations from `x_b2a = 0`,
/// `v_b2a = 1`. The reported estimate is the posterior mean of the final
/// iteration; per-iteration empirical MSEs are recorded when `x_true` is
/// supplied.
pub fn run_ep(
    model: &MeasurementModel,
    prior: &PriorSpec,
    y: &[Complex64],
    x_true: Option<&[Complex64]>,
    t_max: usize,
    opts: &EpOptions,
) -> Result<EpTrajectory> {
    if t_max == 0 {
        return Err(CoreError::InvalidParameter(
            "iteration count must be >= 1".into(),
        ));
    }
    if let Some(x) = x_true {
        if x.len() != model.n() {
            return Err(CoreError::DimensionMismatch {
                what: "ground truth vector",
                expected: model.n(),
                got: x.len(),
            });
        }
    }
    let n = model.n();
    let spectrum = model.spectrum();
    let mut x_b2a = vec![Complex64::ZERO; n];
    let mut v_b2a = 1.0f64;
    let mut iterations = Vec::with_capacity(t_max);
    let mut estimate = vec![Complex64::ZERO; n];
    let mut prev_mse: Option<f64> = None;
    let mut early_stopped = false;

    for t in 0..t_max {
        let (gamma, v_a2b, den) =
            variance_step(&spectrum, prior, model.sigma2(), v_b2a, opts.v_floor)?;
        if v_a2b <= 0.0 {
            return Err(CoreError::NumericalFailure {
                iteration: t,
                detail: format!("LMMSE variance {v_a2b} not positive"),
            });
        }
        let (x_a2b, _, _) = lmmse_step(model, y, &x_b2a, v_b2a)?;
        if has_nan(&x_a2b) {
            return Err(CoreError::NumericalFailure {
                iteration: t,
                detail: "NaN in LMMSE message".into(),
            });
        }

        estimate = x_a2b.iter().map(|&z| den.posterior(z)).collect();
        let mse_posterior = x_true.map(|x| {
            x.iter()
                .zip(&estimate)
                .map(|(xi, ei)| (xi - ei).norm_sqr())
                .sum::<f64>()
                / n as f64
        });
        let mse_lmmse = x_true.map(|x| {
            x.iter()
                .zip(&x_a2b)
                .map(|(xi, ai)| (xi - ai).norm_sqr())
                .sum::<f64>()
                / n as f64
        });
        iterations.push(EpIteration {
            t,
            v_b2a,
            v_a2b,
            gamma,
            mse_posterior,
            mse_lmmse,
        });

        if let (Some(tol), Some(now), Some(prev)) = (opts.early_stop_tol, mse_posterior, prev_mse)
        {
            if (now - prev).abs() < tol * now {
                early_stopped = true;
                break;
            }
        }
        prev_mse = mse_posterior;

        if t + 1 < t_max {
            let mut next_mean: Vec<Complex64> =
                x_a2b.iter().map(|&z| den.extrinsic(z)).collect();
            let mut next_var = den.extrinsic_var().max(opts.v_floor);
            if let Some(beta) = opts.damping {
                if beta < 1.0 {
                    for (nm, old) in next_mean.iter_mut().zip(&x_b2a) {
                        *nm = *nm * beta + old * (1.0 - beta);
                    }
                    next_var = beta * next_var + (1.0 - beta) * v_b2a;
                }
            }
            if has_nan(&next_mean) || !next_var.is_finite() {
                return Err(CoreError::NumericalFailure {
                    iteration: t,
                    detail: "NaN in denoiser message".into(),
                });
            }
            x_b2a = next_mean;
            v_b2a = next_var;
        }
    }

    Ok(EpTrajectory {
        iterations,
        estimate,
        early_stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{build_measurement, Ensemble};
    use crate::rng::{complex_gaussian, seeded_rng};
    use faer::linalg::solvers::{PartialPivLu, Solve};
    use faer::Scale;

    fn bg01() -> PriorSpec {
        PriorSpec::new(0.1, 10.0).unwrap()
    }

    fn gaussian() -> PriorSpec {
        PriorSpec::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn gamma_point_mass_example() {
        let spec = SpectralDensity::point_mass(2.0, 0.5).unwrap();
        let gamma = gamma_coeff(&spec, 0.1, 1.0).unwrap();
        assert!((gamma - 2.1).abs() < 1e-12);
    }

    #[test]
    fn gamma_grows_with_noise() {
        let spec = SpectralDensity::point_mass(2.0, 0.5).unwrap();
        let g_small = gamma_coeff(&spec, 0.1, 1.0).unwrap();
        let g_large = gamma_coeff(&spec, 1e6, 1.0).unwrap();
        assert!(g_large > 1e5);
        assert!(g_large > g_small);
    }

    #[test]
    fn gamma_lower_bound() {
        let spec = SpectralDensity::point_mass(2.0, 0.5).unwrap();
        for &v in &[0.01, 0.5, 1.0, 10.0] {
            let gamma = gamma_coeff(&spec, 0.3, v).unwrap();
            assert!(gamma >= v / 0.5 - 1e-12, "v={v}: gamma={gamma}");
        }
    }

    #[test]
    fn gamma_matches_dense_trace_oracle() {
        // 1/gamma on the realized spectrum must equal N^{-1} Tr(W A) with
        // W = A^H (sigma^2 I + v A A^H)^{-1} computed densely.
        let model = build_measurement(&Ensemble::IidGaussian, 48, 96, 0.7, 17).unwrap();
        let sigma2 = model.sigma2();
        let v = 0.8;
        let gamma = gamma_coeff(&model.spectrum(), sigma2, v).unwrap();

        let a = model.to_dense();
        let m = model.m();
        let gram = &a * a.adjoint();
        let mut shifted = Scale(Complex64::new(v, 0.0)) * &gram;
        for i in 0..m {
            shifted[(i, i)] += Complex64::new(sigma2, 0.0);
        }
        // Tr(W A) = Tr((sigma^2 I + v A A^H)^{-1} A A^H)
        let lu = PartialPivLu::new(shifted.as_ref());
        let gram2 = &a * a.adjoint();
        let solved = lu.solve(&gram2);
        let trace: Complex64 = (0..m).map(|i| solved[(i, i)]).sum();
        let inv_gamma_direct = trace.re / model.n() as f64;
        assert!(
            (1.0 / gamma - inv_gamma_direct).abs() < 1e-10,
            "{} vs {}",
            1.0 / gamma,
            inv_gamma_direct
        );
    }

    #[test]
    fn lmmse_recovers_invertible_system() {
        let n = 64;
        let model = build_measurement(
            &Ensemble::CustomSpectrum { sv: vec![1.0; n] },
            n,
            n,
            1e-12,
            23,
        )
        .unwrap();
        let mut rng = seeded_rng(5);
        let x: Vec<Complex64> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let y = model.apply(&x).unwrap();
        let x_b2a = vec![Complex64::ZERO; n];
        let (x_a2b, v_a2b, _) = lmmse_step(&model, &y, &x_b2a, 1.0).unwrap();
        for (xi, ai) in x.iter().zip(&x_a2b) {
            assert!((xi - ai).norm() < 1e-5, "{xi} vs {ai}");
        }
        assert!(v_a2b > 0.0 && v_a2b < 1e-10);
    }

    #[test]
    fn lmmse_zero_residual_is_identity() {
        let model = build_measurement(&Ensemble::RowOrthogonal, 16, 32, 0.1, 3).unwrap();
        let mut rng = seeded_rng(8);
        let x_b2a: Vec<Complex64> = (0..32).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let y = model.apply(&x_b2a).unwrap();
        let (x_a2b, _, _) = lmmse_step(&model, &y, &x_b2a, 1.0).unwrap();
        for (a, b) in x_b2a.iter().zip(&x_a2b) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn lmmse_row_orthogonal_variance() {
        let model = build_measurement(&Ensemble::RowOrthogonal, 64, 128, 0.1, 4).unwrap();
        let y = vec![Complex64::ZERO; 64];
        let x_b2a = vec![Complex64::ZERO; 128];
        let (_, v_a2b, gamma) = lmmse_step(&model, &y, &x_b2a, 1.0).unwrap();
        assert!((gamma - 2.1).abs() < 1e-12);
        assert!((v_a2b - 1.1).abs() < 1e-12);
    }

    #[test]
    fn gaussian_prior_keeps_unit_variance() {
        let model = build_measurement(&Ensemble::RowOrthogonal, 64, 128, 0.1, 6).unwrap();
        let prior = gaussian();
        let x = crate::priors::sample_signal(&prior, 128, 2);
        let mut rng = seeded_rng(55);
        let y: Vec<Complex64> = model
            .apply(&x)
            .unwrap()
            .iter()
            .map(|&z| z + complex_gaussian(&mut rng, 0.1))
            .collect();
        let opts = EpOptions {
            early_stop_tol: None,
            ..Default::default()
        };
        let traj = run_ep(&model, &prior, &y, Some(&x), 5, &opts).unwrap();
        assert_eq!(traj.iterations.len(), 5);
        for rec in &traj.iterations {
            assert!(
                (rec.v_b2a - 1.0).abs() < 1e-9,
                "t={}: v_b2a={}",
                rec.t,
                rec.v_b2a
            );
        }
    }

    #[test]
    fn huge_noise_gives_prior_level_mse() {
        // the finite-sample fluctuation of mean |x|^2 dominates here, so the
        // band is sized for the sparse prior's heavy fourth moment
        let model = build_measurement(&Ensemble::RowOrthogonal, 512, 1024, 1e6, 9).unwrap();
        let prior = bg01();
        let x = crate::priors::sample_signal(&prior, 1024, 12);
        let mut rng = seeded_rng(13);
        let y: Vec<Complex64> = model
            .apply(&x)
            .unwrap()
            .iter()
            .map(|&z| z + complex_gaussian(&mut rng, 1e6))
            .collect();
        let opts = EpOptions {
            early_stop_tol: None,
            ..Default::default()
        };
        let traj = run_ep(&model, &prior, &y, Some(&x), 3, &opts).unwrap();
        for rec in &traj.iterations {
            let mse = rec.mse_posterior.unwrap();
            assert!((mse - 1.0).abs() < 0.35, "t={}: mse={mse}", rec.t);
        }
    }

    #[test]
    fn trajectories_are_bit_deterministic() {
        let model = build_measurement(&Ensemble::IidGaussian, 64, 128, 0.05, 31).unwrap();
        let prior = bg01();
        let x = crate::priors::sample_signal(&prior, 128, 77);
        let mut rng = seeded_rng(78);
        let y: Vec<Complex64> = model
            .apply(&x)
            .unwrap()
            .iter()
            .map(|&z| z + complex_gaussian(&mut rng, 0.05))
            .collect();
        let opts = EpOptions::default();
        let a = run_ep(&model, &prior, &y, Some(&x), 8, &opts).unwrap();
        let b = run_ep(&model, &prior, &y, Some(&x), 8, &opts).unwrap();
        assert_eq!(a.iterations.len(), b.iterations.len());
        for (ra, rb) in a.iterations.iter().zip(&b.iterations) {
            assert_eq!(ra.v_a2b.to_bits(), rb.v_a2b.to_bits());
            assert_eq!(ra.mse_posterior.unwrap().to_bits(), rb.mse_posterior.unwrap().to_bits());
        }
        for (za, zb) in a.estimate.iter().zip(&b.estimate) {
            assert_eq!(za.re.to_bits(), zb.re.to_bits());
            assert_eq!(za.im.to_bits(), zb.im.to_bits());
        }
    }

    #[test]
    fn variance_positivity_margin() {
        // v_a2b = gamma - v >= v (1/delta - 1) > 0 for delta < 1.
        let model = build_measurement(&Ensemble::IidGaussian, 32, 128, 0.2, 41).unwrap();
        let spectrum = model.spectrum();
        for &v in &[0.01, 0.3, 1.0, 4.0] {
            let gamma = gamma_coeff(&spectrum, model.sigma2(), v).unwrap();
            let bound = v * (1.0 / model.delta() - 1.0);
            assert!(gamma - v >= bound - 1e-12, "v={v}");
            assert!(gamma - v > 0.0);
        }
    }

    #[test]
    fn rejects_zero_iterations_and_bad_dims() {
        let model = build_measurement(&Ensemble::RowOrthogonal, 8, 16, 0.1, 2).unwrap();
        let prior = bg01();
        let y = vec![Complex64::ZERO; 8];
        assert!(run_ep(&model, &prior, &y, None, 0, &EpOptions::default()).is_err());
        let y_bad = vec![Complex64::ZERO; 7];
        assert!(matches!(
            run_ep(&model, &prior, &y_bad, None, 2, &EpOptions::default()),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }
}

//! Scalar state evolution and cross-iteration error covariance prediction.
//!
//! The per-iteration message variances of the EP loop follow a two-map
//! scalar recursion in the large-system limit; its fixed points determine
//! whether the iteration reaches the optimal error floor. Beyond the
//! diagonal, the limiting cross-iteration covariances of the denoiser-side
//! errors have no closed form; they are computed by a scalar Monte Carlo
//! recursion that couples the signal with jointly Gaussian copies of the
//! linear-module errors.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::SpectralDensity;
use crate::ep::gamma_coeff;
use crate::error::{CoreError, Result};
use crate::priors::{mmse, AwgnDenoiser, PriorSpec, V_FLOOR};
use crate::rng::{derive_seed, fill_complex_gaussian, seeded_rng};

/// Scalar SE trajectory: variances of the two message directions, the
/// decoupling coefficients, and the predicted per-iteration MSE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeTrajectory {
    /// `mse_b2a[t]`, length T+1, starting at 1.
    pub mse_b2a: Vec<f64>,
    /// `mse_a2b[t]`, length T.
    pub mse_a2b: Vec<f64>,
    /// `MMSE(mse_a2b[t])`, length T.
    pub predicted_mse: Vec<f64>,
    /// `gamma(mse_b2a[t])`, length T.
    pub gamma: Vec<f64>,
}

/// Variance map of the linear module: `gamma(v) - v`.
pub fn phi_a_to_b(spectrum: &SpectralDensity, sigma2: f64, v: f64) -> Result<f64> {
    Ok(gamma_coeff(spectrum, sigma2, v)? - v)
}

/// Variance map of the denoising module: `(1/MMSE(v) - 1/v)^{-1}`, clamped
/// as in the denoiser.
pub fn phi_b_to_a(prior: &PriorSpec, v: f64) -> Result<f64> {
    Ok(AwgnDenoiser::new(*prior, v)?.extrinsic_var())
}

/// Iterates the two scalar maps from `mse_b2a = 1` for `t_max` steps.
pub fn se_recursion(
    prior: &PriorSpec,
    spectrum: &SpectralDensity,
    sigma2: f64,
    t_max: usize,
) -> Result<SeTrajectory> {
    if t_max == 0 {
        return Err(CoreError::InvalidParameter(
            "iteration count must be >= 1".into(),
        ));
    }
    let mut mse_b2a = Vec::with_capacity(t_max + 1);
    let mut mse_a2b = Vec::with_capacity(t_max);
    let mut predicted = Vec::with_capacity(t_max);
    let mut gammas = Vec::with_capacity(t_max);
    mse_b2a.push(1.0);
    for t in 0..t_max {
        let v = mse_b2a[t];
        let gamma = gamma_coeff(spectrum, sigma2, v)?;
        let v_a2b = (gamma - v).max(V_FLOOR);
        gammas.push(gamma);
        mse_a2b.push(v_a2b);
        predicted.push(mmse(prior, v_a2b)?);
        mse_b2a.push(phi_b_to_a(prior, v_a2b)?);
    }
    Ok(SeTrajectory {
        mse_b2a,
        mse_a2b,
        predicted_mse: predicted,
        gamma: gammas,
    })
}

/// Log-spaced search grid for the fixed-point scan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedPointGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub points: usize,
}

impl Default for FixedPointGrid {
    fn default() -> Self {
        Self {
            v_min: 1e-8,
            v_max: 10.0,
            points: 2000,
        }
    }
}

/// A fixed point of the composed scalar map.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedPoint {
    pub v_b2a: f64,
    pub v_a2b: f64,
    pub mse: f64,
}

/// Results of the fixed-point scan plus the attractor of the plain
/// recursion started from `v = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub fixed_points: Vec<FixedPoint>,
    pub unique: bool,
    pub attractor: FixedPoint,
    pub iterations_from_unit: usize,
    /// Set when no sign change was found on the grid and the attractor was
    /// reported as the single fixed point.
    pub grid_exhausted: bool,
}

fn composed_map(prior: &PriorSpec, spectrum: &SpectralDensity, sigma2: f64, v: f64) -> Result<f64> {
    let v_a2b = phi_a_to_b(spectrum, sigma2, v)?.max(V_FLOOR);
    phi_b_to_a(prior, v_a2b)
}

fn make_fixed_point(
    prior: &PriorSpec,
    spectrum: &SpectralDensity,
    sigma2: f64,
    v: f64,
) -> Result<FixedPoint> {
    let v_a2b = phi_a_to_b(spectrum, sigma2, v)?.max(V_FLOOR);
    Ok(FixedPoint {
        v_b2a: v,
        v_a2b,
        mse: mmse(prior, v_a2b)?,
    })
}

/// Scans `F(v) = phi_b2a(phi_a2b(v)) - v` for sign changes on a log grid and
/// refines each bracket by bisection. With no sign change on the grid, the
/// limit of the recursion from `v = 1` is reported as the unique attractor.
pub fn se_fixed_points(
    prior: &PriorSpec,
    spectrum: &SpectralDensity,
    sigma2: f64,
    grid: &FixedPointGrid,
) -> Result<FixedPointReport> {
    if !(grid.v_min > 0.0 && grid.v_max > grid.v_min) || grid.points < 2 {
        return Err(CoreError::InvalidParameter(format!(
            "invalid fixed-point grid {grid:?}"
        )));
    }
    let f = |v: f64| -> Result<f64> { Ok(composed_map(prior, spectrum, sigma2, v)? - v) };

    let log_min = grid.v_min.ln();
    let log_max = grid.v_max.ln();
    let steps = grid.points - 1;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_v = grid.v_min;
    let mut prev_f = f(prev_v)?;
    for k in 1..grid.points {
        let v = (log_min + (log_max - log_min) * k as f64 / steps as f64).exp();
        let fv = f(v)?;
        if prev_f == 0.0 {
            roots.push(prev_v);
        } else if prev_f * fv < 0.0 {
            // geometric bisection to relative width 1e-13
            let (mut lo, mut hi, mut flo) = (prev_v, v, prev_f);
            while hi / lo - 1.0 > 1e-13 {
                let mid = (lo * hi).sqrt();
                let fm = f(mid)?;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push((lo * hi).sqrt());
        }
        prev_v = v;
        prev_f = fv;
    }
    if prev_f == 0.0 {
        roots.push(prev_v);
    }
    // drop duplicates and points failing the residual contract
    roots.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-8);
    let mut fixed_points = Vec::new();
    for v in roots {
        let resid = (composed_map(prior, spectrum, sigma2, v)? - v).abs();
        if resid < 1e-10 {
            fixed_points.push(make_fixed_point(prior, spectrum, sigma2, v)?);
        } else {
            log::warn!("discarding fixed-point candidate v={v} with residual {resid}");
        }
    }

    // attractor of the recursion from v = 1
    let mut v = 1.0f64;
    let mut iterations = 0usize;
    for _ in 0..100_000 {
        let next = composed_map(prior, spectrum, sigma2, v)?;
        iterations += 1;
        if (next - v).abs() <= 1e-12 * next.max(1e-300) {
            v = next;
            break;
        }
        v = next;
    }
    let attractor = make_fixed_point(prior, spectrum, sigma2, v)?;

    let grid_exhausted = fixed_points.is_empty();
    if grid_exhausted {
        fixed_points.push(attractor);
    }
    let unique = fixed_points.len() == 1;
    Ok(FixedPointReport {
        fixed_points,
        unique,
        attractor,
        iterations_from_unit: iterations,
        grid_exhausted,
    })
}

/// Cross-iteration coefficient
/// `gamma_{t,t'} = gamma_t gamma_{t'} * delta * E[lambda (sigma^2 + zeta
/// lambda) / ((sigma^2 + v_t lambda)(sigma^2 + v_{t'} lambda))]`.
pub fn cross_gamma(
    spectrum: &SpectralDensity,
    sigma2: f64,
    v_t: f64,
    v_tp: f64,
    zeta: Complex64,
) -> Result<Complex64> {
    let gamma_t = gamma_coeff(spectrum, sigma2, v_t)?;
    let gamma_tp = gamma_coeff(spectrum, sigma2, v_tp)?;
    let guard = |den: f64, num: f64| if den > 0.0 { num / den } else { 0.0 };
    let i_noise = spectrum.integrate(|l| guard((sigma2 + v_t * l) * (sigma2 + v_tp * l), l));
    let i_signal = spectrum.integrate(|l| guard((sigma2 + v_t * l) * (sigma2 + v_tp * l), l * l));
    let scale = gamma_t * gamma_tp * spectrum.delta();
    Ok((zeta * i_signal + sigma2 * i_noise) * scale)
}

/// Monte Carlo settings for the covariance predictor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 1,
        }
    }
}

/// Predicted cross-iteration covariances.
///
/// `zeta[tau][tau_p]` estimates the limiting `N^{-1} q_{tau_p}^H q_tau`
/// (denoiser-side errors), `gamma2` the corresponding spectral coefficients,
/// `m_cov = gamma2 - zeta` the limiting `N^{-1} m_{tau_p}^H m_tau`
/// (linear-module errors), and `nu` its diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceTables {
    pub t: usize,
    /// (T+1) x (T+1), Hermitian, MC-estimated.
    pub zeta: Vec<Vec<Complex64>>,
    /// Standard errors of the `zeta` estimates.
    pub zeta_se: Vec<Vec<f64>>,
    /// T x T cross coefficients; diagonal equals `gamma_t`.
    pub gamma2: Vec<Vec<Complex64>>,
    /// T x T predicted linear-module error covariances.
    pub m_cov: Vec<Vec<Complex64>>,
    /// Diagonal of `m_cov` (from the SE recursion).
    pub nu: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

const CHUNKS: usize = 64;
const CHOL_JITTER: f64 = 1e-12;
const TAG_SIGNAL: u64 = 0xA11C_E5ED;

/// Accumulates `sum conj(a_s) b_s` and `sum |conj(a_s) b_s|^2` chunk by
/// chunk with a fixed reduction order, so results do not depend on the
/// worker count.
fn chunked_cross_sum(a: &[Complex64], b: &[Complex64], chunk: usize) -> (Complex64, f64) {
    let partials: Vec<(Complex64, f64)> = a
        .par_chunks(chunk)
        .zip(b.par_chunks(chunk))
        .map(|(xs, ys)| {
            let mut acc = Complex64::ZERO;
            let mut acc2 = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                let w = x.conj() * y;
                acc += w;
                acc2 += w.norm_sqr();
            }
            (acc, acc2)
        })
        .collect();
    let mut total = Complex64::ZERO;
    let mut total2 = 0.0;
    for (s, s2) in partials {
        total += s;
        total2 += s2;
    }
    (total, total2)
}

/// Builds the full cross-iteration covariance tables by the coupled scalar
/// recursion: a scalar signal plus jointly Gaussian linear-module errors
/// whose covariance is extended one iteration at a time (diagonal from the
/// SE recursion, off-diagonals from [`cross_gamma`] applied to the running
/// `zeta` estimates). Deterministic given `mc.seed`.
pub fn predict_error_covariance(
    prior: &PriorSpec,
    spectrum: &SpectralDensity,
    sigma2: f64,
    t_max: usize,
    mc: &McOptions,
) -> Result<CovarianceTables> {
    if t_max == 0 {
        return Err(CoreError::InvalidParameter(
            "iteration count must be >= 1".into(),
        ));
    }
    if mc.samples < 100_000 {
        return Err(CoreError::InvalidParameter(format!(
            "MC sample count must be >= 1e5, got {}",
            mc.samples
        )));
    }
    let se = se_recursion(prior, spectrum, sigma2, t_max)?;
    let samples = mc.samples;
    let chunk = samples.div_ceil(CHUNKS);

    // q_0 = x ~ prior, drawn per chunk from derived seeds.
    let mut x = vec![Complex64::ZERO; samples];
    x.par_chunks_mut(chunk).enumerate().for_each(|(c, out)| {
        let mut rng = seeded_rng(derive_seed(mc.seed, TAG_SIGNAL, c as u64));
        for z in out.iter_mut() {
            *z = if rng.random::<f64>() < prior.rho_s() {
                crate::rng::complex_gaussian(&mut rng, prior.active_var())
            } else {
                Complex64::ZERO
            };
        }
    });

    let dim = t_max + 1;
    let mut zeta = vec![vec![Complex64::ZERO; dim]; dim];
    let mut zeta_se = vec![vec![0.0f64; dim]; dim];
    let mut gamma2 = vec![vec![Complex64::ZERO; t_max]; t_max];
    let mut m_cov = vec![vec![Complex64::ZERO; t_max]; t_max];
    let mut chol: Vec<Vec<Complex64>> = Vec::with_capacity(t_max);

    let mut q: Vec<Vec<Complex64>> = vec![x.clone()];
    let mut gauss: Vec<Vec<Complex64>> = Vec::with_capacity(t_max);

    let fill_zeta = |zeta: &mut Vec<Vec<Complex64>>,
                     zeta_se: &mut Vec<Vec<f64>>,
                     q: &[Vec<Complex64>],
                     tau: usize| {
        for tau_p in 0..=tau {
            let (sum, sum2) = chunked_cross_sum(&q[tau_p], &q[tau], chunk);
            let mean = sum / samples as f64;
            let var = (sum2 / samples as f64 - mean.norm_sqr()).max(0.0);
            let se_est = (var / samples as f64).sqrt();
            zeta[tau][tau_p] = mean;
            zeta[tau_p][tau] = mean.conj();
            zeta_se[tau][tau_p] = se_est;
            zeta_se[tau_p][tau] = se_est;
        }
    };
    fill_zeta(&mut zeta, &mut zeta_se, &q, 0);

    for t in 0..t_max {
        let v_t = se.mse_b2a[t];
        // covariance row t of the linear-module errors
        m_cov[t][t] = Complex64::new(se.mse_a2b[t], 0.0);
        gamma2[t][t] = cross_gamma(spectrum, sigma2, v_t, v_t, Complex64::new(v_t, 0.0))?;
        for t_p in 0..t {
            let g = cross_gamma(spectrum, sigma2, v_t, se.mse_b2a[t_p], zeta[t][t_p])?;
            gamma2[t][t_p] = g;
            gamma2[t_p][t] = g.conj();
            m_cov[t][t_p] = g - zeta[t][t_p];
            m_cov[t_p][t] = m_cov[t][t_p].conj();
        }

        // extend the Cholesky factor by one row (with diagonal jitter)
        let mut row = vec![Complex64::ZERO; t + 1];
        for j in 0..t {
            let mut s = m_cov[t][j];
            for k in 0..j {
                s -= row[k] * chol[j][k].conj();
            }
            row[j] = s / chol[j][j];
        }
        let mut d = m_cov[t][t].re + CHOL_JITTER;
        for k in 0..t {
            d -= row[k].norm_sqr();
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(CoreError::CovarianceConstruction(format!(
                "m_cov is not positive semidefinite at iteration {t} (pivot {d})"
            )));
        }
        row[t] = Complex64::new(d.sqrt(), 0.0);
        chol.push(row);

        // fresh standard Gaussians for this iteration, then the coupled
        // update q_{t+1} = x - eta_t(x - h_t)
        let mut g_t = vec![Complex64::ZERO; samples];
        g_t.par_chunks_mut(chunk).enumerate().for_each(|(c, out)| {
            let mut rng = seeded_rng(derive_seed(mc.seed, t as u64 + 1, c as u64));
            fill_complex_gaussian(&mut rng, 1.0, out);
        });
        gauss.push(g_t);

        let den = AwgnDenoiser::new(*prior, se.mse_a2b[t])?;
        let l_row = &chol[t];
        let gauss_ref = &gauss;
        let x_ref = &x;
        let mut q_next = vec![Complex64::ZERO; samples];
        q_next
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, out)| {
                let start = c * chunk;
                for (i, slot) in out.iter_mut().enumerate() {
                    let s = start + i;
                    let mut h = Complex64::ZERO;
                    for (j, lj) in l_row.iter().enumerate() {
                        h += lj * gauss_ref[j][s];
                    }
                    let xs = x_ref[s];
                    *slot = xs - den.extrinsic(xs - h);
                }
            });
        q.push(q_next);
        fill_zeta(&mut zeta, &mut zeta_se, &q, t + 1);
    }

    Ok(CovarianceTables {
        t: t_max,
        zeta,
        zeta_se,
        gamma2,
        m_cov,
        nu: se.mse_a2b.clone(),
        samples,
        seed: mc.seed,
    })
}

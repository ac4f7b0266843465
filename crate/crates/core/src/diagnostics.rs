//! Instrumented error recursions and finite-size identity checks.
//!
//! The EP loop has an exact change of variables into SVD coordinates where
//! the denoiser-side error `q_t`, its rotation `b_t = V^H q_t`, the
//! linear-module error `m_t`, and its rotation `h_t = V m_t` evolve by a
//! closed recursion started from `q_0 = x`. Running that recursion directly
//! and recording all Gram data lets the asymptotic orthogonality and
//! covariance identities be checked empirically at finite N.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{cdot, MeasurementModel};
use crate::ep::variance_step;
use crate::error::{CoreError, Result};
use crate::priors::{AwgnDenoiser, PriorSpec, V_FLOOR};
use crate::rng::{complex_gaussian, derive_seed, seeded_rng};
use crate::state_evolution::CovarianceTables;

/// Per-iteration Gram data of the error recursion.
///
/// Entry `[tau][tau_p]` of a Gram table holds `N^{-1} u_{tau_p}^H u_tau`.
/// `q` tables are (T+1)x(T+1) (the recursion starts from `q_0 = x`); the
/// rest are TxT or Tx(T+1) as indicated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub n: usize,
    pub t: usize,
    /// (T+1)x(T+1) denoiser-side error Gram.
    pub q_gram: Vec<Vec<Complex64>>,
    /// TxT spectral-basis error Gram (equals the q Gram by unitarity).
    pub b_gram: Vec<Vec<Complex64>>,
    /// TxT linear-module error Gram.
    pub m_gram: Vec<Vec<Complex64>>,
    /// TxT rotated linear-module error Gram (equals the m Gram).
    pub h_gram: Vec<Vec<Complex64>>,
    /// Tx(T+1): `N^{-1} h_tau^H q_tau_pp`.
    pub hq: Vec<Vec<Complex64>>,
    /// TxT: `N^{-1} b_{tau_p}^H m_tau`.
    pub bm: Vec<Vec<Complex64>>,
    /// `N^{-1} ||q_tau^perp||^2`: residual energy of `q_tau` against the
    /// span of the earlier q's, by pivoted orthogonalization.
    pub mu: Vec<f64>,
    /// Empirical posterior MSE per iteration.
    pub posterior_mse: Vec<f64>,
    pub v_b2a: Vec<f64>,
    pub v_a2b: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Caller-attached seed metadata.
    pub seed: Option<u64>,
}

fn gram_table(vectors: &[Vec<Complex64>], n: usize) -> Vec<Vec<Complex64>> {
    let k = vectors.len();
    let mut table = vec![vec![Complex64::ZERO; k]; k];
    for tau in 0..k {
        for tau_p in 0..=tau {
            let val = cdot(&vectors[tau_p], &vectors[tau]) / n as f64;
            table[tau][tau_p] = val;
            table[tau_p][tau] = val.conj();
        }
    }
    table
}

/// Residual energies by modified Gram-Schmidt with norm pivoting.
fn projection_residuals(vectors: &[Vec<Complex64>], n: usize) -> Vec<f64> {
    let mut mu = Vec::with_capacity(vectors.len());
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    for (tau, q) in vectors.iter().enumerate() {
        let mut resid = q.clone();
        // two MGS passes for numerical insurance-free orthogonality
        for _ in 0..2 {
            for e in &basis {
                let coef = cdot(e, &resid);
                for (r, b) in resid.iter_mut().zip(e) {
                    *r -= b * coef;
                }
            }
        }
        let energy: f64 = resid.iter().map(|z| z.norm_sqr()).sum();
        mu.push(energy / n as f64);
        if tau + 1 < vectors.len() {
            // extend the basis with the best-conditioned remaining direction:
            // here simply the normalized residual (norm pivot over a single
            // candidate), skipping near-null vectors
            if energy > 1e-24 * n as f64 {
                let inv = 1.0 / energy.sqrt();
                for r in resid.iter_mut() {
                    *r *= inv;
                }
                basis.push(resid);
            }
        }
    }
    mu
}

/// Executes the error recursion directly in SVD coordinates and records all
/// Gram data. Equivalent to `run_ep` on `y = A x + w` by the change of
/// variables `h_t = x - x_a2b^t`, `q_t = x - x_b2a^t`.
pub fn instrumented_run(
    model: &MeasurementModel,
    prior: &PriorSpec,
    x_true: &[Complex64],
    w_noise: &[Complex64],
    t_max: usize,
) -> Result<ErrorTrace> {
    if t_max == 0 {
        return Err(CoreError::InvalidParameter(
            "iteration count must be >= 1".into(),
        ));
    }
    let n = model.n();
    let m = model.m();
    if x_true.len() != n {
        return Err(CoreError::DimensionMismatch {
            what: "signal vector",
            expected: n,
            got: x_true.len(),
        });
    }
    if w_noise.len() != m {
        return Err(CoreError::DimensionMismatch {
            what: "noise vector",
            expected: m,
            got: w_noise.len(),
        });
    }
    let spectrum = model.spectrum();
    let sigma2 = model.sigma2();
    let sv = model.singular_values();
    let w_tilde = model.u().apply_adjoint(w_noise)?;

    let mut q_list: Vec<Vec<Complex64>> = vec![x_true.to_vec()];
    let mut b_list: Vec<Vec<Complex64>> = Vec::with_capacity(t_max);
    let mut m_list: Vec<Vec<Complex64>> = Vec::with_capacity(t_max);
    let mut h_list: Vec<Vec<Complex64>> = Vec::with_capacity(t_max);
    let mut v_b2a_list = Vec::with_capacity(t_max);
    let mut v_a2b_list = Vec::with_capacity(t_max);
    let mut gamma_list = Vec::with_capacity(t_max);
    let mut posterior_mse = Vec::with_capacity(t_max);

    let mut v_b2a = 1.0f64;
    for t in 0..t_max {
        let (gamma, v_a2b, den) = variance_step(&spectrum, prior, sigma2, v_b2a, V_FLOOR)?;
        let q_t = &q_list[t];
        let b_t = model.v().apply_adjoint(q_t)?;
        let mut m_t = b_t.clone();
        for i in 0..m {
            let s = sv[i];
            let observed = b_t[i] * s + w_tilde[i];
            m_t[i] -= observed * (gamma * s / (sigma2 + v_b2a * s * s));
        }
        let h_t = model.v().apply(&m_t)?;
        if h_t.iter().any(|z| z.re.is_nan() || z.im.is_nan()) {
            return Err(CoreError::NumericalFailure {
                iteration: t,
                detail: "NaN in error recursion".into(),
            });
        }

        let mut mse_acc = 0.0;
        let mut q_next = vec![Complex64::ZERO; n];
        for i in 0..n {
            let r = x_true[i] - h_t[i];
            mse_acc += (x_true[i] - den.posterior(r)).norm_sqr();
            q_next[i] = x_true[i] - den.extrinsic(r);
        }
        posterior_mse.push(mse_acc / n as f64);

        v_b2a_list.push(v_b2a);
        v_a2b_list.push(v_a2b);
        gamma_list.push(gamma);
        b_list.push(b_t);
        m_list.push(m_t);
        h_list.push(h_t);
        q_list.push(q_next);
        v_b2a = den.extrinsic_var().max(V_FLOOR);
    }

    let q_gram = gram_table(&q_list, n);
    let b_gram = gram_table(&b_list, n);
    let m_gram = gram_table(&m_list, n);
    let h_gram = gram_table(&h_list, n);
    let mut hq = vec![vec![Complex64::ZERO; t_max + 1]; t_max];
    let mut bm = vec![vec![Complex64::ZERO; t_max]; t_max];
    for tau in 0..t_max {
        for tau_pp in 0..=t_max {
            hq[tau][tau_pp] = cdot(&h_list[tau], &q_list[tau_pp]) / n as f64;
        }
        for tau_p in 0..t_max {
            bm[tau][tau_p] = cdot(&b_list[tau_p], &m_list[tau]) / n as f64;
        }
    }
    let mu = projection_residuals(&q_list, n);

    // The identities assume the normalized q-Gram stays well conditioned;
    // warn when the realized run is close to rank deficient.
    let dim = q_gram.len();
    let gram = faer::Mat::<Complex64>::from_fn(dim, dim, |i, j| q_gram[i][j]);
    if let Ok(evd) = gram.self_adjoint_eigen(faer::Side::Lower) {
        let min_eig = (0..dim).map(|i| evd.S()[i].re).fold(f64::INFINITY, f64::min);
        if min_eig < 1e-8 {
            log::warn!("q-error Gram matrix is near rank-deficient (min eigenvalue {min_eig})");
        }
    }

    Ok(ErrorTrace {
        n,
        t: t_max,
        q_gram,
        b_gram,
        m_gram,
        h_gram,
        hq,
        bm,
        mu,
        posterior_mse,
        v_b2a: v_b2a_list,
        v_a2b: v_a2b_list,
        gamma: gamma_list,
        seed: None,
    })
}

/// Identity families checked by [`orthogonality_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityKind {
    /// `N^{-1} h_tau^H q_tau_pp -> 0`.
    Hq,
    /// `N^{-1} b_{tau_p}^H m_tau -> 0`.
    Bm,
    /// `N^{-1} m_{tau_p}^H m_tau -> gamma_{tau,tau_p} - zeta_{tau,tau_p}`.
    Mmqq,
    /// `N^{-1} h^H h` agrees with `N^{-1} m^H m`.
    Hhmm,
    /// `N^{-1} q_{tau_p}^H q_tau -> zeta_{tau,tau_p}`.
    Qq,
}

impl IdentityKind {
    pub fn name(&self) -> &'static str {
        match self {
            IdentityKind::Hq => "hq",
            IdentityKind::Bm => "bm",
            IdentityKind::Mmqq => "mmqq",
            IdentityKind::Hhmm => "hhmm",
            IdentityKind::Qq => "qq",
        }
    }
}

/// One measured-vs-predicted row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub identity: IdentityKind,
    pub tau: usize,
    pub tau_p: usize,
    pub measured: Complex64,
    pub predicted: Complex64,
    pub tol: f64,
    pub pass: bool,
}

/// All identity rows for one trace, with the tolerance policy attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n: usize,
    pub tol_scale: f64,
    /// The base band `tol_scale * N^{-1/2}` the rows were checked against.
    pub base_tol: f64,
    pub checks: Vec<IdentityCheck>,
    pub all_pass: bool,
}

impl IdentityReport {
    /// True when every row of the given family passed.
    pub fn family_pass(&self, kind: IdentityKind) -> bool {
        self.checks
            .iter()
            .filter(|c| c.identity == kind)
            .all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &IdentityCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Checks the five identity families of the trace against predictions, with
/// tolerance `tol_scale * N^{-1/2}` for the vanishing inner products and
/// `max(tol_scale * N^{-1/2}, 0.05 |prediction|)` for the covariance matches.
pub fn orthogonality_report(
    trace: &ErrorTrace,
    predictions: &CovarianceTables,
    tol_scale: f64,
) -> Result<IdentityReport> {
    if predictions.t != trace.t {
        return Err(CoreError::DimensionMismatch {
            what: "prediction horizon",
            expected: trace.t,
            got: predictions.t,
        });
    }
    let t_max = trace.t;
    let tau_n = tol_scale / (trace.n as f64).sqrt();
    let mut checks = Vec::new();

    let push = |identity: IdentityKind,
                    tau: usize,
                    tau_p: usize,
                    measured: Complex64,
                    predicted: Complex64,
                    tol: f64,
                    checks: &mut Vec<IdentityCheck>| {
        checks.push(IdentityCheck {
            identity,
            tau,
            tau_p,
            measured,
            predicted,
            tol,
            pass: (measured - predicted).norm() < tol,
        });
    };

    for tau in 0..t_max {
        for tau_pp in 0..=(tau + 1).min(t_max) {
            push(
                IdentityKind::Hq,
                tau,
                tau_pp,
                trace.hq[tau][tau_pp],
                Complex64::ZERO,
                tau_n,
                &mut checks,
            );
        }
        for tau_p in 0..=tau {
            push(
                IdentityKind::Bm,
                tau,
                tau_p,
                trace.bm[tau][tau_p],
                Complex64::ZERO,
                tau_n,
                &mut checks,
            );
            let pred = predictions.m_cov[tau][tau_p];
            push(
                IdentityKind::Mmqq,
                tau,
                tau_p,
                trace.m_gram[tau][tau_p],
                pred,
                tau_n.max(0.05 * pred.norm()),
                &mut checks,
            );
            push(
                IdentityKind::Hhmm,
                tau,
                tau_p,
                trace.h_gram[tau][tau_p],
                trace.m_gram[tau][tau_p],
                tau_n,
                &mut checks,
            );
        }
    }
    for tau in 0..=t_max {
        for tau_p in 0..=tau {
            let pred = predictions.zeta[tau][tau_p];
            push(
                IdentityKind::Qq,
                tau,
                tau_p,
                trace.q_gram[tau][tau_p],
                pred,
                tau_n.max(0.05 * pred.norm()),
                &mut checks,
            );
        }
    }

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(IdentityReport {
        n: trace.n,
        tol_scale,
        base_tol: tau_n,
        checks,
        all_pass,
    })
}

/// Monte Carlo estimates of the two divergence-free properties of the
/// denoisers under an AWGN observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma1Check {
    /// `E[z^* eta(x + z)]`; vanishes for the extrinsic denoiser.
    pub c1: Complex64,
    /// `E[z^* posterior(x + z)] - MMSE(v)`; vanishes for the posterior mean.
    pub c2_minus_mmse: Complex64,
    pub se1: f64,
    pub se2: f64,
    pub samples: usize,
}

const LEMMA1_CHUNKS: usize = 64;

/// Scalar MC check of the decoupling properties at noise level `v`.
/// Deterministic given `seed`.
pub fn lemma1_check(prior: &PriorSpec, v: f64, samples: usize, seed: u64) -> Result<Lemma1Check> {
    if samples < 10_000 {
        return Err(CoreError::InvalidParameter(format!(
            "lemma-1 MC needs >= 1e4 samples, got {samples}"
        )));
    }
    let den = AwgnDenoiser::new(*prior, v)?;
    let chunk = samples.div_ceil(LEMMA1_CHUNKS);
    let rho = prior.rho_s();
    let av = prior.active_var();
    let partials: Vec<(Complex64, f64, Complex64, f64)> = (0..LEMMA1_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(samples);
            let mut rng = seeded_rng(derive_seed(seed, 0x1e11_a1, c as u64));
            let mut s1 = Complex64::ZERO;
            let mut s1_sq = 0.0;
            let mut s2 = Complex64::ZERO;
            let mut s2_sq = 0.0;
            for _ in lo..hi {
                let x = if rng.random::<f64>() < rho {
                    complex_gaussian(&mut rng, av)
                } else {
                    Complex64::ZERO
                };
                let z = complex_gaussian(&mut rng, v);
                let r = x + z;
                let w1 = z.conj() * den.extrinsic(r);
                let w2 = z.conj() * den.posterior(r);
                s1 += w1;
                s1_sq += w1.norm_sqr();
                s2 += w2;
                s2_sq += w2.norm_sqr();
            }
            (s1, s1_sq, s2, s2_sq)
        })
        .collect();
    let mut sum1 = Complex64::ZERO;
    let mut sum1_sq = 0.0;
    let mut sum2 = Complex64::ZERO;
    let mut sum2_sq = 0.0;
    for (a, a2, b, b2) in partials {
        sum1 += a;
        sum1_sq += a2;
        sum2 += b;
        sum2_sq += b2;
    }
    let nf = samples as f64;
    let c1 = sum1 / nf;
    let c2 = sum2 / nf;
    let se1 = ((sum1_sq / nf - c1.norm_sqr()).max(0.0) / nf).sqrt();
    let se2 = ((sum2_sq / nf - c2.norm_sqr()).max(0.0) / nf).sqrt();
    Ok(Lemma1Check {
        c1,
        c2_minus_mmse: c2 - den.mmse(),
        se1,
        se2,
        samples,
    })
}

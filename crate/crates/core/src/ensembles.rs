//! Unitarily invariant measurement ensembles in SVD-factored form.
//!
//! A measurement operator is stored as `U * (S, O) * V^H` with `U`, `V`
//! independent Haar unitaries and `S` the diagonal of singular values. The
//! factors are kept dense: at desk scale (N <= 8192) exactness of the
//! unitarily invariant model matters more than speed.

use faer::linalg::solvers::Qr;
use faer::Mat;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::seeded_rng;

/// Conjugated dot product `sum_i conj(a_i) b_i`.
pub(crate) fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn mat_vec(mat: &Mat<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let (rows, cols) = (mat.nrows(), mat.ncols());
    debug_assert_eq!(cols, x.len());
    let mut out = vec![Complex64::ZERO; rows];
    for j in 0..cols {
        let xj = x[j];
        if xj == Complex64::ZERO {
            continue;
        }
        let col = mat.col(j);
        for i in 0..rows {
            out[i] += col[i] * xj;
        }
    }
    out
}

fn mat_adjoint_vec(mat: &Mat<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let (rows, cols) = (mat.nrows(), mat.ncols());
    debug_assert_eq!(rows, x.len());
    let mut out = vec![Complex64::ZERO; cols];
    for j in 0..cols {
        let col = mat.col(j);
        let mut acc = Complex64::ZERO;
        for i in 0..rows {
            acc += col[i].conj() * x[i];
        }
        out[j] = acc;
    }
    out
}

/// A dense n x n unitary matrix, produced by Haar sampling (or as the
/// identity for test plumbing).
#[derive(Debug, Clone)]
pub struct UnitaryMatrix {
    n: usize,
    entries: Mat<Complex64>,
}

impl UnitaryMatrix {
    /// The identity matrix; degenerate but handy as a deterministic stand-in.
    pub fn identity(n: usize) -> Self {
        let mut entries = Mat::zeros(n, n);
        for i in 0..n {
            entries[(i, i)] = Complex64::ONE;
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &Mat<Complex64> {
        &self.entries
    }

    /// `U x`.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n {
            return Err(CoreError::DimensionMismatch {
                what: "unitary apply",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(mat_vec(&self.entries, x))
    }

    /// `U^H x`.
    pub fn apply_adjoint(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n {
            return Err(CoreError::DimensionMismatch {
                what: "unitary adjoint apply",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(mat_adjoint_vec(&self.entries, x))
    }

    /// Max-entry deviation of `U^H U` from the identity. O(n^3); test use.
    pub fn unitarity_defect(&self) -> f64 {
        let gram = self.entries.adjoint() * &self.entries;
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let expect = if i == j { Complex64::ONE } else { Complex64::ZERO };
                worst = worst.max((gram[(i, j)] - expect).norm());
            }
        }
        worst
    }
}

/// QR of an i.i.d. complex Gaussian matrix, with each Q column rotated by
/// conj(R_jj)/|R_jj|. Without the diagonal phase correction the QR output
/// is not Haar-distributed.
pub(crate) fn haar_from_rng(n: usize, rng: &mut ChaCha8Rng) -> UnitaryMatrix {
    let g = Mat::<Complex64>::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(rand_distr::StandardNormal);
        let im: f64 = rng.sample(rand_distr::StandardNormal);
        Complex64::new(re, im)
    });
    let qr = Qr::new(g.as_ref());
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..n {
        let d = r[(j, j)];
        let mag = d.norm();
        let phase = if mag > 0.0 {
            d.conj() / mag
        } else {
            Complex64::ONE
        };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    UnitaryMatrix { n, entries: q }
}

/// Draws a Haar-distributed n x n unitary. Deterministic given `seed`.
pub fn sample_haar_unitary(n: usize, seed: u64) -> Result<UnitaryMatrix> {
    if n == 0 {
        return Err(CoreError::InvalidDimension(
            "unitary dimension must be >= 1".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    Ok(haar_from_rng(n, &mut rng))
}

/// Measurement ensembles with unitarily invariant Gram matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ensemble {
    /// Singular values of an M x N matrix with i.i.d. CN(0, 1/M) entries.
    IidGaussian,
    /// All squared singular values equal N/M.
    RowOrthogonal,
    /// Caller-provided singular values (normalized on construction).
    CustomSpectrum { sv: Vec<f64> },
}

/// Representation of the limiting (or realized) eigenvalue distribution of
/// `A A^H`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumKind {
    /// All mass at a single eigenvalue.
    PointMass { lambda0: f64 },
    /// The M realized eigenvalues of a finite model.
    Empirical { eigenvalues: Vec<f64> },
    /// Eigenvalues drawn once from an ensemble at a reference dimension,
    /// standing in for the limiting law.
    SampledReference {
        ensemble: Ensemble,
        n_ref: usize,
        seed: u64,
        eigenvalues: Vec<f64>,
    },
}

/// An eigenvalue distribution together with the compression rate delta = M/N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDensity {
    kind: SpectrumKind,
    delta: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "delta must be in (0, 1], got {delta}"
        )));
    }
    Ok(())
}

fn check_eigenvalues(eigs: &[f64]) -> Result<()> {
    if eigs.is_empty() {
        return Err(CoreError::EmptySpectrum);
    }
    if eigs.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(CoreError::InvalidParameter(
            "eigenvalues must be finite and >= 0".into(),
        ));
    }
    Ok(())
}

impl SpectralDensity {
    pub fn point_mass(lambda0: f64, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if !(lambda0 >= 0.0) || !lambda0.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "point mass eigenvalue must be finite and >= 0, got {lambda0}"
            )));
        }
        Ok(Self {
            kind: SpectrumKind::PointMass { lambda0 },
            delta,
        })
    }

    pub fn empirical(eigenvalues: Vec<f64>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        check_eigenvalues(&eigenvalues)?;
        Ok(Self {
            kind: SpectrumKind::Empirical { eigenvalues },
            delta,
        })
    }

    /// Draws singular values once from `ensemble` at dimensions
    /// `(round(delta * n_ref), n_ref)` and freezes their squares as a proxy
    /// for the limiting spectrum. Deterministic given `seed`.
    pub fn sampled_reference(
        ensemble: Ensemble,
        n_ref: usize,
        delta: f64,
        seed: u64,
    ) -> Result<Self> {
        check_delta(delta)?;
        let m_ref = ((delta * n_ref as f64).round() as usize).max(1);
        if m_ref > n_ref {
            return Err(CoreError::UnsupportedShape(format!(
                "reference dims M={m_ref} > N={n_ref}"
            )));
        }
        let mut rng = seeded_rng(seed);
        let sv = sample_singular_values(&ensemble, m_ref, n_ref, &mut rng)?;
        let eigenvalues: Vec<f64> = sv.iter().map(|s| s * s).collect();
        check_eigenvalues(&eigenvalues)?;
        Ok(Self {
            kind: SpectrumKind::SampledReference {
                ensemble,
                n_ref,
                seed,
                eigenvalues,
            },
            delta,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kind(&self) -> &SpectrumKind {
        &self.kind
    }

    /// Mean of `f` under the eigenvalue distribution.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match &self.kind {
            SpectrumKind::PointMass { lambda0 } => f(*lambda0),
            SpectrumKind::Empirical { eigenvalues }
            | SpectrumKind::SampledReference { eigenvalues, .. } => {
                let sum: f64 = eigenvalues.iter().map(|&l| f(l)).sum();
                sum / eigenvalues.len() as f64
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|l| l)
    }

    pub fn fourth_moment(&self) -> f64 {
        self.integrate(|l| l.powi(4))
    }
}

/// SVD-factored measurement model `A = U (S, O) V^H` plus the noise level.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    m: usize,
    n: usize,
    u: UnitaryMatrix,
    v: UnitaryMatrix,
    sv: Vec<f64>,
    sigma2: f64,
    delta: f64,
}

fn normalize_sv(sv: &mut [f64], n: usize) -> Result<()> {
    let energy: f64 = sv.iter().map(|s| s * s).sum();
    if energy <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "singular values have zero total energy; cannot normalize".into(),
        ));
    }
    let scale = (n as f64 / energy).sqrt();
    for s in sv.iter_mut() {
        *s *= scale;
    }
    Ok(())
}

fn sample_singular_values(
    ensemble: &Ensemble,
    m: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut sv = match ensemble {
        Ensemble::RowOrthogonal => {
            vec![(n as f64 / m as f64).sqrt(); m]
        }
        Ensemble::IidGaussian => {
            let var = 1.0 / m as f64;
            let g = Mat::<Complex64>::from_fn(m, n, |_, _| crate::rng::complex_gaussian(rng, var));
            g.singular_values()
                .map_err(|e| CoreError::InvalidParameter(format!("SVD failed: {e:?}")))?
        }
        Ensemble::CustomSpectrum { sv } => {
            if sv.len() != m {
                return Err(CoreError::DimensionMismatch {
                    what: "custom spectrum length",
                    expected: m,
                    got: sv.len(),
                });
            }
            if sv.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
                return Err(CoreError::InvalidParameter(
                    "custom singular values must be finite and >= 0".into(),
                ));
            }
            sv.clone()
        }
    };
    normalize_sv(&mut sv, n)?;
    Ok(sv)
}

/// Builds a measurement model: `U`, `V` Haar-sampled independently and
/// singular values drawn per ensemble, then rescaled so that
/// `sum_i sv_i^2 = N`. Deterministic given `seed`.
pub fn build_measurement(
    ensemble: &Ensemble,
    m: usize,
    n: usize,
    sigma2: f64,
    seed: u64,
) -> Result<MeasurementModel> {
    if m == 0 || n == 0 {
        return Err(CoreError::InvalidDimension(format!(
            "dimensions must be >= 1, got M={m}, N={n}"
        )));
    }
    if m > n {
        return Err(CoreError::UnsupportedShape(format!(
            "M={m} > N={n} is not supported"
        )));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "sigma2 must be > 0, got {sigma2}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let sv = sample_singular_values(ensemble, m, n, &mut rng)?;
    let u = haar_from_rng(m, &mut rng);
    let v = haar_from_rng(n, &mut rng);
    Ok(MeasurementModel {
        m,
        n,
        u,
        v,
        sv,
        sigma2,
        delta: m as f64 / n as f64,
    })
}

impl MeasurementModel {
    /// Assembles a model from explicit factors, enforcing the spectrum
    /// normalization.
    pub fn from_parts(
        u: UnitaryMatrix,
        v: UnitaryMatrix,
        sv: Vec<f64>,
        sigma2: f64,
    ) -> Result<Self> {
        let m = u.n();
        let n = v.n();
        if m > n {
            return Err(CoreError::UnsupportedShape(format!(
                "M={m} > N={n} is not supported"
            )));
        }
        if sv.len() != m {
            return Err(CoreError::DimensionMismatch {
                what: "singular value count",
                expected: m,
                got: sv.len(),
            });
        }
        if !(sigma2 > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "sigma2 must be > 0, got {sigma2}"
            )));
        }
        let energy: f64 = sv.iter().map(|s| s * s).sum();
        if (energy - n as f64).abs() > 1e-9 * n as f64 {
            return Err(CoreError::InvalidParameter(format!(
                "singular values must satisfy sum sv^2 = N (got {energy} vs {n})"
            )));
        }
        Ok(Self {
            m,
            n,
            u,
            v,
            sv,
            sigma2,
            delta: m as f64 / n as f64,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn u(&self) -> &UnitaryMatrix {
        &self.u
    }

    pub fn v(&self) -> &UnitaryMatrix {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sv
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `y = U (S, O) V^H x`.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let rotated = self.v.apply_adjoint(x)?;
        let mut scaled = vec![Complex64::ZERO; self.m];
        for i in 0..self.m {
            scaled[i] = rotated[i] * self.sv[i];
        }
        self.u.apply(&scaled)
    }

    /// `x = V (S, O)^H U^H y` (adjoint of `apply`, zero-padded).
    pub fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        let rotated = self.u.apply_adjoint(y)?;
        let mut padded = vec![Complex64::ZERO; self.n];
        for i in 0..self.m {
            padded[i] = rotated[i] * self.sv[i];
        }
        self.v.apply(&padded)
    }

    /// The realized eigenvalue distribution of `A A^H` (squares of the
    /// singular values).
    pub fn spectrum(&self) -> SpectralDensity {
        SpectralDensity {
            kind: SpectrumKind::Empirical {
                eigenvalues: self.sv.iter().map(|s| s * s).collect(),
            },
            delta: self.delta,
        }
    }

    /// Dense M x N matrix; intended for small-N cross-checks.
    pub fn to_dense(&self) -> Mat<Complex64> {
        let mut scaled = Mat::<Complex64>::zeros(self.m, self.n);
        for i in 0..self.m {
            let sv = self.sv[i];
            for j in 0..self.n {
                scaled[(i, j)] = self.v.entries()[(j, i)].conj() * sv;
            }
        }
        self.u.entries() * &scaled
    }
}

/// The realized spectrum of a model (free-function form of
/// [`MeasurementModel::spectrum`]).
pub fn spectrum_of(model: &MeasurementModel) -> SpectralDensity {
    model.spectrum()
}

/// A Hermitian matrix argument for the trace-law statistics.
pub enum HermitianOp<'a> {
    /// Real diagonal.
    Diagonal(&'a [f64]),
    /// Dense Hermitian matrix.
    Dense(&'a Mat<Complex64>),
}

impl HermitianOp<'_> {
    fn dim(&self) -> usize {
        match self {
            HermitianOp::Diagonal(d) => d.len(),
            HermitianOp::Dense(m) => m.nrows(),
        }
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        match self {
            HermitianOp::Diagonal(d) => x.iter().zip(d.iter()).map(|(&z, &s)| z * s).collect(),
            HermitianOp::Dense(m) => mat_vec(m, x),
        }
    }

    /// `Tr(D) / N`.
    pub fn normalized_trace(&self) -> f64 {
        match self {
            HermitianOp::Diagonal(d) => d.iter().sum::<f64>() / d.len() as f64,
            HermitianOp::Dense(m) => {
                let n = m.nrows();
                (0..n).map(|i| m[(i, i)].re).sum::<f64>() / n as f64
            }
        }
    }
}

/// Trace-law statistics for a unitary `V` and vectors `a`, `b` generated
/// independently of it: `s1 = N^{-1} b^H V a` and
/// `s2 = N^{-1} b^H V^H D V a`. For Haar `V`, `s1` concentrates near zero
/// and `s2` near `C * Tr(D)/N` with `C = N^{-1} b^H a`.
pub fn trace_law_statistics(
    v: &UnitaryMatrix,
    a: &[Complex64],
    b: &[Complex64],
    d: &HermitianOp<'_>,
) -> Result<(Complex64, Complex64)> {
    let n = v.n();
    for (len, what) in [(a.len(), "a"), (b.len(), "b"), (d.dim(), "D")] {
        if len != n {
            return Err(CoreError::DimensionMismatch {
                what: match what {
                    "a" => "trace law vector a",
                    "b" => "trace law vector b",
                    _ => "trace law matrix D",
                },
                expected: n,
                got: len,
            });
        }
    }
    let va = v.apply(a)?;
    let s1 = cdot(b, &va) / n as f64;
    let dva = d.apply(&va);
    let vh_dva = v.apply_adjoint(&dva)?;
    let s2 = cdot(b, &vh_dva) / n as f64;
    Ok((s1, s2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_is_unitary() {
        let u = sample_haar_unitary(64, 7).unwrap();
        assert!(u.unitarity_defect() < 1e-10);
    }

    #[test]
    fn haar_scalar_has_unit_modulus() {
        let u = sample_haar_unitary(1, 3).unwrap();
        assert!((u.entries()[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn haar_deterministic_given_seed() {
        let a = sample_haar_unitary(16, 42).unwrap();
        let b = sample_haar_unitary(16, 42).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(a.entries()[(i, j)], b.entries()[(i, j)]);
            }
        }
    }

    #[test]
    fn haar_rejects_zero_dimension() {
        assert!(matches!(
            sample_haar_unitary(0, 1),
            Err(CoreError::InvalidDimension(_))
        ));
    }

    #[test]
    fn row_orthogonal_spectrum_is_flat() {
        let model = build_measurement(&Ensemble::RowOrthogonal, 2, 4, 0.1, 5).unwrap();
        for s in model.singular_values() {
            assert!((s * s - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn custom_identity_spectrum_gives_unitary_operator() {
        let model = build_measurement(
            &Ensemble::CustomSpectrum { sv: vec![1.0; 8] },
            8,
            8,
            0.5,
            11,
        )
        .unwrap();
        // A = U V^H is unitary: applying then adjoint-applying returns x.
        let x: Vec<Complex64> = (0..8)
            .map(|i| Complex64::new(i as f64 + 0.5, -(i as f64)))
            .collect();
        let y = model.apply(&x).unwrap();
        let back = model.apply_adjoint(&y).unwrap();
        for (xi, bi) in x.iter().zip(&back) {
            assert!((xi - bi).norm() < 1e-10);
        }
    }

    #[test]
    fn build_rejects_bad_shapes() {
        assert!(matches!(
            build_measurement(&Ensemble::RowOrthogonal, 5, 4, 0.1, 1),
            Err(CoreError::UnsupportedShape(_))
        ));
        assert!(matches!(
            build_measurement(&Ensemble::RowOrthogonal, 2, 4, 0.0, 1),
            Err(CoreError::InvalidParameter(_))
        ));
        assert!(matches!(
            build_measurement(&Ensemble::CustomSpectrum { sv: vec![0.0; 4] }, 4, 4, 0.1, 1),
            Err(CoreError::InvalidParameter(_))
        ));
    }

    #[test]
    fn spectrum_normalization_holds_for_all_ensembles() {
        for ensemble in [
            Ensemble::IidGaussian,
            Ensemble::RowOrthogonal,
            Ensemble::CustomSpectrum {
                sv: vec![0.3, 1.7, 0.0, 2.2],
            },
        ] {
            let model = build_measurement(&ensemble, 4, 8, 0.1, 9).unwrap();
            let energy: f64 = model.singular_values().iter().map(|s| s * s).sum();
            assert!((energy - 8.0).abs() < 1e-9 * 8.0, "{ensemble:?}: {energy}");
        }
    }

    #[test]
    fn spectrum_of_squares_singular_values() {
        let model = build_measurement(
            &Ensemble::CustomSpectrum {
                sv: vec![1.0, 2.0, 1.0, 2.0],
            },
            4,
            10,
            0.1,
            2,
        )
        .unwrap();
        let spec = spectrum_of(&model);
        match spec.kind() {
            SpectrumKind::Empirical { eigenvalues } => {
                for (e, s) in eigenvalues.iter().zip(model.singular_values()) {
                    assert!((e - s * s).abs() < 1e-12);
                }
            }
            _ => panic!("expected empirical spectrum"),
        }
        assert!((spec.delta() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn svd_application_matches_dense() {
        let model = build_measurement(&Ensemble::IidGaussian, 24, 48, 0.3, 13).unwrap();
        let mut rng = seeded_rng(99);
        let x: Vec<Complex64> = (0..48)
            .map(|_| crate::rng::complex_gaussian(&mut rng, 1.0))
            .collect();
        let via_svd = model.apply(&x).unwrap();
        let dense = model.to_dense();
        let direct = mat_vec(&dense, &x);
        for (a, b) in via_svd.iter().zip(&direct) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn trace_law_identity_substitution() {
        let n = 32;
        let v = UnitaryMatrix::identity(n);
        let mut rng = seeded_rng(4);
        let a: Vec<Complex64> = (0..n)
            .map(|_| crate::rng::complex_gaussian(&mut rng, 1.0))
            .collect();
        let b: Vec<Complex64> = (0..n)
            .map(|_| crate::rng::complex_gaussian(&mut rng, 1.0))
            .collect();
        let d = vec![1.0; n];
        let (s1, s2) = trace_law_statistics(&v, &a, &b, &HermitianOp::Diagonal(&d)).unwrap();
        let expected = cdot(&b, &a) / n as f64;
        assert!((s1 - expected).norm() < 1e-12);
        assert!((s2 - expected).norm() < 1e-12);
    }

    #[test]
    fn trace_law_small_haar_sanity() {
        // Loose finite-size check; the full-size version lives in the
        // acceptance suite.
        let n = 512;
        let ones = vec![Complex64::ONE; n];
        let d = vec![1.0; n];
        let mut hits = 0;
        for seed in 0..10u64 {
            let v = sample_haar_unitary(n, 1000 + seed).unwrap();
            let (s1, s2) =
                trace_law_statistics(&v, &ones, &ones, &HermitianOp::Diagonal(&d)).unwrap();
            if s1.norm() < 5.0 / (n as f64).sqrt() && (s2 - Complex64::ONE).norm() < 0.2 {
                hits += 1;
            }
        }
        assert!(hits >= 9, "only {hits}/10 draws inside the trace-law band");
    }

    #[test]
    fn iid_gaussian_mean_eigenvalue_matches_oracle() {
        // After normalization the model's mean eigenvalue is exactly 1/delta;
        // an independently drawn raw Gaussian matrix should land near the
        // same value.
        let model = build_measurement(&Ensemble::IidGaussian, 128, 256, 0.1, 21).unwrap();
        let spec = model.spectrum();
        assert!((spec.mean() - 2.0).abs() < 1e-9);

        let mut rng = seeded_rng(77);
        let m = 128;
        let var = 1.0 / m as f64;
        let g = Mat::<Complex64>::from_fn(m, 256, |_, _| crate::rng::complex_gaussian(&mut rng, var));
        let sv = g.singular_values().unwrap();
        let mean: f64 = sv.iter().map(|s| s * s).sum::<f64>() / m as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "oracle mean {mean}");
    }

    #[test]
    fn iid_gaussian_fourth_moment_near_reference_draw() {
        let model = build_measurement(&Ensemble::IidGaussian, 256, 512, 0.1, 31).unwrap();
        let m4 = model.spectrum().fourth_moment();
        let reference =
            SpectralDensity::sampled_reference(Ensemble::IidGaussian, 1024, 0.5, 555).unwrap();
        let m4_ref = reference.fourth_moment();
        assert!(
            (m4 - m4_ref).abs() / m4_ref < 0.05,
            "fourth moments {m4} vs {m4_ref}"
        );
        assert!(m4.is_finite());
    }

    #[test]
    fn haar_invariance_under_fixed_rotation() {
        // Entry statistics of P V over repeated draws match those of V for a
        // fixed unitary P: first-column mean ~ 0 and variance ~ 1/(2n) per
        // real part.
        let n = 128;
        let draws = 200;
        let p = sample_haar_unitary(n, 999_999).unwrap();
        let mut plain = Vec::with_capacity(n * draws);
        let mut rotated = Vec::with_capacity(n * draws);
        for k in 0..draws {
            let v = sample_haar_unitary(n, 10_000 + k as u64).unwrap();
            let col: Vec<Complex64> = (0..n).map(|i| v.entries()[(i, 0)]).collect();
            let pcol = p.apply(&col).unwrap();
            for i in 0..n {
                plain.push(col[i].re);
                rotated.push(pcol[i].re);
            }
        }
        let stats = |xs: &[f64]| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            (mean, var)
        };
        let theory_var = 1.0 / (2.0 * n as f64);
        let samples = (n * draws) as f64;
        let mean_tol = 4.0 * (theory_var / samples).sqrt();
        let var_tol = 4.0 * theory_var * (2.0 / samples).sqrt();
        for (label, xs) in [("plain", &plain), ("rotated", &rotated)] {
            let (mean, var) = stats(xs);
            assert!(mean.abs() < mean_tol, "{label} mean {mean} vs {mean_tol}");
            assert!(
                (var - theory_var).abs() < var_tol,
                "{label} var {var} vs {theory_var}"
            );
        }
    }
}

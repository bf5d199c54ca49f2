//! Extreme eigenvalues, singular values, condition numbers and sparse
//! approximate inverses.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evaluation::{loglog_fit, RateFit};
use crate::fem::{assemble, PdeCoefficients};
use crate::mesh::Mesh;
use crate::sparse::{dot, norm2, BandedLu, CsrMatrix};

/// Above this size the iterative path is used.
pub const DENSE_LIMIT: usize = 2000;
const ITERATIVE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralMethod {
    Dense,
    Iterative,
}

/// Extreme spectral data of a square matrix.
///
/// For nonsymmetric input the eigenvalue fields describe the symmetric part
/// `(A + Aᵀ)/2`, whose smallest eigenvalue is the coercivity constant of the
/// discrete form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kappa: f64,
    pub method: SpectralMethod,
}

/// Picks the dense path up to [`DENSE_LIMIT`] unknowns, the iterative one
/// beyond.
pub fn spectral_summary(a: &CsrMatrix, symmetric: bool) -> Result<SpectralSummary> {
    let method = if a.nrows() <= DENSE_LIMIT {
        SpectralMethod::Dense
    } else {
        SpectralMethod::Iterative
    };
    spectral_summary_with(a, symmetric, method)
}

pub fn spectral_summary_with(a: &CsrMatrix, symmetric: bool, method: SpectralMethod) -> Result<SpectralSummary> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(invalid("spectral summary needs a nonempty square matrix"));
    }
    match method {
        SpectralMethod::Dense => Ok(dense_summary(&a.to_dense(), symmetric)),
        SpectralMethod::Iterative => iterative_summary(a, symmetric),
    }
}

fn sym_extremes(m: DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(m).eigenvalues;
    (ev.min(), ev.max())
}

/// Dense eigendecomposition / SVD of a small matrix.
pub fn dense_summary(a: &DMatrix<f64>, symmetric: bool) -> SpectralSummary {
    if symmetric {
        let ev = SymmetricEigen::new(a.clone()).eigenvalues;
        let abs = ev.abs();
        let (smin, smax) = (abs.min(), abs.max());
        SpectralSummary {
            lambda_min: ev.min(),
            lambda_max: ev.max(),
            sigma_min: smin,
            sigma_max: smax,
            kappa: smax / smin,
            method: SpectralMethod::Dense,
        }
    } else {
        let sv = a.clone().singular_values();
        let (smin, smax) = (sv.min(), sv.max());
        let (lmin, lmax) = sym_extremes((a + a.transpose()) * 0.5);
        SpectralSummary {
            lambda_min: lmin,
            lambda_max: lmax,
            sigma_min: smin,
            sigma_max: smax,
            kappa: smax / smin,
            method: SpectralMethod::Dense,
        }
    }
}

fn iterative_summary(a: &CsrMatrix, symmetric: bool) -> Result<SpectralSummary> {
    if symmetric {
        let (lmin, lmax) = symmetric_extremes(a)?;
        let (smin, smax) = (lmin.abs().min(lmax.abs()), lmin.abs().max(lmax.abs()));
        Ok(SpectralSummary {
            lambda_min: lmin,
            lambda_max: lmax,
            sigma_min: smin,
            sigma_max: smax,
            kappa: smax / smin,
            method: SpectralMethod::Iterative,
        })
    } else {
        let ata = a.transpose().matmul(a);
        let (s2min, s2max) = symmetric_extremes(&ata)?;
        let sym = a.add(&a.transpose()).scale(0.5);
        let (lmin, lmax) = symmetric_extremes(&sym)?;
        let (smin, smax) = (s2min.max(0.0).sqrt(), s2max.sqrt());
        Ok(SpectralSummary {
            lambda_min: lmin,
            lambda_max: lmax,
            sigma_min: smin,
            sigma_max: smax,
            kappa: smax / smin,
            method: SpectralMethod::Iterative,
        })
    }
}

/// Smallest-magnitude and largest eigenvalue of a symmetric matrix whose
/// spectrum is positive (or at least whose top eigenvalue is the largest in
/// magnitude).
fn symmetric_extremes(a: &CsrMatrix) -> Result<(f64, f64)> {
    let n = a.nrows();
    // shifting just past the Gershgorin bound turns the top eigenvalue into
    // the one nearest the shift, so inverse iteration converges at the rate
    // of the relative gap instead of power iteration's 1 - O(h²)
    let bound = a.norm_inf();
    let shift = bound * (1.0 + 1e-10) + f64::MIN_POSITIVE;
    let top = BandedLu::factor(&a.shifted(shift))?;
    let lmax = shift + 1.0 / inverse_iteration(a, &top, "largest eigenvalue", n, shift)?;
    let bottom = BandedLu::factor(a)?;
    let lmin = 1.0 / inverse_iteration(a, &bottom, "smallest eigenvalue", n, 0.0)?;
    Ok((lmin, lmax))
}

/// Power iteration on `(A - shift)⁻¹`; returns the dominant eigenvalue of
/// that operator. Stops once the eigen-residual of `A` drops below the
/// tolerance.
fn inverse_iteration(a: &CsrMatrix, lu: &BandedLu, what: &'static str, n: usize, shift: f64) -> Result<f64> {
    // deterministic start with components along every eigenvector of the
    // Laplacian-like matrices of interest
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 97) as f64 / 97.0).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let cap = 10 * n.max(1);
    let mut mu = 0.0;
    for _ in 0..cap {
        let w = lu.solve(&v);
        mu = dot(&v, &w);
        let nw = norm2(&w);
        v = w.into_iter().map(|x| x / nw).collect();
        let lambda = shift + 1.0 / mu;
        let av = a.mul_vec(&v);
        let res: f64 = av
            .iter()
            .zip(&v)
            .map(|(p, q)| (p - lambda * q).powi(2))
            .sum::<f64>()
            .sqrt();
        if res <= ITERATIVE_TOL * lambda.abs() {
            return Ok(mu);
        }
    }
    Err(Error::Convergence {
        what,
        iterations: cap,
        estimate: shift + 1.0 / mu,
        last_iterate: v,
    })
}

/// Spectral data along a refinement family, with log-log slopes against `h`.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub h: Vec<f64>,
    pub n_dofs: Vec<usize>,
    pub lambda_min: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lambda_min_fit: RateFit,
    pub lambda_max_fit: RateFit,
    pub kappa_fit: RateFit,
}

pub fn verify_bounds(meshes: &[Mesh], coeffs: &PdeCoefficients) -> Result<BoundsReport> {
    if meshes.len() < 2 {
        return Err(invalid("verify_bounds needs at least two meshes"));
    }
    let mut rep = BoundsReport {
        h: vec![],
        n_dofs: vec![],
        lambda_min: vec![],
        lambda_max: vec![],
        kappa: vec![],
        lambda_min_fit: RateFit::default(),
        lambda_max_fit: RateFit::default(),
        kappa_fit: RateFit::default(),
    };
    for mesh in meshes {
        let sys = assemble(mesh, coeffs)?;
        let symmetric = sys.a.is_symmetric(1e-12);
        let s = spectral_summary(&sys.a, symmetric)?;
        rep.h.push(mesh.metrics().h);
        rep.n_dofs.push(sys.n_dofs());
        rep.lambda_min.push(s.lambda_min);
        rep.lambda_max.push(s.lambda_max);
        rep.kappa.push(s.kappa);
    }
    rep.lambda_min_fit = loglog_fit(&rep.h, &rep.lambda_min)?;
    rep.lambda_max_fit = loglog_fit(&rep.h, &rep.lambda_max)?;
    rep.kappa_fit = loglog_fit(&rep.h, &rep.kappa)?;
    Ok(rep)
}

/// `(λ_min|x|, |Tx|, λ_max|x|)` for symmetric positive-definite `T`.
pub fn spd_sandwich_check(t: &DMatrix<f64>, x: &[f64]) -> Result<(f64, f64, f64)> {
    if !t.is_square() || t.nrows() != x.len() {
        return Err(invalid("matrix and vector sizes disagree"));
    }
    let scale = t.amax().max(f64::MIN_POSITIVE);
    if (t - t.transpose()).amax() > 1e-12 * scale {
        return Err(invalid("matrix is not symmetric"));
    }
    let ev = SymmetricEigen::new(t.clone()).eigenvalues;
    if !(ev.min() > 0.0) {
        return Err(invalid(format!(
            "matrix is not positive definite (smallest eigenvalue {:e})",
            ev.min()
        )));
    }
    let xv = DVector::from_column_slice(x);
    let nx = xv.norm();
    Ok((ev.min() * nx, (t * &xv).norm(), ev.max() * nx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerKind {
    Identity,
    Jacobi,
    Spai,
}

impl std::str::FromStr for PreconditionerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "jacobi" => Ok(Self::Jacobi),
            "spai" => Ok(Self::Spai),
            _ => Err(invalid(format!("unknown preconditioner '{s}'"))),
        }
    }
}

/// An explicit approximate inverse, applied from the left.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub kind: PreconditionerKind,
    pub p_inv: CsrMatrix,
}

impl Preconditioner {
    pub fn identity(n: usize) -> Self {
        Self {
            kind: PreconditionerKind::Identity,
            p_inv: CsrMatrix::identity(n),
        }
    }

    /// `P⁻¹ A`.
    pub fn apply_left(&self, a: &CsrMatrix) -> CsrMatrix {
        match self.kind {
            PreconditionerKind::Identity => a.clone(),
            _ => self.p_inv.matmul(a),
        }
    }
}

/// Builds `P⁻¹`. For SPAI the sparsity pattern defaults to that of `A`.
pub fn build_preconditioner(
    a: &CsrMatrix,
    kind: PreconditionerKind,
    pattern: Option<&CsrMatrix>,
) -> Result<Preconditioner> {
    if !a.is_square() {
        return Err(invalid("preconditioner needs a square matrix"));
    }
    let n = a.nrows();
    let p_inv = match kind {
        PreconditionerKind::Identity => CsrMatrix::identity(n),
        PreconditionerKind::Jacobi => {
            let d = a.diagonal();
            if let Some(row) = d.iter().position(|&v| v == 0.0) {
                return Err(Error::SingularPreconditioner { row });
            }
            CsrMatrix::from_diagonal(&d.iter().map(|v| 1.0 / v).collect::<Vec<_>>())
        }
        // P⁻¹ multiplies from the left, so fit rows: ‖M A − I‖ is the
        // column fit of Aᵀ, transposed back
        PreconditionerKind::Spai => spai(&a.transpose(), &pattern.unwrap_or(a).transpose())?.transpose(),
    };
    Ok(Preconditioner { kind, p_inv })
}

/// Column-by-column Frobenius minimization of `‖A M − I‖` over a fixed
/// pattern.
fn spai(a: &CsrMatrix, pattern: &CsrMatrix) -> Result<CsrMatrix> {
    let n = a.nrows();
    if pattern.nrows() != n || pattern.ncols() != n {
        return Err(invalid("SPAI pattern must match the matrix shape"));
    }
    // rows of the transposes are the columns we need
    let at = a.transpose();
    let pt = pattern.transpose();
    let columns: Vec<Result<Vec<(usize, usize, f64)>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let big_j: Vec<usize> = pt.row(j).0.to_vec();
            if big_j.is_empty() {
                return Err(Error::SingularPreconditioner { row: j });
            }
            let mut big_i: Vec<usize> = big_j.iter().flat_map(|&k| at.row(k).0.iter().copied()).collect();
            big_i.sort_unstable();
            big_i.dedup();
            let sub = DMatrix::from_fn(big_i.len(), big_j.len(), |r, c| a.get(big_i[r], big_j[c]));
            let rhs = DVector::from_fn(big_i.len(), |r, _| if big_i[r] == j { 1.0 } else { 0.0 });
            let m = least_squares(sub, rhs).ok_or(Error::SingularPreconditioner { row: j })?;
            Ok(big_j.iter().zip(m.iter()).map(|(&r, &v)| (r, j, v)).collect())
        })
        .collect();
    let mut triplets = Vec::new();
    for c in columns {
        triplets.extend(c?);
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

/// Least squares through a thin QR; `None` if the columns are dependent.
fn least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() < a.ncols() {
        return None;
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    let tiny = f64::EPSILON * r.amax() * r.nrows() as f64;
    if r.diagonal().iter().any(|d| d.abs() <= tiny) {
        return None;
    }
    r.solve_upper_triangular(&qtb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_interval, ElementFamily};

    fn laplacian(n_elem: usize) -> CsrMatrix {
        let m = build_uniform_interval(0.0, 1.0, n_elem, ElementFamily::P1Interval).unwrap();
        assemble(&m, &PdeCoefficients::poisson()).unwrap().a
    }

    fn closed_form(n_elem: usize, k: usize) -> f64 {
        let h = 1.0 / n_elem as f64;
        4.0 / h * (k as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2)
    }

    #[test]
    fn identity_and_diagonal() {
        let s = spectral_summary(&CsrMatrix::identity(10), true).unwrap();
        assert_eq!(s.kappa, 1.0);
        let d = CsrMatrix::from_diagonal(&[1.0, 3.0]);
        for sym in [true, false] {
            let s = spectral_summary(&d, sym).unwrap();
            assert!((s.sigma_min - 1.0).abs() < 1e-14);
            assert!((s.sigma_max - 3.0).abs() < 1e-14);
            assert!((s.kappa - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn laplacian_matches_closed_form_on_both_paths() {
        let n_elem = 64;
        let a = laplacian(n_elem);
        let lo = closed_form(n_elem, 1);
        let hi = closed_form(n_elem, n_elem - 1);
        for method in [SpectralMethod::Dense, SpectralMethod::Iterative] {
            let s = spectral_summary_with(&a, true, method).unwrap();
            assert!((s.lambda_min - lo).abs() < 1e-8 * lo, "{method:?}");
            assert!((s.lambda_max - hi).abs() < 1e-8 * hi, "{method:?}");
            assert!((s.sigma_min - s.lambda_min).abs() < 1e-8 * lo);
        }
    }

    #[test]
    fn nonsymmetric_paths_agree() {
        let m = build_uniform_interval(-1.0, 1.0, 40, ElementFamily::P1Interval).unwrap();
        let a = assemble(&m, &PdeCoefficients::constant(0.1, [-1.0, 0.0], 0.0))
            .unwrap()
            .a;
        let d = spectral_summary_with(&a, false, SpectralMethod::Dense).unwrap();
        let i = spectral_summary_with(&a, false, SpectralMethod::Iterative).unwrap();
        for (x, y) in [
            (d.sigma_min, i.sigma_min),
            (d.sigma_max, i.sigma_max),
            (d.kappa, i.kappa),
            (d.lambda_min, i.lambda_min),
            (d.lambda_max, i.lambda_max),
        ] {
            assert!((x - y).abs() < 1e-6 * x.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn eigen_and_singular_condition_numbers_agree_for_spd() {
        let a = laplacian(33);
        let sym = spectral_summary(&a, true).unwrap();
        let gen = spectral_summary(&a, false).unwrap();
        assert!((sym.kappa - gen.kappa).abs() < 1e-8 * sym.kappa);
    }

    #[test]
    fn sandwich_examples() {
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(spd_sandwich_check(&t, &[1.0, 0.0]).unwrap(), (1.0, 1.0, 3.0));
        let (lo, v, hi) = spd_sandwich_check(&t, &[1.0, 1.0]).unwrap();
        assert!((lo - 2f64.sqrt()).abs() < 1e-14);
        assert!((v - 10f64.sqrt()).abs() < 1e-14);
        assert!((hi - 3.0 * 2f64.sqrt()).abs() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_sandwich_check(&bad, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn diagonal_matrix_is_inverted_exactly() {
        let d = CsrMatrix::from_diagonal(&[2.0, 4.0, 8.0]);
        for kind in [PreconditionerKind::Jacobi, PreconditionerKind::Spai] {
            let p = build_preconditioner(&d, kind, None).unwrap();
            assert_eq!(p.p_inv.diagonal(), vec![0.5, 0.25, 0.125]);
        }
        let p = build_preconditioner(&d, PreconditionerKind::Identity, None).unwrap();
        assert_eq!(p.apply_left(&d).to_dense(), d.to_dense());
    }

    #[test]
    fn spai_beats_jacobi_in_frobenius_norm() {
        let a = laplacian(16);
        let eye = CsrMatrix::identity(a.nrows());
        let dev = |k| {
            let p = build_preconditioner(&a, k, None).unwrap();
            p.p_inv.matmul(&a).add(&eye.scale(-1.0)).frobenius_norm()
        };
        assert!(dev(PreconditionerKind::Spai) < dev(PreconditionerKind::Jacobi));
    }

    #[test]
    fn jacobi_rejects_zero_diagonal() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(
            build_preconditioner(&a, PreconditionerKind::Jacobi, None),
            Err(Error::SingularPreconditioner { row: 0 })
        ));
    }

    #[test]
    fn spai_reduces_conditioning() {
        for n_elem in [8, 16, 64, 256] {
            let a = laplacian(n_elem);
            let p = build_preconditioner(&a, PreconditionerKind::Spai, None).unwrap();
            let before = spectral_summary(&a, true).unwrap().kappa;
            let after = spectral_summary(&p.apply_left(&a), false).unwrap().kappa;
            assert!(after < before, "n_elem={n_elem}: {after} vs {before}");
        }
    }

    #[test]
    fn convergence_failure_carries_iterate() {
        // eigenvalues ±1 have equal magnitude, so the iterate never settles
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        let lu = BandedLu::factor(&a).unwrap();
        match inverse_iteration(&a, &lu, "test", 2, 0.0) {
            Err(Error::Convergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 20);
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}

//! Solution reconstruction, L² errors between finite element functions,
//! the three-way error split and log-log rate fits.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::fem::{eval_expansion, eval_on_element, local_basis, solve_reference, AssembledSystem, LoadAssembler};
use crate::forcing::{load_batch_with, ForcingDistribution, ForcingSample};
use crate::mesh::Mesh;
use crate::quadrature::{gauss_legendre_unit, triangle_degree4};
use crate::sparse::CsrMatrix;

/// `û_h(x) = Σ_k α_k φ_k(x)`.
pub fn reconstruct(mesh: &Mesh, alpha: &[f64], x: &[f64]) -> Result<f64> {
    if alpha.len() != mesh.n_dofs() {
        return Err(invalid(format!(
            "{} coefficients for {} degrees of freedom",
            alpha.len(),
            mesh.n_dofs()
        )));
    }
    Ok(eval_expansion(mesh, alpha, x)?.0)
}

/// Sampling operators onto a shared quadrature of the finer of two nested
/// meshes: `‖u_a − u_b‖² = Σ_q w_q ((Q_a α_a)_q − (Q_b α_b)_q)²`.
#[derive(Debug, Clone)]
pub struct L2Comparator {
    weights: Vec<f64>,
    qa: CsrMatrix,
    qb: CsrMatrix,
}

/// Quadrature points per interval used for error integrals; exact for the
/// squared difference of quadratics.
const ERROR_POINTS_1D: usize = 5;

fn same_mesh(a: &Mesh, b: &Mesh) -> bool {
    a.family() == b.family()
        && a.n_nodes() == b.n_nodes()
        && a.n_elements() == b.n_elements()
        && (0..a.n_nodes()).all(|i| a.node(i) == b.node(i))
        && (0..a.n_elements()).all(|e| a.element(e) == b.element(e))
}

impl L2Comparator {
    /// `coarse` must be `fine` itself or have its vertices among `fine`'s
    /// nodes with every fine element inside one coarse element.
    pub fn new(coarse: &Mesh, fine: &Mesh) -> Result<Self> {
        if coarse.dim() != fine.dim() {
            return Err(Error::UnsupportedPair("meshes have different dimensions".into()));
        }
        let identical = same_mesh(coarse, fine);
        if !identical {
            for v in 0..coarse.n_nodes() {
                let x = coarse.node(v);
                let on_fine = fine
                    .locate(x)
                    .map(|loc| {
                        fine.element(loc.element)
                            .iter()
                            .any(|&n| fine.node(n).iter().zip(x).all(|(p, q)| (p - q).abs() <= 1e-12))
                    })
                    .unwrap_or(false);
                if !on_fine {
                    return Err(Error::UnsupportedPair(format!(
                        "node {v} at {x:?} of the coarse mesh is not a node of the fine mesh"
                    )));
                }
            }
        }
        let mut weights = Vec::new();
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        for e in 0..fine.n_elements() {
            let points = error_quadrature(fine, e);
            // all points of a fine element share one coarse element; take
            // the element containing the fine centroid
            let coarse_e = if identical {
                e
            } else {
                let c = centroid(fine, e);
                coarse
                    .locate(&c[..fine.dim()])
                    .ok_or_else(|| Error::UnsupportedPair("fine mesh covers more than the coarse one".into()))?
                    .element
            };
            for (x, w, bary) in points {
                let q = weights.len();
                weights.push(w);
                push_basis(fine, e, &bary, q, &mut tb);
                let cb = if identical {
                    bary
                } else {
                    let b = coarse.barycentric(coarse_e, &x[..fine.dim()]);
                    if b.iter().take(fine.dim() + 1).any(|&v| v < -1e-9) {
                        return Err(Error::UnsupportedPair(
                            "a fine element straddles coarse elements".into(),
                        ));
                    }
                    b
                };
                push_basis(coarse, coarse_e, &cb, q, &mut ta);
            }
        }
        let nq = weights.len();
        Ok(Self {
            weights,
            qa: CsrMatrix::from_triplets(nq, coarse.n_dofs(), &ta),
            qb: CsrMatrix::from_triplets(nq, fine.n_dofs(), &tb),
        })
    }

    /// `(‖u_a − u_b‖, ‖u_b‖)`.
    pub fn distance(&self, alpha_a: &[f64], alpha_b: &[f64]) -> (f64, f64) {
        let ua = self.qa.mul_vec(alpha_a);
        let ub = self.qb.mul_vec(alpha_b);
        let mut diff = 0.0;
        let mut norm = 0.0;
        for ((w, a), b) in self.weights.iter().zip(&ua).zip(&ub) {
            diff += w * (a - b) * (a - b);
            norm += w * b * b;
        }
        (diff.sqrt(), norm.sqrt())
    }

    /// `‖u_a‖` for coefficients on the coarse mesh.
    pub fn norm_a(&self, alpha_a: &[f64]) -> f64 {
        let ua = self.qa.mul_vec(alpha_a);
        self.weights.iter().zip(&ua).map(|(w, a)| w * a * a).sum::<f64>().sqrt()
    }
}

fn centroid(mesh: &Mesh, e: usize) -> [f64; 2] {
    let v = mesh.vertices(e);
    let mut c = [0.0; 2];
    for &n in v {
        for (k, x) in mesh.node(n).iter().enumerate() {
            c[k] += x / v.len() as f64;
        }
    }
    c
}

fn error_quadrature(mesh: &Mesh, e: usize) -> Vec<([f64; 2], f64, [f64; 3])> {
    let v = mesh.vertices(e);
    if mesh.dim() == 1 {
        let (a, b) = (mesh.node(v[0])[0], mesh.node(v[1])[0]);
        gauss_legendre_unit(ERROR_POINTS_1D)
            .into_iter()
            .map(|(t, w)| ([a + t * (b - a), 0.0], w * (b - a), [1.0 - t, t, 0.0]))
            .collect()
    } else {
        let area = mesh.measure(e);
        let p: Vec<&[f64]> = v.iter().map(|&n| mesh.node(n)).collect();
        triangle_degree4()
            .iter()
            .map(|&(l, w)| {
                let x = [
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ];
                (x, w * area, l)
            })
            .collect()
    }
}

fn push_basis(mesh: &Mesh, e: usize, bary: &[f64; 3], q: usize, out: &mut Vec<(usize, usize, f64)>) {
    let lb = local_basis(mesh, e, bary);
    for (k, &node) in mesh.element(e).iter().enumerate() {
        if let Some(d) = mesh.dof_of_node(node) {
            out.push((q, d, lb.values[k]));
        }
    }
}

/// `(‖u_a − u_fine‖, ‖u_a − u_fine‖ / ‖u_fine‖)`.
pub fn l2_distance(mesh_a: &Mesh, alpha_a: &[f64], mesh_fine: &Mesh, alpha_fine: &[f64]) -> Result<(f64, f64)> {
    if alpha_a.len() != mesh_a.n_dofs() || alpha_fine.len() != mesh_fine.n_dofs() {
        return Err(invalid("coefficient vectors do not match their meshes"));
    }
    let cmp = L2Comparator::new(mesh_a, mesh_fine)?;
    let (abs, norm) = cmp.distance(alpha_a, alpha_fine);
    Ok((abs, abs / norm))
}

/// `‖u − u_h‖` for a known function `u`, by elementwise quadrature.
pub fn l2_error_exact<U: Fn(&[f64]) -> f64 + ?Sized>(mesh: &Mesh, alpha: &[f64], u: &U) -> Result<f64> {
    if alpha.len() != mesh.n_dofs() {
        return Err(invalid("coefficient vector does not match the mesh"));
    }
    let mut sum = 0.0;
    for e in 0..mesh.n_elements() {
        for (x, w, bary) in error_quadrature(mesh, e) {
            let d = u(&x[..mesh.dim()]) - eval_on_element(mesh, alpha, e, &bary).0;
            sum += w * d * d;
        }
    }
    Ok(sum.sqrt())
}

/// Per-sample and aggregate errors of a predictor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorReport {
    pub per_sample_rel_l2: Vec<f64>,
    pub per_sample_abs_l2: Vec<f64>,
    pub mean_rel_l2: f64,
    /// Monte-Carlo estimate of the `L¹(Ω; L²(D))` error.
    pub mean_abs_l2: f64,
    pub kappa: f64,
    pub n_h: usize,
    pub n_params: usize,
    pub m: usize,
}

impl ErrorReport {
    pub fn from_samples(abs: Vec<f64>, rel: Vec<f64>) -> Self {
        let n = rel.len().max(1) as f64;
        Self {
            mean_rel_l2: rel.iter().sum::<f64>() / n,
            mean_abs_l2: abs.iter().sum::<f64>() / n,
            per_sample_rel_l2: rel,
            per_sample_abs_l2: abs,
            ..Self::default()
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sample,abs_l2,rel_l2")?;
        for (i, (a, r)) in self.per_sample_abs_l2.iter().zip(&self.per_sample_rel_l2).enumerate() {
            writeln!(out, "{i},{a:e},{r:e}")?;
        }
        writeln!(out, "mean,{:e},{:e}", self.mean_abs_l2, self.mean_rel_l2)
    }
}

/// Reference solutions for a fixed set of test samples on the training mesh
/// and, optionally, on a finer proxy mesh.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub samples: Vec<ForcingSample>,
    /// Galerkin coefficients `α*(ω)` on the training mesh, one per column.
    pub alpha_star: DMatrix<f64>,
    same: L2Comparator,
    fine: Option<(L2Comparator, DMatrix<f64>)>,
}

impl ReferenceSet {
    pub fn new(
        system: &AssembledSystem,
        dist: &ForcingDistribution,
        samples: Vec<ForcingSample>,
        fine: Option<&AssembledSystem>,
    ) -> Result<Self> {
        let mesh = &system.mesh;
        let alpha_star = solve_columns(system, &load_batch_with(&LoadAssembler::new(mesh), dist, &samples))?;
        let same = L2Comparator::new(mesh, mesh)?;
        let fine = match fine {
            None => None,
            Some(fs) => {
                let cmp = L2Comparator::new(mesh, &fs.mesh)?;
                let loads = load_batch_with(&LoadAssembler::new(&fs.mesh), dist, &samples);
                Some((cmp, solve_columns(fs, &loads)?))
            }
        };
        Ok(Self {
            samples,
            alpha_star,
            same,
            fine,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Errors of predicted coefficient columns against `α*` on the same mesh.
    pub fn galerkin_error(&self, predicted: &DMatrix<f64>) -> ErrorReport {
        let (abs, rel) = (0..self.len())
            .map(|j| {
                let (d, n) = self
                    .same
                    .distance(predicted.column(j).as_slice(), self.alpha_star.column(j).as_slice());
                (d, d / n)
            })
            .unzip();
        ErrorReport::from_samples(abs, rel)
    }

    /// Errors against the fine-mesh proxy of the exact solution.
    pub fn total_error(&self, predicted: &DMatrix<f64>) -> Option<ErrorReport> {
        let (cmp, fine) = self.fine.as_ref()?;
        let (abs, rel) = (0..self.len())
            .map(|j| {
                let (d, n) = cmp.distance(predicted.column(j).as_slice(), fine.column(j).as_slice());
                (d, d / n)
            })
            .unzip();
        Some(ErrorReport::from_samples(abs, rel))
    }

    pub fn fine_solutions(&self) -> Option<&DMatrix<f64>> {
        self.fine.as_ref().map(|(_, f)| f)
    }
}

fn solve_columns(system: &AssembledSystem, loads: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(loads.nrows(), loads.ncols());
    for j in 0..loads.ncols() {
        let a = solve_reference(system, loads.column(j).as_slice())?;
        out.column_mut(j).copy_from_slice(&a);
    }
    Ok(out)
}

/// Same-mesh error of `predict` against Galerkin solutions over held-out
/// samples.
pub fn expected_error<P>(
    predict: P,
    system: &AssembledSystem,
    dist: &ForcingDistribution,
    test_samples: &[ForcingSample],
) -> Result<ErrorReport>
where
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let refs = ReferenceSet::new(system, dist, test_samples.to_vec(), None)?;
    let n = system.n_dofs();
    let mut pred = DMatrix::zeros(n, test_samples.len());
    for (j, s) in test_samples.iter().enumerate() {
        let a = predict(&s.omega)?;
        if a.len() != n {
            return Err(invalid("predictor returned the wrong number of coefficients"));
        }
        pred.column_mut(j).copy_from_slice(&a);
    }
    let mut rep = refs.galerkin_error(&pred);
    rep.n_h = n;
    rep.m = test_samples.len();
    Ok(rep)
}

/// Monte-Carlo estimates of the three error components and the total, all
/// in `L¹(Ω; L²(D))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    /// `‖u − u_h‖` with `u` proxied on the fine mesh.
    pub fem: f64,
    /// `‖u_h − u_{h,n}‖`.
    pub approximation: f64,
    /// `‖u_{h,n} − u_{h,n,M}‖`.
    pub generalization: f64,
    /// `‖u − u_{h,n,M}‖`.
    pub total: f64,
    /// Samples where the three components summed fall short of the total.
    pub triangle_violations: usize,
}

/// All coefficient arguments hold one sample per column: `alpha_fine` on
/// `mesh_fine`, the others on `mesh`.
pub fn decompose_error(
    mesh: &Mesh,
    mesh_fine: &Mesh,
    alpha_fine: &DMatrix<f64>,
    alpha_star: &DMatrix<f64>,
    alpha_n: &DMatrix<f64>,
    alpha_nm: &DMatrix<f64>,
) -> Result<ErrorDecomposition> {
    let m = alpha_fine.ncols();
    if [alpha_star.ncols(), alpha_n.ncols(), alpha_nm.ncols()]
        .iter()
        .any(|&c| c != m)
        || m == 0
    {
        return Err(invalid("all coefficient sets need the same nonzero number of samples"));
    }
    let to_fine = L2Comparator::new(mesh, mesh_fine)?;
    let same = L2Comparator::new(mesh, mesh)?;
    let (mut fem, mut approx, mut gen, mut total) = (0.0, 0.0, 0.0, 0.0);
    let mut violations = 0;
    for j in 0..m {
        let f = alpha_fine.column(j);
        let (s, n, nm) = (alpha_star.column(j), alpha_n.column(j), alpha_nm.column(j));
        let e1 = to_fine.distance(s.as_slice(), f.as_slice()).0;
        let e2 = same.distance(n.as_slice(), s.as_slice()).0;
        let e3 = same.distance(nm.as_slice(), n.as_slice()).0;
        let et = to_fine.distance(nm.as_slice(), f.as_slice()).0;
        if e1 + e2 + e3 < et * (1.0 - 1e-12) {
            violations += 1;
        }
        fem += e1;
        approx += e2;
        gen += e3;
        total += et;
    }
    let k = m as f64;
    Ok(ErrorDecomposition {
        fem: fem / k,
        approximation: approx / k,
        generalization: gen / k,
        total: total / k,
        triangle_violations: violations,
    })
}

/// Least squares on `(log x, log y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RateFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() < 3 {
        return Err(invalid("a rate fit needs at least three points"));
    }
    loglog_fit(xs, ys)
}

/// [`fit_rate`] without the three-point minimum.
pub(crate) fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("a rate fit needs matching lists of at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("rate fits need positive finite data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("rate fits need at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

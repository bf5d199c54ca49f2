//! Galerkin assembly for `-div(a ∇u) + b·∇u + c u = f` with homogeneous
//! Dirichlet data, and the reference linear solve.
//!
//! Row `i` of every matrix belongs to test function `φ_i` and column `j` to
//! trial function `φ_j`, so `(A α)_i = B[u_h, φ_i]` for `u_h = Σ α_j φ_j`.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{ElementFamily, Mesh};
use crate::quadrature::{gauss_legendre_unit, triangle_degree4};
use crate::sparse::{norm2, BandedLu, CsrMatrix};

pub type Point = [f64; 2];
type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&[f64]) -> [f64; 2] + Send + Sync>;
type TensorField = Arc<dyn Fn(&[f64]) -> [[f64; 2]; 2] + Send + Sync>;

/// Coefficients of the operator. In 1D only the leading entries of the
/// tensor and vector are read.
#[derive(Clone)]
pub struct PdeCoefficients {
    pub diffusion: TensorField,
    pub convection: VectorField,
    pub reaction: ScalarField,
    /// Analytic divergence of the convection field.
    pub convection_div: ScalarField,
    /// Whether `convection` is identically zero; skips assembling `C`.
    pub convection_free: bool,
}

impl std::fmt::Debug for PdeCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeCoefficients")
            .field("convection_free", &self.convection_free)
            .finish_non_exhaustive()
    }
}

impl PdeCoefficients {
    /// Isotropic diffusion `a·I`, constant convection `b` and reaction `c`.
    pub fn constant(a: f64, b: [f64; 2], c: f64) -> Self {
        Self {
            diffusion: Arc::new(move |_| [[a, 0.0], [0.0, a]]),
            convection: Arc::new(move |_| b),
            reaction: Arc::new(move |_| c),
            convection_div: Arc::new(|_| 0.0),
            convection_free: b == [0.0, 0.0],
        }
    }

    /// `-Δu = f`.
    pub fn poisson() -> Self {
        Self::constant(1.0, [0.0, 0.0], 0.0)
    }
}

/// Local shape functions of one element evaluated at one point.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub n: usize,
    pub values: [f64; 3],
    pub grads: [[f64; 2]; 3],
}

/// Evaluates the local shape functions of element `e` at barycentric point
/// `bary`, ordered like `mesh.element(e)`.
pub fn local_basis(mesh: &Mesh, e: usize, bary: &[f64; 3]) -> LocalBasis {
    let nodes = mesh.element(e);
    match mesh.family() {
        ElementFamily::P1Interval => {
            let len = mesh.measure(e);
            LocalBasis {
                n: 2,
                values: [bary[0], bary[1], 0.0],
                grads: [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0; 2]],
            }
        }
        ElementFamily::P2Interval => {
            let len = mesh.measure(e);
            let t = bary[1];
            LocalBasis {
                n: 3,
                values: [(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)],
                grads: [
                    [(4.0 * t - 3.0) / len, 0.0],
                    [(4.0 * t - 1.0) / len, 0.0],
                    [(4.0 - 8.0 * t) / len, 0.0],
                ],
            }
        }
        ElementFamily::P1Triangle => {
            let (p0, p1, p2) = (mesh.node(nodes[0]), mesh.node(nodes[1]), mesh.node(nodes[2]));
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let g1 = [(p2[1] - p0[1]) / det, -(p2[0] - p0[0]) / det];
            let g2 = [-(p1[1] - p0[1]) / det, (p1[0] - p0[0]) / det];
            LocalBasis {
                n: 3,
                values: *bary,
                grads: [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2],
            }
        }
    }
}

/// One quadrature point of an element: physical location, weight including
/// the element measure, and barycentric coordinates.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: Point,
    pub weight: f64,
    pub bary: [f64; 3],
}

/// Number of Gauss–Legendre points used on intervals for degree `ell`.
pub fn interval_points(ell: usize) -> usize {
    2 * ell + 1
}

/// The assembly quadrature on element `e`: `2ℓ+1` Gauss–Legendre points on
/// intervals, the six-point degree-4 rule on triangles.
pub fn element_quadrature(mesh: &Mesh, e: usize) -> Vec<QuadPoint> {
    let v = mesh.vertices(e);
    match mesh.dim() {
        1 => {
            let (a, b) = (mesh.node(v[0])[0], mesh.node(v[1])[0]);
            gauss_legendre_unit(interval_points(mesh.family().degree()))
                .into_iter()
                .map(|(t, w)| QuadPoint {
                    x: [a + t * (b - a), 0.0],
                    weight: w * (b - a),
                    bary: [1.0 - t, t, 0.0],
                })
                .collect()
        }
        _ => {
            let area = mesh.measure(e);
            let (p0, p1, p2) = (mesh.node(v[0]), mesh.node(v[1]), mesh.node(v[2]));
            triangle_degree4()
                .iter()
                .map(|&(l, w)| QuadPoint {
                    x: [
                        l[0] * p0[0] + l[1] * p1[0] + l[2] * p2[0],
                        l[0] * p0[1] + l[1] * p1[1] + l[2] * p2[1],
                    ],
                    weight: w * area,
                    bary: l,
                })
                .collect()
        }
    }
}

/// The Galerkin matrices over interior degrees of freedom.
#[derive(Debug)]
pub struct AssembledSystem {
    /// Diffusion plus reaction; symmetric for symmetric `a`.
    pub s: CsrMatrix,
    /// Convection.
    pub c: CsrMatrix,
    /// `S + C`.
    pub a: CsrMatrix,
    pub mesh: Arc<Mesh>,
    /// Quadrature points per interval, or per triangle.
    pub quadrature_points: usize,
    lu: OnceLock<BandedLu>,
}

impl AssembledSystem {
    pub fn n_dofs(&self) -> usize {
        self.a.nrows()
    }

    /// LU factors of `A`, computed on first use.
    pub fn factorization(&self) -> Result<&BandedLu> {
        if let Some(lu) = self.lu.get() {
            return Ok(lu);
        }
        let lu = BandedLu::factor(&self.a)?;
        Ok(self.lu.get_or_init(|| lu))
    }
}

fn check_well_posed(coeffs: &PdeCoefficients, dim: usize, x: &[f64]) -> Result<()> {
    let a = (coeffs.diffusion)(x);
    // smallest eigenvalue of the symmetric part bounds ξᵀaξ / |ξ|² from below
    let ellipticity = if dim == 1 {
        a[0][0]
    } else {
        let off = 0.5 * (a[0][1] + a[1][0]);
        let mean = 0.5 * (a[0][0] + a[1][1]);
        let rad = (0.25 * (a[0][0] - a[1][1]).powi(2) + off * off).sqrt();
        mean - rad
    };
    if !(ellipticity > 0.0) {
        return Err(Error::IllPosed(format!(
            "diffusion is not uniformly elliptic at {x:?} (min eigenvalue {ellipticity:e})"
        )));
    }
    let margin = (coeffs.reaction)(x) - 0.5 * (coeffs.convection_div)(x);
    if margin < -1e-12 {
        return Err(Error::IllPosed(format!("c - div(b)/2 = {margin:e} < 0 at {x:?}")));
    }
    Ok(())
}

/// Element-by-element assembly of `S`, `C` and `A = S + C`. Boundary rows
/// and columns are eliminated.
pub fn assemble(mesh: &Mesh, coeffs: &PdeCoefficients) -> Result<AssembledSystem> {
    let dim = mesh.dim();
    let n = mesh.n_dofs();
    type Local = (Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>);
    let locals: Vec<Result<Local>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let nodes = mesh.element(e);
            let mut ks = [[0.0; 3]; 3];
            let mut kc = [[0.0; 3]; 3];
            for q in element_quadrature(mesh, e) {
                let x = &q.x[..dim];
                check_well_posed(coeffs, dim, x)?;
                let lb = local_basis(mesh, e, &q.bary);
                let a = (coeffs.diffusion)(x);
                let b = (coeffs.convection)(x);
                let c = (coeffs.reaction)(x);
                for j in 0..lb.n {
                    let gj = lb.grads[j];
                    let agj = [a[0][0] * gj[0] + a[0][1] * gj[1], a[1][0] * gj[0] + a[1][1] * gj[1]];
                    let bgj = if dim == 1 {
                        b[0] * gj[0]
                    } else {
                        b[0] * gj[0] + b[1] * gj[1]
                    };
                    for i in 0..lb.n {
                        let gi = lb.grads[i];
                        let diff = if dim == 1 {
                            agj[0] * gi[0]
                        } else {
                            agj[0] * gi[0] + agj[1] * gi[1]
                        };
                        ks[i][j] += q.weight * (diff + c * lb.values[j] * lb.values[i]);
                        kc[i][j] += q.weight * bgj * lb.values[i];
                    }
                }
            }
            let mut ts = Vec::new();
            let mut tc = Vec::new();
            for (i, &ni) in nodes.iter().enumerate() {
                let Some(di) = mesh.dof_of_node(ni) else { continue };
                for (j, &nj) in nodes.iter().enumerate() {
                    let Some(dj) = mesh.dof_of_node(nj) else { continue };
                    ts.push((di, dj, ks[i][j]));
                    if !coeffs.convection_free {
                        tc.push((di, dj, kc[i][j]));
                    }
                }
            }
            Ok((ts, tc))
        })
        .collect();

    let mut ts = Vec::new();
    let mut tc = Vec::new();
    for local in locals {
        let (s, c) = local?;
        ts.extend(s);
        tc.extend(c);
    }
    let s = CsrMatrix::from_triplets(n, n, &ts);
    let c = CsrMatrix::from_triplets(n, n, &tc);
    let a = s.add(&c);
    let quadrature_points = match mesh.dim() {
        1 => interval_points(mesh.family().degree()),
        _ => 6,
    };
    Ok(AssembledSystem {
        s,
        c,
        a,
        mesh: Arc::new(mesh.clone()),
        quadrature_points,
        lu: OnceLock::new(),
    })
}

/// Precomputed load-vector quadrature for one mesh: every quadrature point
/// with the weighted basis values it contributes to each interior dof.
#[derive(Debug, Clone)]
pub struct LoadAssembler {
    dim: usize,
    n_dofs: usize,
    points: Vec<Point>,
    /// `(point index, dof, weight · φ_dof(point))`
    contributions: Vec<(usize, usize, f64)>,
}

impl LoadAssembler {
    pub fn new(mesh: &Mesh) -> Self {
        let mut points = Vec::new();
        let mut contributions = Vec::new();
        for e in 0..mesh.n_elements() {
            let nodes = mesh.element(e);
            for q in element_quadrature(mesh, e) {
                let lb = local_basis(mesh, e, &q.bary);
                let p = points.len();
                points.push(q.x);
                for (k, &node) in nodes.iter().enumerate() {
                    if let Some(d) = mesh.dof_of_node(node) {
                        contributions.push((p, d, q.weight * lb.values[k]));
                    }
                }
            }
        }
        Self {
            dim: mesh.dim(),
            n_dofs: mesh.n_dofs(),
            points,
            contributions,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn assemble<F: Fn(&[f64]) -> f64 + ?Sized>(&self, f: &F) -> Vec<f64> {
        let values: Vec<f64> = self.points.iter().map(|p| f(&p[..self.dim])).collect();
        let mut load = vec![0.0; self.n_dofs];
        for &(p, d, w) in &self.contributions {
            load[d] += w * values[p];
        }
        load
    }
}

/// `F_j = ∫ f φ_j` with the assembly quadrature.
pub fn assemble_load<F: Fn(&[f64]) -> f64 + ?Sized>(mesh: &Mesh, f: &F) -> Vec<f64> {
    LoadAssembler::new(mesh).assemble(f)
}

/// Solves `(S + C) α = F` directly.
pub fn solve_reference(system: &AssembledSystem, load: &[f64]) -> Result<Vec<f64>> {
    if load.len() != system.n_dofs() {
        return Err(crate::error::invalid(format!(
            "load has length {}, system has {} dofs",
            load.len(),
            system.n_dofs()
        )));
    }
    let lu = system.factorization()?;
    let mut x = lu.solve(load);
    // one step of iterative refinement keeps the residual at roundoff level
    let ax = system.a.mul_vec(&x);
    let r: Vec<f64> = load.iter().zip(&ax).map(|(f, v)| f - v).collect();
    if norm2(&r) > 1e-14 * norm2(load) {
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    }
    Ok(x)
}

/// Value and gradient of global basis function `dof` at `x`.
pub fn basis_eval(mesh: &Mesh, dof: usize, x: &[f64]) -> Result<(f64, Point)> {
    let loc = mesh.locate(x).ok_or_else(|| Error::OutOfDomain { point: x.to_vec() })?;
    let node = mesh.node_of_dof(dof);
    let nodes = mesh.element(loc.element);
    match nodes.iter().position(|&n| n == node) {
        Some(k) => {
            let lb = local_basis(mesh, loc.element, &loc.bary);
            Ok((lb.values[k], lb.grads[k]))
        }
        None => Ok((0.0, [0.0; 2])),
    }
}

/// `Σ_k coeffs_k φ_k(x)` and its gradient.
pub fn eval_expansion(mesh: &Mesh, coeffs: &[f64], x: &[f64]) -> Result<(f64, Point)> {
    let loc = mesh.locate(x).ok_or_else(|| Error::OutOfDomain { point: x.to_vec() })?;
    Ok(eval_on_element(mesh, coeffs, loc.element, &loc.bary))
}

/// Expansion value and gradient on a known element.
pub fn eval_on_element(mesh: &Mesh, coeffs: &[f64], e: usize, bary: &[f64; 3]) -> (f64, Point) {
    let lb = local_basis(mesh, e, bary);
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for (k, &node) in mesh.element(e).iter().enumerate() {
        if let Some(d) = mesh.dof_of_node(node) {
            v += coeffs[d] * lb.values[k];
            g[0] += coeffs[d] * lb.grads[k][0];
            g[1] += coeffs[d] * lb.grads[k][1];
        }
    }
    (v, g)
}

/// `B[u_h, φ_i] − ℓ(φ_i)` for every dof `i`, integrating the forms
/// directly on `u_h = Σ α_k φ_k` instead of going through `A`.
pub fn bilinear_residual<F: Fn(&[f64]) -> f64 + ?Sized>(
    mesh: &Mesh,
    coeffs: &PdeCoefficients,
    alpha: &[f64],
    f: &F,
) -> Vec<f64> {
    let dim = mesh.dim();
    let mut r = vec![0.0; mesh.n_dofs()];
    for e in 0..mesh.n_elements() {
        for q in element_quadrature(mesh, e) {
            let x = &q.x[..dim];
            let (u, gu) = eval_on_element(mesh, alpha, e, &q.bary);
            let a = (coeffs.diffusion)(x);
            let b = (coeffs.convection)(x);
            let c = (coeffs.reaction)(x);
            let agu = [a[0][0] * gu[0] + a[0][1] * gu[1], a[1][0] * gu[0] + a[1][1] * gu[1]];
            let bgu = b[0] * gu[0] + if dim == 2 { b[1] * gu[1] } else { 0.0 };
            let fx = f(x);
            let lb = local_basis(mesh, e, &q.bary);
            for (k, &node) in mesh.element(e).iter().enumerate() {
                let Some(i) = mesh.dof_of_node(node) else { continue };
                let g = lb.grads[k];
                let diff = agu[0] * g[0] + if dim == 2 { agu[1] * g[1] } else { 0.0 };
                r[i] += q.weight * (diff + (bgu + c * u - fx) * lb.values[k]);
            }
        }
    }
    r
}

/// `B[u_h, u_h]` by quadrature of the bilinear form.
pub fn bilinear_energy(mesh: &Mesh, coeffs: &PdeCoefficients, alpha: &[f64]) -> f64 {
    let r = bilinear_residual(mesh, coeffs, alpha, &|_: &[f64]| 0.0);
    r.iter().zip(alpha).map(|(a, b)| a * b).sum()
}

//! Conforming Galerkin discretization of `-ε²Δu + κ²u = f` with homogeneous
//! Dirichlet conditions.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, CsrMatrix, SolveStats};
use crate::mesh::Mesh;
use crate::poly::basis::scalar_tabulation;
use crate::poly::field::l2_project_local;
use crate::poly::quadrature::gauss_legendre;
use crate::poly::{bilinear_degree, data_degree, lagrange_element, Conformity, ScalarField};

pub type ScalarFn = Arc<dyn Fn(&[f64; 2]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64; 2]) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
pub enum Source {
    Function(ScalarFn),
    /// Piecewise polynomial on the mesh the problem is posed on.
    Field(ScalarField),
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Function(_) => write!(f, "Source::Function"),
            Source::Field(s) => write!(f, "Source::Field(degree {})", s.degree),
        }
    }
}

impl Source {
    pub fn function(f: impl Fn(&[f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Source::Function(Arc::new(f))
    }

    pub fn value(&self, mesh: &Mesh, e: usize, xh: &[f64; 2]) -> f64 {
        match self {
            Source::Function(f) => f(&mesh.maps[e].map(xh)),
            Source::Field(s) => s.value(e, xh),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Function(_) => false,
            Source::Field(s) => s.coeffs.iter().all(|&c| c == 0.0),
        }
    }

    /// Polynomial degree of the data, if it is a piecewise polynomial.
    pub fn polynomial_degree(&self) -> Option<usize> {
        match self {
            Source::Function(_) => None,
            Source::Field(s) => Some(s.degree),
        }
    }

    /// Moves a `Field` source to a uniformly refined mesh.
    pub fn transfer(&self, coarse: &Mesh, fine: &Mesh, parent: &[usize]) -> Result<Source> {
        match self {
            Source::Function(f) => Ok(Source::Function(f.clone())),
            Source::Field(s) => Ok(Source::Field(prolongate(s, coarse, fine, parent)?)),
        }
    }
}

/// Exact copy of a coarse piecewise polynomial on a refined mesh.
pub fn prolongate(s: &ScalarField, coarse: &Mesh, fine: &Mesh, parent: &[usize]) -> Result<ScalarField> {
    let mut out = l2_project_local(
        |c, xh| {
            let pe = parent[c];
            let x = fine.maps[c].map(xh);
            s.value(pe, &coarse.maps[pe].inverse_map(&x))
        },
        fine,
        s.degree,
        2 * s.degree + 2,
    )?;
    out.conformity = s.conformity;
    Ok(out)
}

#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarFn,
    pub grad: VectorFn,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExactSolution")
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub epsilon: f64,
    pub kappa: f64,
    pub source: Source,
    pub exact: Option<ExactSolution>,
    /// Quadrature degree for integrands involving a non-polynomial source.
    pub source_quad_degree: Option<usize>,
}

impl ProblemSpec {
    pub fn new(epsilon: f64, kappa: f64, source: Source) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be non-negative, got {kappa}")));
        }
        Ok(ProblemSpec {
            epsilon,
            kappa,
            source,
            exact: None,
            source_quad_degree: None,
        })
    }

    pub fn with_exact(mut self, u: ScalarFn, grad: VectorFn) -> Self {
        self.exact = Some(ExactSolution { u, grad });
        self
    }

    /// Quadrature degree for the product of the source with a degree-`q` polynomial.
    pub fn source_degree(&self, q: usize) -> usize {
        match self.source.polynomial_degree() {
            Some(d) => d + q,
            None => self.source_quad_degree.unwrap_or(data_degree(q)),
        }
    }
}

/// Quadrature degree for every integral of the source against degree-`p`
/// data: load vector, patch right-hand sides and `Π_p f`. Sharing one rule
/// keeps Galerkin orthogonality against hat functions exact at the discrete level.
pub fn data_rule_degree(spec: &ProblemSpec, p: usize) -> usize {
    bilinear_degree(p).max(spec.source_degree(p + 1))
}

/// Global numbering of Lagrange nodes and the Dirichlet mask.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub dim: usize,
    pub degree: usize,
    pub n_dofs: usize,
    /// Global DOF of each local node (node order of the Lagrange element).
    pub element_dofs: Vec<Vec<usize>>,
    pub dirichlet: Vec<bool>,
    /// Position of each DOF among the unknowns, `None` if constrained.
    pub free_index: Vec<Option<usize>>,
    pub n_free: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, degree: usize) -> Result<Self> {
        let el = lagrange_element(mesh.dim, degree)?;
        let nloc = mesh.dim + 1;
        let mut index: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
        let mut dirichlet = Vec::new();
        let mut element_dofs = Vec::with_capacity(mesh.n_elements());
        for e in 0..mesh.n_elements() {
            let verts = mesh.element_vertices(e);
            let mut dofs = Vec::with_capacity(el.len());
            for m in &el.multi {
                let mut key: Vec<(usize, usize)> =
                    (0..nloc).filter(|&l| m[l] > 0).map(|l| (verts[l], m[l])).collect();
                key.sort_unstable();
                let id = match index.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = dirichlet.len();
                        let on_boundary = match key.len() {
                            1 => mesh.boundary_vertex[key[0].0],
                            s if s == mesh.dim => {
                                let missing = (0..nloc).find(|&l| m[l] == 0).expect("face node");
                                mesh.faces[mesh.element_faces[e][missing]].is_boundary()
                            }
                            _ => false,
                        };
                        dirichlet.push(on_boundary);
                        index.insert(key, id);
                        id
                    }
                };
                dofs.push(id);
            }
            element_dofs.push(dofs);
        }
        let mut free_index = vec![None; dirichlet.len()];
        let mut n_free = 0;
        for (i, &d) in dirichlet.iter().enumerate() {
            if !d {
                free_index[i] = Some(n_free);
                n_free += 1;
            }
        }
        Ok(DofMap {
            dim: mesh.dim,
            degree,
            n_dofs: dirichlet.len(),
            element_dofs,
            dirichlet,
            free_index,
            n_free,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dofmap: DofMap,
}

/// Lagrange basis values and reference gradients on a quadrature rule.
struct LagrangeTab {
    weights: Vec<f64>,
    points: Vec<[f64; 2]>,
    val: Vec<Vec<f64>>,
    grad: Vec<Vec<[f64; 2]>>,
}

fn lagrange_tab(dim: usize, p: usize, quad_degree: usize) -> Result<LagrangeTab> {
    let el = lagrange_element(dim, p)?;
    let tab = scalar_tabulation(dim, p, quad_degree)?;
    let n = el.len();
    let c = &el.nodal_to_modal;
    let mut out = LagrangeTab {
        weights: tab.rule.weights.clone(),
        points: tab.rule.points.clone(),
        val: Vec::new(),
        grad: Vec::new(),
    };
    for q in 0..tab.rule.len() {
        let mut v = vec![0.0; n];
        let mut g = vec![[0.0; 2]; n];
        for k in 0..n {
            for j in 0..n {
                let cjk = c[(j, k)];
                v[k] += cjk * tab.val[q][j];
                g[k][0] += cjk * tab.grad[q][j][0];
                g[k][1] += cjk * tab.grad[q][j][1];
            }
        }
        out.val.push(v);
        out.grad.push(g);
    }
    Ok(out)
}

/// Element matrix `ε²(∇φ_j,∇φ_i) + κ²(φ_j,φ_i)` and load `(f,φ_i)`.
fn element_system(
    mesh: &Mesh,
    e: usize,
    spec: &ProblemSpec,
    bil: &LagrangeTab,
    dat: &LagrangeTab,
) -> (Vec<f64>, Vec<f64>) {
    let n = bil.val[0].len();
    let map = &mesh.maps[e];
    let det = map.abs_det();
    let (e2, k2) = (spec.epsilon * spec.epsilon, spec.kappa * spec.kappa);
    let mut a = vec![0.0; n * n];
    for q in 0..bil.weights.len() {
        let w = bil.weights[q] * det;
        let g: Vec<[f64; 2]> = bil.grad[q].iter().map(|g| map.grad(g)).collect();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] += w * (e2 * (g[i][0] * g[j][0] + g[i][1] * g[j][1]) + k2 * bil.val[q][i] * bil.val[q][j]);
            }
        }
    }
    let mut b = vec![0.0; n];
    for q in 0..dat.weights.len() {
        let fx = spec.source.value(mesh, e, &dat.points[q]);
        let w = dat.weights[q] * det * fx;
        for i in 0..n {
            b[i] += w * dat.val[q][i];
        }
    }
    (a, b)
}

pub fn assemble(mesh: &Mesh, p: usize, spec: &ProblemSpec) -> Result<LinearSystem> {
    if p == 0 {
        return Err(Error::invalid("conforming FEM needs p >= 1"));
    }
    let dofmap = DofMap::new(mesh, p)?;
    let bil = lagrange_tab(mesh.dim, p, bilinear_degree(p))?;
    let dat = lagrange_tab(mesh.dim, p, data_rule_degree(spec, p))?;
    let locals: Vec<(Vec<f64>, Vec<f64>)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| element_system(mesh, e, spec, &bil, &dat))
        .collect();
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; dofmap.n_free];
    for (e, (a, b)) in locals.iter().enumerate() {
        let dofs = &dofmap.element_dofs[e];
        let n = dofs.len();
        for i in 0..n {
            let Some(fi) = dofmap.free_index[dofs[i]] else { continue };
            rhs[fi] += b[i];
            for j in 0..n {
                if let Some(fj) = dofmap.free_index[dofs[j]] {
                    triplets.push((fi, fj, a[i * n + j]));
                }
            }
        }
    }
    Ok(LinearSystem {
        matrix: CsrMatrix::from_triplets(dofmap.n_free, &triplets),
        rhs,
        dofmap,
    })
}

#[derive(Clone, Debug)]
pub struct FemSolution {
    pub u_h: ScalarField,
    /// Values at all global nodes (zero at constrained ones).
    pub nodal: Vec<f64>,
    pub stats: SolveStats,
    pub dofmap: DofMap,
}

/// Builds the modal field from global nodal values.
pub fn field_from_nodal(dofmap: &DofMap, nodal: &[f64], conformity: Conformity) -> Result<ScalarField> {
    let el = lagrange_element(dofmap.dim, dofmap.degree)?;
    let n = el.len();
    let ne = dofmap.element_dofs.len();
    let mut coeffs = vec![0.0; n * ne];
    for (e, dofs) in dofmap.element_dofs.iter().enumerate() {
        let loc: Vec<f64> = dofs.iter().map(|&d| nodal[d]).collect();
        for j in 0..n {
            coeffs[e * n + j] = (0..n).map(|k| el.nodal_to_modal[(j, k)] * loc[k]).sum();
        }
    }
    Ok(ScalarField {
        dim: dofmap.dim,
        degree: dofmap.degree,
        n_local: n,
        coeffs,
        conformity,
    })
}

pub fn solve(system: &LinearSystem) -> Result<FemSolution> {
    let dm = &system.dofmap;
    let (x, stats) = solve_spd(&system.matrix, &system.rhs)?;
    if system.matrix.n > 0 && !(stats.relative_residual <= 1e-10) {
        return Err(Error::SolverFailure(format!(
            "relative residual {:e} after {} ({} iterations)",
            stats.relative_residual, stats.method, stats.iterations
        )));
    }
    let mut nodal = vec![0.0; dm.n_dofs];
    for (i, fi) in dm.free_index.iter().enumerate() {
        if let Some(fi) = fi {
            nodal[i] = x[*fi];
        }
    }
    let u_h = field_from_nodal(dm, &nodal, Conformity::H10)?;
    Ok(FemSolution {
        u_h,
        nodal,
        stats,
        dofmap: dm.clone(),
    })
}

pub fn solve_problem(mesh: &Mesh, p: usize, spec: &ProblemSpec) -> Result<FemSolution> {
    solve(&assemble(mesh, p, spec)?)
}

/// Largest `|(f,φ_i) - a(u_h,φ_i)|` over free basis functions, relative to
/// the largest `|(f,φ_i)|` (or to the largest `|a(u_h,φ_i)|` when f = 0).
pub fn galerkin_residual(mesh: &Mesh, spec: &ProblemSpec, u_h: &ScalarField) -> Result<f64> {
    let p = u_h.degree;
    let dofmap = DofMap::new(mesh, p)?;
    let bil = lagrange_tab(mesh.dim, p, bilinear_degree(p))?;
    let dat = lagrange_tab(mesh.dim, p, data_rule_degree(spec, p))?;
    let tab = scalar_tabulation(mesh.dim, p, bilinear_degree(p))?;
    let (e2, k2) = (spec.epsilon.powi(2), spec.kappa.powi(2));
    let mut load = vec![0.0; dofmap.n_dofs];
    let mut form = vec![0.0; dofmap.n_dofs];
    for e in 0..mesh.n_elements() {
        let map = &mesh.maps[e];
        let det = map.abs_det();
        let c = u_h.element(e);
        let (_, b) = element_system(mesh, e, spec, &bil, &dat);
        for q in 0..bil.weights.len() {
            let mut uv = 0.0;
            let mut ug = [0.0; 2];
            for (j, cj) in c.iter().enumerate() {
                uv += cj * tab.val[q][j];
                ug[0] += cj * tab.grad[q][j][0];
                ug[1] += cj * tab.grad[q][j][1];
            }
            let ug = map.grad(&ug);
            for (i, &d) in dofmap.element_dofs[e].iter().enumerate() {
                let g = map.grad(&bil.grad[q][i]);
                form[d] += bil.weights[q] * det * (e2 * (ug[0] * g[0] + ug[1] * g[1]) + k2 * uv * bil.val[q][i]);
            }
        }
        for (i, &d) in dofmap.element_dofs[e].iter().enumerate() {
            load[d] += b[i];
        }
    }
    let (mut res, mut scale_f, mut scale_a) = (0.0f64, 0.0f64, 0.0f64);
    for i in (0..dofmap.n_dofs).filter(|&i| !dofmap.dirichlet[i]) {
        res = res.max((load[i] - form[i]).abs());
        scale_f = scale_f.max(load[i].abs());
        scale_a = scale_a.max(form[i].abs());
    }
    let scale = if scale_f > 0.0 { scale_f } else { scale_a };
    Ok(if scale > 0.0 { res / scale } else { res })
}

/// `ε²‖∇v‖²_K + κ²‖v‖²_K` for a piecewise polynomial.
pub fn energy_norm_sq_element(v: &ScalarField, mesh: &Mesh, e: usize, spec: &ProblemSpec) -> Result<f64> {
    let tab = scalar_tabulation(mesh.dim, v.degree, 2 * v.degree)?;
    let map = &mesh.maps[e];
    let c = v.element(e);
    let mut s = 0.0;
    for q in 0..tab.rule.len() {
        let mut g = [0.0; 2];
        for (j, cj) in c.iter().enumerate() {
            g[0] += cj * tab.grad[q][j][0];
            g[1] += cj * tab.grad[q][j][1];
        }
        let g = map.grad(&g);
        s += tab.rule.weights[q] * (g[0] * g[0] + g[1] * g[1]);
    }
    let grad_sq = s * map.abs_det();
    Ok(spec.epsilon.powi(2) * grad_sq + spec.kappa.powi(2) * v.l2_norm_sq_element(mesh, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    Exact,
    Reference,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub mode: ErrorMode,
    /// `|||u - u_h|||²_K` per element.
    pub per_element: Vec<f64>,
    pub total: f64,
    /// Reference mode: difference between the one- and two-level reference errors.
    pub bias: Option<f64>,
}

/// Adaptive Gauss integration on `[a, b]` by bisection.
fn adaptive_1d(g: &dyn Fn(f64) -> f64, a: f64, b: f64, nodes: &(Vec<f64>, Vec<f64>), tol: f64, depth: usize) -> f64 {
    let rule = |l: f64, r: f64| -> f64 {
        nodes.0.iter().zip(&nodes.1).map(|(x, w)| w * (r - l) * g(l + (r - l) * x)).sum()
    };
    let whole = rule(a, b);
    let m = 0.5 * (a + b);
    let (left, right) = (rule(a, m), rule(m, b));
    let refined = left + right;
    let diff = (whole - refined).abs();
    if depth >= 40 || diff <= 1e-13 * refined.abs() || diff <= tol {
        return refined;
    }
    adaptive_1d(g, a, m, nodes, 0.5 * tol, depth + 1) + adaptive_1d(g, m, b, nodes, 0.5 * tol, depth + 1)
}

const GRADING_LEVELS: usize = 40;

fn exact_error_element(mesh: &Mesh, u_h: &ScalarField, spec: &ProblemSpec, ex: &ExactSolution, e: usize) -> f64 {
    let map = &mesh.maps[e];
    let (e2, k2) = (spec.epsilon.powi(2), spec.kappa.powi(2));
    let integrand = |xh: &[f64; 2]| -> f64 {
        let x = map.map(xh);
        let du = (ex.u)(&x) - u_h.value(e, xh);
        let gu = (ex.grad)(&x);
        let gh = u_h.grad(mesh, e, xh);
        let dg = [gu[0] - gh[0], if mesh.dim == 1 { 0.0 } else { gu[1] - gh[1] }];
        e2 * (dg[0] * dg[0] + dg[1] * dg[1]) + k2 * du * du
    };
    if mesh.dim == 1 {
        let nodes = gauss_legendre(u_h.degree + 6);
        // absolute tolerance relative to the local energy of u and u_h
        let scale: f64 = nodes
            .0
            .iter()
            .zip(&nodes.1)
            .map(|(&t, w)| {
                let xh = [t, 0.0];
                let x = map.map(&xh);
                let (u, g, uh, gh) = ((ex.u)(&x), (ex.grad)(&x), u_h.value(e, &xh), u_h.grad(mesh, e, &xh));
                w * (e2 * (g[0] * g[0] + gh[0] * gh[0]) + k2 * (u * u + uh * uh))
            })
            .sum();
        // pieces graded geometrically towards both end points, where layers sit
        let mut cuts: Vec<f64> = (1..=GRADING_LEVELS).map(|k| 0.5f64.powi(k as i32)).collect();
        cuts.extend((1..GRADING_LEVELS).rev().map(|k| 1.0 - 0.5f64.powi(k as i32)));
        cuts.insert(0, 0.0);
        cuts.sort_by(f64::total_cmp);
        cuts.push(1.0);
        let tol = 1e-15 * scale + 1e-300;
        let total: f64 = cuts
            .windows(2)
            .map(|w| adaptive_1d(&|t| integrand(&[t, 0.0]), w[0], w[1], &nodes, tol * (w[1] - w[0]), 0))
            .sum();
        map.abs_det() * total
    } else {
        let rule = crate::poly::quadrature(2, (2 * u_h.degree + 12).max(18)).expect("2D rule");
        map.abs_det() * rule.integrate(integrand)
    }
}

fn reference_level_error(
    mesh: &Mesh,
    u_h: &ScalarField,
    spec: &ProblemSpec,
    levels: usize,
) -> Result<Vec<f64>> {
    let mut fine = mesh.clone();
    let mut ancestor: Vec<usize> = (0..mesh.n_elements()).collect();
    let mut source = spec.source.clone();
    for _ in 0..levels {
        let (next, parent) = fine.refine_uniform()?;
        source = source.transfer(&fine, &next, &parent)?;
        ancestor = parent.iter().map(|&c| ancestor[c]).collect();
        fine = next;
    }
    let mut fine_spec = spec.clone();
    fine_spec.source = source;
    let q = u_h.degree + 1;
    let reference = solve_problem(&fine, q, &fine_spec)?.u_h;
    let tab = scalar_tabulation(mesh.dim, q, 2 * q)?;
    let (e2, k2) = (spec.epsilon.powi(2), spec.kappa.powi(2));
    let contributions: Vec<(usize, f64)> = (0..fine.n_elements())
        .into_par_iter()
        .map(|c| {
            let pe = ancestor[c];
            let map = &fine.maps[c];
            let mut s = 0.0;
            for (qi, (xh, w)) in tab.rule.iter().enumerate() {
                let x = map.map(xh);
                let ph = mesh.maps[pe].inverse_map(&x);
                let mut rv = 0.0;
                let mut rg = [0.0; 2];
                for (j, cj) in reference.element(c).iter().enumerate() {
                    rv += cj * tab.val[qi][j];
                    rg[0] += cj * tab.grad[qi][j][0];
                    rg[1] += cj * tab.grad[qi][j][1];
                }
                let rg = map.grad(&rg);
                let hv = u_h.value(pe, &ph);
                let hg = u_h.grad(mesh, pe, &ph);
                let dg = [rg[0] - hg[0], rg[1] - hg[1]];
                s += w * (e2 * (dg[0] * dg[0] + dg[1] * dg[1]) + k2 * (rv - hv).powi(2));
            }
            (pe, s * map.abs_det())
        })
        .collect();
    let mut per = vec![0.0; mesh.n_elements()];
    for (pe, s) in contributions {
        per[pe] += s;
    }
    Ok(per)
}

pub fn error_energy(mesh: &Mesh, u_h: &ScalarField, spec: &ProblemSpec, mode: ErrorMode) -> Result<ErrorReport> {
    match mode {
        ErrorMode::Exact => {
            let ex = spec.exact.as_ref().ok_or(Error::MissingExactSolution)?;
            let per: Vec<f64> = (0..mesh.n_elements())
                .into_par_iter()
                .map(|e| exact_error_element(mesh, u_h, spec, ex, e))
                .collect();
            let total = per.iter().sum::<f64>().sqrt();
            Ok(ErrorReport { mode, per_element: per, total, bias: None })
        }
        ErrorMode::Reference => {
            let one = reference_level_error(mesh, u_h, spec, 1)?;
            let two = reference_level_error(mesh, u_h, spec, 2)?;
            let t1 = one.iter().sum::<f64>().sqrt();
            let t2 = two.iter().sum::<f64>().sqrt();
            Ok(ErrorReport {
                mode,
                per_element: two,
                total: t2,
                bias: Some((t2 - t1).abs()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{structured_triangle_mesh, uniform_interval_mesh};
    use std::f64::consts::PI;

    fn zero_spec(eps: f64, kappa: f64) -> ProblemSpec {
        ProblemSpec::new(eps, kappa, Source::function(|_| 0.0)).unwrap()
    }

    #[test]
    fn stiffness_is_tridiagonal() {
        let m = uniform_interval_mesh(5, (0.0, 1.0)).unwrap();
        let s = assemble(&m, 1, &zero_spec(1.0, 0.0)).unwrap();
        let h = 0.2;
        let a = &s.matrix;
        assert_eq!(a.n, 4);
        let d = s.dofmap.free_index[s.dofmap.element_dofs[1][1]].unwrap();
        assert!((a.get(d, d) - 2.0 / h).abs() < 1e-12);
        for i in 0..a.n {
            for (j, v) in a.row(i) {
                if j != i {
                    assert!((v + 1.0 / h).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mass_rows_sum_to_h() {
        let m = uniform_interval_mesh(6, (0.0, 1.0)).unwrap();
        // ε is tiny so the matrix is effectively the mass matrix.
        let s = assemble(&m, 1, &zero_spec(1e-12, 1.0)).unwrap();
        let h = 1.0 / 6.0;
        // rows of interior DOFs away from the boundary
        for e in 1..4 {
            let d = s.dofmap.free_index[s.dofmap.element_dofs[e][1]].unwrap();
            let sum: f64 = s.matrix.row(d).map(|(_, v)| v).sum();
            assert!((sum - h).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_source_gives_zero() {
        let m = structured_triangle_mesh(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let sol = solve_problem(&m, 2, &zero_spec(1.0, 1.0)).unwrap();
        assert!(sol.u_h.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn single_element_is_trivial() {
        let m = uniform_interval_mesh(1, (0.0, 1.0)).unwrap();
        let spec = ProblemSpec::new(1.0, 1.0, Source::function(|_| 1.0)).unwrap();
        let s = assemble(&m, 1, &spec).unwrap();
        assert_eq!(s.matrix.n, 0);
        let sol = solve(&s).unwrap();
        assert!(sol.u_h.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn h10_conformity_of_solution() {
        let m = structured_triangle_mesh(3, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        for p in 1..=3 {
            let spec = ProblemSpec::new(0.3, 1.0, Source::function(|x| 1.0 + x[0] * x[1])).unwrap();
            let sol = solve_problem(&m, p, &spec).unwrap();
            let (jump, bnd) = sol.u_h.trace_defects(&m);
            assert!(jump < 1e-12 && bnd < 1e-12, "p {p}: {jump} {bnd}");
            assert!(galerkin_residual(&m, &spec, &sol.u_h).unwrap() < 1e-10);
            assert!(s_sym(&assemble(&m, p, &spec).unwrap().matrix));
        }
    }

    fn s_sym(a: &CsrMatrix) -> bool {
        a.asymmetry() < 1e-13
    }

    #[test]
    fn energy_norm_examples() {
        let m = uniform_interval_mesh(1, (0.0, 1.0)).unwrap();
        let v = crate::poly::l2_project(|x| x[0], &m, 1, 2).unwrap();
        let e = energy_norm_sq_element(&v, &m, 0, &zero_spec(1.0, 0.0)).unwrap();
        assert!((e - 1.0).abs() < 1e-13);
        let e = energy_norm_sq_element(&v, &m, 0, &zero_spec(1.0, 1.0)).unwrap();
        assert!((e - 4.0 / 3.0).abs() < 1e-13);
        let c = crate::poly::l2_project(|_| 2.0, &m, 1, 2).unwrap();
        let e = energy_norm_sq_element(&c, &m, 0, &zero_spec(1.0, 3.0)).unwrap();
        assert!((e - 36.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_solution_converges_at_rate_p() {
        for p in 1..=2 {
            let (eps, kap) = (1.0, 1.0);
            let mut errs = Vec::new();
            for n in [4, 8, 16, 32] {
                let m = uniform_interval_mesh(n, (0.0, 1.0)).unwrap();
                let spec = ProblemSpec::new(eps, kap, Source::function(move |x| (eps * eps * PI * PI + kap * kap) * (PI * x[0]).sin()))
                    .unwrap()
                    .with_exact(Arc::new(|x| (PI * x[0]).sin()), Arc::new(|x| [PI * (PI * x[0]).cos(), 0.0]));
                let sol = solve_problem(&m, p, &spec).unwrap();
                errs.push(error_energy(&m, &sol.u_h, &spec, ErrorMode::Exact).unwrap().total);
            }
            let rate = (errs[2] / errs[3]).log2();
            assert!(rate >= p as f64 - 0.1, "p {p} rate {rate}");
        }
    }

    #[test]
    fn interpolated_solution_has_zero_error() {
        let m = uniform_interval_mesh(4, (0.0, 1.0)).unwrap();
        // u = x(1-x) is in V_h for p = 2; f = 2ε² + κ² u
        let spec = ProblemSpec::new(0.5, 2.0, Source::function(|x| 2.0 * 0.25 + 4.0 * x[0] * (1.0 - x[0])))
            .unwrap()
            .with_exact(Arc::new(|x| x[0] * (1.0 - x[0])), Arc::new(|x| [1.0 - 2.0 * x[0], 0.0]));
        let sol = solve_problem(&m, 2, &spec).unwrap();
        let err = error_energy(&m, &sol.u_h, &spec, ErrorMode::Exact).unwrap();
        assert!(err.total < 1e-10);
    }

    #[test]
    fn missing_exact_solution() {
        let m = uniform_interval_mesh(4, (0.0, 1.0)).unwrap();
        let spec = zero_spec(1.0, 1.0);
        let sol = solve_problem(&m, 1, &spec).unwrap();
        assert!(matches!(error_energy(&m, &sol.u_h, &spec, ErrorMode::Exact), Err(Error::MissingExactSolution)));
    }

    #[test]
    fn reference_mode_matches_exact() {
        let m = uniform_interval_mesh(8, (0.0, 1.0)).unwrap();
        let spec = ProblemSpec::new(1.0, 1.0, Source::function(|x| (PI * PI + 1.0) * (PI * x[0]).sin()))
            .unwrap()
            .with_exact(Arc::new(|x| (PI * x[0]).sin()), Arc::new(|x| [PI * (PI * x[0]).cos(), 0.0]));
        let sol = solve_problem(&m, 1, &spec).unwrap();
        let ex = error_energy(&m, &sol.u_h, &spec, ErrorMode::Exact).unwrap();
        let re = error_energy(&m, &sol.u_h, &spec, ErrorMode::Reference).unwrap();
        assert!(re.total <= ex.total * (1.0 + 1e-12));
        assert!((re.total - ex.total).abs() < 0.05 * ex.total);
        assert!(re.bias.unwrap() >= 0.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(ProblemSpec::new(0.0, 1.0, Source::function(|_| 0.0)).is_err());
        assert!(ProblemSpec::new(1.0, -1.0, Source::function(|_| 0.0)).is_err());
    }
}

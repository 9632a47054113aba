//! Weighted equilibrated flux and potential reconstruction.
//!
//! For every vertex `a` the patch problem minimizes
//! `w_a²‖εψ_a∇u_h + ε⁻¹σ‖² + ‖κ(Π_p(ψ_a u_h) − φ)‖²` over `σ ∈ V_h^a`,
//! `φ ∈ Q_h^a` subject to `div σ + κ²φ = Π_p(fψ_a) − ε²∇u_h·∇ψ_a`. The
//! unknowns are `τ = σ/ε` and `γ = φ − Π_p(ψ_a u_h)`, which turns the
//! Euler-Lagrange equations into the symmetric system
//!
//! ```text
//! [ w²M   -εBᵀ ] [τ]   [ -εw²F ]
//! [ -εB  -κ²Mq ] [γ] = [ -G    ]
//! ```
//!
//! When `κ = 0` (or `κ` is negligible) `γ` is dropped, the multiplier of the
//! divergence constraint takes its place and, for interior vertices, one
//! scalar multiplier removes the constant null space.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
pub use crate::fem::data_rule_degree;
use crate::fem::ProblemSpec;
use crate::mesh::{Mesh, VertexPatch};
use crate::poly::basis::{barycentric_grads, num_monomials, scalar_tabulation, Tabulation};
use crate::poly::field::face_dof_sign;
use crate::poly::rtn::{rtn_basis, rtn_tabulation, RtnTabulation};
use crate::poly::{bilinear_degree, l2_project_local, Conformity, FluxField, ScalarField};

/// `w_a = min{1, C_* sqrt(ε/(κ h_ωa))}`, and 1 when `κ = 0`.
pub fn patch_weight(patch: &VertexPatch, spec: &ProblemSpec, c_star: f64) -> f64 {
    weight(spec.epsilon, spec.kappa, patch.diameter, c_star)
}

pub(crate) fn weight(eps: f64, kappa: f64, h: f64, c_star: f64) -> f64 {
    if kappa == 0.0 {
        return 1.0;
    }
    (c_star * (eps / (kappa * h)).sqrt()).min(1.0)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NeumannCheck {
    /// `(fψ_a,1)_ωa − ε²(∇u_h,∇ψ_a)_ωa − κ²(u_h,ψ_a)_ωa`
    pub residual: f64,
    /// Sum of the absolute values of the three terms.
    pub scale: f64,
}

impl NeumannCheck {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual.abs() / self.scale
        } else {
            self.residual.abs()
        }
    }
}

fn local_vertex(mesh: &Mesh, e: usize, a: usize) -> usize {
    mesh.local_vertex(e, a).expect("element of the patch contains the vertex")
}

/// Reference barycentric coordinate of local vertex `l`.
fn hat_value(dim: usize, l: usize, xh: &[f64; 2]) -> f64 {
    match (dim, l) {
        (1, 0) => 1.0 - xh[0],
        (1, _) => xh[0],
        (_, 0) => 1.0 - xh[0] - xh[1],
        (_, 1) => xh[0],
        _ => xh[1],
    }
}

fn field_at(tab: &Tabulation, q: usize, c: &[f64]) -> (f64, [f64; 2]) {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for (j, cj) in c.iter().enumerate() {
        v += cj * tab.val[q][j];
        g[0] += cj * tab.grad[q][j][0];
        g[1] += cj * tab.grad[q][j][1];
    }
    (v, g)
}


pub fn check_neumann_compatibility(
    mesh: &Mesh,
    patch: &VertexPatch,
    u_h: &ScalarField,
    spec: &ProblemSpec,
) -> Result<NeumannCheck> {
    let p = u_h.degree;
    let tab = scalar_tabulation(mesh.dim, p, data_rule_degree(spec, p))?;
    let (e2, k2) = (spec.epsilon.powi(2), spec.kappa.powi(2));
    let (mut tf, mut td, mut tr) = (0.0, 0.0, 0.0);
    for &e in &patch.elements {
        let map = &mesh.maps[e];
        let l = local_vertex(mesh, e, patch.vertex);
        let gpsi = map.grad(&barycentric_grads(mesh.dim)[l]);
        let det = map.abs_det();
        for (q, (xh, w)) in tab.rule.iter().enumerate() {
            let psi = hat_value(mesh.dim, l, xh);
            let (u, gu) = field_at(&tab, q, u_h.element(e));
            let gu = map.grad(&gu);
            tf += w * det * spec.source.value(mesh, e, xh) * psi;
            td += w * det * (gu[0] * gpsi[0] + gu[1] * gpsi[1]);
            tr += w * det * u * psi;
        }
    }
    Ok(NeumannCheck {
        residual: tf - e2 * td - k2 * tr,
        scale: tf.abs() + e2 * td.abs() + k2 * tr.abs(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchMode {
    /// Full system in `(τ, γ)`.
    Reaction,
    /// `κ = 0`: only `τ`, `φ^a` is not produced.
    Diffusion,
    /// `κ > 0` negligible: `κ = 0` system with `φ^a = Π_p(ψ_a u_h)`.
    Fallback,
}

/// How a local RTN DOF of a patch element enters the patch unknowns.
#[derive(Clone, Copy, Debug)]
enum DofLink {
    Zero,
    Unknown(usize, f64),
}

/// Assembled patch problem (Euler-Lagrange system and objective data).
#[derive(Clone, Debug)]
pub struct PatchProblem {
    pub vertex: usize,
    pub elements: Vec<usize>,
    pub is_interior: bool,
    pub weight: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub mode: PatchMode,
    pub degree: usize,
    /// Number of flux unknowns.
    pub n_v: usize,
    /// Scalar unknowns per element.
    pub n_q: usize,
    /// Flux mass matrix `(v_j, v_i)_ωa` without the weight.
    pub mass: DMatrix<f64>,
    /// `B[r,i] = (q_r, div v_i)`, rows grouped per element.
    pub div: DMatrix<f64>,
    /// `(q_r, q_s)` is diagonal: `|det J_K|`.
    pub q_mass: DVector<f64>,
    /// `(ψ_a ∇u_h, v_i)`.
    pub flux_load: DVector<f64>,
    /// `(fψ_a − κ²ψ_a u_h − ε²∇u_h·∇ψ_a, q_r)`.
    pub rhs_load: DVector<f64>,
    /// `(q_r, 1)`.
    pub q_mean: DVector<f64>,
    /// `‖ψ_a ∇u_h‖²_ωa`.
    pub grad_sq: f64,
    links: Vec<Vec<DofLink>>,
}

/// Face classes inside a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FaceClass {
    Glued,
    Free,
    Zero,
}

fn face_class(mesh: &Mesh, patch: &VertexPatch, fid: usize, in_patch: &dyn Fn(usize) -> bool) -> FaceClass {
    let face = &mesh.faces[fid];
    if face.is_boundary() {
        return if patch.is_interior { FaceClass::Zero } else { FaceClass::Free };
    }
    let (o, _) = face.owner;
    let (n, _) = face.neighbor.expect("interior face");
    if in_patch(o) && in_patch(n) {
        FaceClass::Glued
    } else {
        FaceClass::Zero
    }
}

impl PatchProblem {
    pub fn new(mesh: &Mesh, patch: &VertexPatch, u_h: &ScalarField, spec: &ProblemSpec, weight: f64) -> Result<Self> {
        let dim = mesh.dim;
        let p = u_h.degree;
        let basis = rtn_basis(dim, p)?;
        let nl = basis.len();
        let n_q = num_monomials(dim, p);
        let rt: std::sync::Arc<RtnTabulation> = rtn_tabulation(dim, p, bilinear_degree(p))?;
        let st = scalar_tabulation(dim, p, bilinear_degree(p))?;
        let sd = scalar_tabulation(dim, p, data_rule_degree(spec, p))?;
        let in_patch = |e: usize| patch.elements.contains(&e);

        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut n_v = 0;
        let mut links = Vec::with_capacity(patch.elements.len());
        for &e in &patch.elements {
            let mut l = vec![DofLink::Zero; nl];
            for f in 0..=dim {
                let fid = mesh.element_faces[e][f];
                let class = face_class(mesh, patch, fid, &in_patch);
                for (k, &i) in basis.face_dofs[f].iter().enumerate() {
                    l[i] = match class {
                        FaceClass::Zero => DofLink::Zero,
                        _ => {
                            let id = *index.entry((fid, k)).or_insert_with(|| {
                                n_v += 1;
                                n_v - 1
                            });
                            DofLink::Unknown(id, face_dof_sign(mesh, e, f, k))
                        }
                    };
                }
            }
            for &i in &basis.interior_dofs {
                l[i] = DofLink::Unknown(n_v, 1.0);
                n_v += 1;
            }
            links.push(l);
        }

        let ne = patch.elements.len();
        let mut mass = DMatrix::zeros(n_v, n_v);
        let mut div = DMatrix::zeros(ne * n_q, n_v);
        let mut q_mass = DVector::zeros(ne * n_q);
        let mut flux_load = DVector::zeros(n_v);
        let mut rhs_load = DVector::zeros(ne * n_q);
        let mut q_mean = DVector::zeros(ne * n_q);
        let mut grad_sq = 0.0;
        let (e2, k2) = (spec.epsilon.powi(2), spec.kappa.powi(2));

        // reference divergence moments, identical for all elements
        let mut bref = DMatrix::<f64>::zeros(n_q, nl);
        for (q, w) in rt.rule.weights.iter().enumerate() {
            for r in 0..n_q {
                for i in 0..nl {
                    bref[(r, i)] += w * st.val[q][r] * rt.div[q][i];
                }
            }
        }

        for (le, &e) in patch.elements.iter().enumerate() {
            let map = &mesh.maps[e];
            let det = map.abs_det();
            let lv = local_vertex(mesh, e, patch.vertex);
            let gpsi_ref = barycentric_grads(dim)[lv];
            let gpsi = map.grad(&gpsi_ref);
            let c = u_h.element(e);
            let mut mk = DMatrix::<f64>::zeros(nl, nl);
            let mut fk = vec![0.0; nl];
            for (q, (xh, w)) in rt.rule.iter().enumerate() {
                let jv: Vec<[f64; 2]> = rt.val[q]
                    .iter()
                    .map(|v| {
                        let j = &map.jac;
                        [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]]
                    })
                    .collect();
                for i in 0..nl {
                    for j in 0..nl {
                        mk[(i, j)] += w * (jv[i][0] * jv[j][0] + jv[i][1] * jv[j][1]) / det;
                    }
                }
                let psi = hat_value(dim, lv, xh);
                let (_, gu_ref) = field_at(&st, q, c);
                for i in 0..nl {
                    fk[i] += w * psi * (gu_ref[0] * rt.val[q][i][0] + gu_ref[1] * rt.val[q][i][1]);
                }
                let gu = map.grad(&gu_ref);
                grad_sq += w * det * psi * psi * (gu[0] * gu[0] + gu[1] * gu[1]);
            }
            for (q, (xh, w)) in sd.rule.iter().enumerate() {
                let psi = hat_value(dim, lv, xh);
                let (u, gu) = field_at(&sd, q, c);
                let gu = map.grad(&gu);
                let g = spec.source.value(mesh, e, xh) * psi - k2 * psi * u - e2 * (gu[0] * gpsi[0] + gu[1] * gpsi[1]);
                for r in 0..n_q {
                    rhs_load[le * n_q + r] += w * det * g * sd.val[q][r];
                    q_mean[le * n_q + r] += w * det * sd.val[q][r];
                }
            }
            for r in 0..n_q {
                q_mass[le * n_q + r] = det;
            }
            let l = &links[le];
            for i in 0..nl {
                let DofLink::Unknown(gi, si) = l[i] else { continue };
                flux_load[gi] += si * fk[i];
                for j in 0..nl {
                    if let DofLink::Unknown(gj, sj) = l[j] {
                        mass[(gi, gj)] += si * sj * mk[(i, j)];
                    }
                }
                for r in 0..n_q {
                    div[(le * n_q + r, gi)] += si * bref[(r, i)];
                }
            }
        }

        let eps = spec.epsilon;
        let kappa = spec.kappa;
        let measure: f64 = patch.elements.iter().map(|&e| mesh.measure[e]).sum();
        let mode = if kappa == 0.0 {
            PatchMode::Diffusion
        } else if k2 * measure < 1e-12 * e2 / (weight * weight * patch.diameter * patch.diameter) * measure {
            PatchMode::Fallback
        } else {
            PatchMode::Reaction
        };
        Ok(PatchProblem {
            vertex: patch.vertex,
            elements: patch.elements.clone(),
            is_interior: patch.is_interior,
            weight,
            epsilon: eps,
            kappa,
            mode,
            degree: p,
            n_v,
            n_q,
            mass,
            div,
            q_mass,
            flux_load,
            rhs_load,
            q_mean,
            grad_sq,
            links,
        })
    }

    fn n_qt(&self) -> usize {
        self.elements.len() * self.n_q
    }

    fn mean_constraint(&self) -> bool {
        self.mode != PatchMode::Reaction && self.is_interior
    }

    /// Euler-Lagrange matrix and right-hand side.
    pub fn system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (nv, nq) = (self.n_v, self.n_qt());
        let extra = usize::from(self.mean_constraint());
        let n = nv + nq + extra;
        let w2 = self.weight * self.weight;
        let eps = self.epsilon;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        a.view_mut((0, 0), (nv, nv)).copy_from(&(&self.mass * w2));
        let bt = &self.div * (-eps);
        a.view_mut((nv, 0), (nq, nv)).copy_from(&bt);
        a.view_mut((0, nv), (nv, nq)).copy_from(&bt.transpose());
        for i in 0..nv {
            b[i] = -eps * w2 * self.flux_load[i];
        }
        for r in 0..nq {
            if self.mode == PatchMode::Reaction {
                a[(nv + r, nv + r)] = -self.kappa * self.kappa * self.q_mass[r];
            }
            b[nv + r] = -self.rhs_load[r];
        }
        if extra == 1 {
            for r in 0..nq {
                a[(nv + r, nv + nq)] = self.q_mean[r];
                a[(nv + nq, nv + r)] = self.q_mean[r];
            }
        }
        (a, b)
    }

    /// `w²‖εψ_a∇u_h + τ‖² + κ²‖γ‖²`.
    pub fn objective(&self, tau: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
        let w2 = self.weight * self.weight;
        let eps = self.epsilon;
        let flux = tau.dot(&(&self.mass * tau)) + 2.0 * eps * self.flux_load.dot(tau) + eps * eps * self.grad_sq;
        let pot: f64 = gamma.iter().zip(self.q_mass.iter()).map(|(g, m)| g * g * m).sum();
        w2 * flux.max(0.0) + self.kappa * self.kappa * pot
    }

    /// `ε B τ + κ² Mq γ − G`, the constraint defect in the scalar test space.
    pub fn constraint_defect(&self, tau: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let mut d = &self.div * tau * self.epsilon - &self.rhs_load;
        if self.mode == PatchMode::Reaction {
            for r in 0..d.len() {
                d[r] += self.kappa * self.kappa * self.q_mass[r] * gamma[r];
            }
        }
        d
    }

    /// Orthonormal basis of `{v : B v = 0}`.
    pub fn divergence_free_basis(&self) -> DMatrix<f64> {
        if self.n_v == 0 {
            return DMatrix::zeros(0, 0);
        }
        let svd = self.div.clone().svd(false, true);
        let vt = svd.v_t.expect("right singular vectors");
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(1e-300);
        let cols: Vec<usize> = (0..vt.nrows()).filter(|&i| svd.singular_values[i] <= tol).collect();
        // rows of V^T beyond the computed ones span the rest of the null space
        if vt.nrows() < self.n_v {
            let mut m = DMatrix::zeros(self.n_v, self.n_v);
            m.view_mut((0, 0), (vt.nrows(), self.n_v)).copy_from(&vt);
            let extra = self.n_v - vt.nrows();
            let qr = m.transpose().qr();
            let q = qr.q();
            let mut out = DMatrix::zeros(self.n_v, cols.len() + extra);
            for (c, &i) in cols.iter().enumerate() {
                out.set_column(c, &vt.row(i).transpose());
            }
            for k in 0..extra {
                out.set_column(cols.len() + k, &q.column(vt.nrows() + k));
            }
            out
        } else {
            let mut out = DMatrix::zeros(self.n_v, cols.len());
            for (c, &i) in cols.iter().enumerate() {
                out.set_column(c, &vt.row(i).transpose());
            }
            out
        }
    }

    /// Random direction `(v, q)` that keeps the constraint satisfied.
    pub fn feasible_direction(&self, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
        let nq = self.n_qt();
        match self.mode {
            PatchMode::Reaction => {
                let v = DVector::from_fn(self.n_v, |_, _| rng.gen_range(-1.0..1.0));
                let bv = &self.div * &v;
                let k2 = self.kappa * self.kappa;
                let q = DVector::from_fn(nq, |r, _| -self.epsilon * bv[r] / (k2 * self.q_mass[r]));
                (v, q)
            }
            _ => {
                let z = self.divergence_free_basis();
                let c = DVector::from_fn(z.ncols(), |_, _| rng.gen_range(-1.0..1.0));
                (&z * c, DVector::zeros(nq))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PatchSolution {
    pub vertex: usize,
    pub mode: PatchMode,
    pub weight: f64,
    pub tau: DVector<f64>,
    pub gamma: DVector<f64>,
    pub objective: f64,
    /// `‖Ax − b‖_∞ / (‖A‖_∞‖x‖_∞ + ‖b‖_∞)` of the Euler-Lagrange system.
    pub stationarity: f64,
}

/// Solves a dense symmetric (possibly indefinite) system with symmetric
/// diagonal scaling, LU and one refinement step.
fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>, vertex: usize) -> Result<(DVector<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), 0.0));
    }
    let d = DVector::from_fn(n, |i, _| {
        let m = a.row(i).amax();
        if m > 0.0 {
            1.0 / m.sqrt()
        } else {
            1.0
        }
    });
    let s = DMatrix::from_fn(n, n, |i, j| d[i] * a[(i, j)] * d[j]);
    let lu = s.clone().lu();
    let bs = b.component_mul(&d);
    let mut y = lu.solve(&bs).ok_or_else(|| {
        let u = lu.u();
        let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
        let mx = diag.iter().cloned().fold(0.0, f64::max);
        let mn = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        Error::PatchSolverFailure {
            vertex,
            reason: "singular Euler-Lagrange system".into(),
            condition: if mn > 0.0 { mx / mn } else { f64::INFINITY },
        }
    })?;
    let r = &bs - &s * &y;
    if let Some(dy) = lu.solve(&r) {
        y += dy;
    }
    let x = y.component_mul(&d);
    let res = (b - a * &x).amax();
    let scale = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max) * x.amax() + b.amax();
    let rel = if scale > 0.0 { res / scale } else { res };
    if !rel.is_finite() {
        return Err(Error::PatchSolverFailure {
            vertex,
            reason: "non-finite solution".into(),
            condition: f64::INFINITY,
        });
    }
    Ok((x, rel))
}

pub fn solve_patch_problem(problem: &PatchProblem) -> Result<PatchSolution> {
    let (a, b) = problem.system();
    let (x, stationarity) = solve_dense(&a, &b, problem.vertex)?;
    let tau = x.rows(0, problem.n_v).into_owned();
    let gamma = if problem.mode == PatchMode::Reaction {
        x.rows(problem.n_v, problem.n_qt()).into_owned()
    } else {
        DVector::zeros(problem.n_qt())
    };
    let objective = problem.objective(&tau, &gamma);
    Ok(PatchSolution {
        vertex: problem.vertex,
        mode: problem.mode,
        weight: problem.weight,
        tau,
        gamma,
        objective,
        stationarity,
    })
}

pub fn solve_patch(
    mesh: &Mesh,
    patch: &VertexPatch,
    u_h: &ScalarField,
    spec: &ProblemSpec,
    weight: f64,
) -> Result<(PatchProblem, PatchSolution)> {
    let problem = PatchProblem::new(mesh, patch, u_h, spec, weight)?;
    let sol = solve_patch_problem(&problem)?;
    Ok((problem, sol))
}

#[derive(Clone, Debug, Serialize)]
pub struct PatchLog {
    pub vertex: usize,
    pub weight: f64,
    pub mode: PatchMode,
    pub objective: f64,
    pub stationarity: f64,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub sigma: FluxField,
    pub phi: ScalarField,
    pub patches: Vec<PatchLog>,
}

/// Adds the zero-extended patch contribution to the global fields.
fn accumulate(problem: &PatchProblem, sol: &PatchSolution, sigma: &mut FluxField, gamma: &mut ScalarField) {
    for (le, &e) in problem.elements.iter().enumerate() {
        let c = sigma.element_mut(e);
        for (i, link) in problem.links[le].iter().enumerate() {
            if let DofLink::Unknown(g, s) = link {
                c[i] += problem.epsilon * s * sol.tau[*g];
            }
        }
        let q = gamma.element_mut(e);
        for r in 0..problem.n_q {
            q[r] += sol.gamma[le * problem.n_q + r];
        }
    }
}

/// Patchwise reconstruction `σ_h = Σ_a σ^a`, `φ_h = Σ_a φ^a`. Patches are
/// solved in parallel and merged in vertex order.
pub fn reconstruct(mesh: &Mesh, u_h: &ScalarField, spec: &ProblemSpec, c_star: f64) -> Result<Reconstruction> {
    let p = u_h.degree;
    let patches = mesh.patches();
    let solved: Vec<Result<(PatchProblem, PatchSolution)>> = patches
        .par_iter()
        .map(|patch| solve_patch(mesh, patch, u_h, spec, patch_weight(patch, spec, c_star)))
        .collect();
    let mut sigma = FluxField::zeros(mesh, p, Conformity::HDiv);
    let mut gamma = ScalarField::zeros(mesh, p, Conformity::Broken);
    let mut logs = Vec::with_capacity(patches.len());
    for r in solved {
        let (problem, sol) = r?;
        accumulate(&problem, &sol, &mut sigma, &mut gamma);
        logs.push(PatchLog {
            vertex: sol.vertex,
            weight: sol.weight,
            mode: sol.mode,
            objective: sol.objective,
            stationarity: sol.stationarity,
        });
    }
    let mut phi = u_h.clone();
    phi.conformity = Conformity::Broken;
    for (c, g) in phi.coeffs.iter_mut().zip(&gamma.coeffs) {
        *c += g;
    }
    Ok(Reconstruction {
        sigma,
        phi,
        patches: logs,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EquilibrationResidual {
    /// Largest elementwise L² norm of `div σ_h + κ²φ_h − Π_p f`.
    pub max: f64,
    pub l2: f64,
    /// `‖Π_p f‖ + κ²‖φ_h‖ + ‖div σ_h‖`.
    pub scale: f64,
}

impl EquilibrationResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.l2 / self.scale
        } else {
            self.l2
        }
    }
}

/// Elementwise norms of `div σ_h + κ²φ_h − Π_p f`.
pub fn verify_equilibration(mesh: &Mesh, rec: &Reconstruction, spec: &ProblemSpec) -> Result<EquilibrationResidual> {
    let p = rec.sigma.degree;
    let div = rec.sigma.divergence(mesh)?;
    let proj = l2_project_local(|e, xh| spec.source.value(mesh, e, xh), mesh, p, data_rule_degree(spec, p))?;
    let k2 = spec.kappa * spec.kappa;
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut r = ScalarField::zeros(mesh, p, Conformity::Broken);
    for e in 0..mesh.n_elements() {
        let c = r.element_mut(e);
        for i in 0..c.len() {
            c[i] = div.element(e)[i] + k2 * rec.phi.element(e)[i] - proj.element(e)[i];
        }
        let n = r.l2_norm_sq_element(mesh, e);
        max = max.max(n.sqrt());
        sum += n;
    }
    Ok(EquilibrationResidual {
        max,
        l2: sum.sqrt(),
        scale: proj.l2_norm(mesh) + k2 * rec.phi.l2_norm(mesh) + div.l2_norm(mesh),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::constant_set;
    use crate::fem::{solve_problem, Source};
    use crate::mesh::{structured_triangle_mesh, uniform_interval_mesh};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(eps: f64, kappa: f64, f: impl Fn(&[f64; 2]) -> f64 + Send + Sync + 'static) -> ProblemSpec {
        ProblemSpec::new(eps, kappa, Source::function(f)).unwrap()
    }

    fn c_star(mesh: &Mesh, p: usize) -> f64 {
        constant_set(p, mesh.dim, mesh.shape_regularity()).unwrap().c_star
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight(1.0, 0.0, 0.25, 3.0), 1.0);
        assert_eq!(weight(1.0, 1.0, 0.25, 3.0), 1.0);
        assert!((weight(1e-4, 1.0, 0.25, 3.0) - 0.06).abs() < 1e-14);
    }

    #[test]
    fn neumann_compatibility() {
        let m = structured_triangle_mesh(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = spec(0.5, 1.0, |x| 1.0 + x[0]);
        let u = solve_problem(&m, 2, &s).unwrap().u_h;
        let a = m.interior_vertices()[0];
        let patch = m.build_patch(a).unwrap();
        let chk = check_neumann_compatibility(&m, &patch, &u, &s).unwrap();
        assert!(chk.relative() < 1e-10, "{chk:?}");
        // perturb by 0.1 ψ_a: residual becomes -0.1 a(ψ_a, ψ_a)
        let pert = l2_project_local(|e, xh| u.value(e, xh) + 0.1 * m.hat(a, &m.maps[e].map(xh)), &m, 2, 6).unwrap();
        let chk2 = check_neumann_compatibility(&m, &patch, &pert, &s).unwrap();
        let mut a_psi = 0.0;
        for &e in &patch.elements {
            let l = m.local_vertex(e, a).unwrap();
            let g = m.maps[e].grad(&barycentric_grads(2)[l]);
            // ∫ψ² = |K|/6 on a triangle
            a_psi += 0.25 * (g[0] * g[0] + g[1] * g[1]) * m.measure[e] + m.measure[e] / 6.0;
        }
        assert!((chk2.residual + 0.1 * a_psi).abs() < 1e-10 * a_psi);
        let zero = spec(1.0, 0.0, |_| 0.0);
        let u0 = ScalarField::zeros(&m, 1, Conformity::H10);
        assert_eq!(check_neumann_compatibility(&m, &patch, &u0, &zero).unwrap().residual, 0.0);
    }

    #[test]
    fn zero_data_gives_zero_patch() {
        let m = structured_triangle_mesh(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let u0 = ScalarField::zeros(&m, 1, Conformity::H10);
        for kappa in [0.0, 1.0] {
            let s = spec(1.0, kappa, |_| 0.0);
            for patch in m.patches() {
                let (_, sol) = solve_patch(&m, &patch, &u0, &s, 1.0).unwrap();
                assert!(sol.tau.amax() == 0.0 && sol.gamma.amax() == 0.0 && sol.objective == 0.0);
            }
        }
    }

    #[test]
    fn diffusion_patch_constraint_1d() {
        let m = uniform_interval_mesh(6, (0.0, 1.0)).unwrap();
        let s = spec(1.0, 0.0, |_| 1.0);
        let u = solve_problem(&m, 1, &s).unwrap().u_h;
        let a = 3;
        let patch = m.build_patch(a).unwrap();
        let (pb, sol) = solve_patch(&m, &patch, &u, &s, 1.0).unwrap();
        assert_eq!(pb.mode, PatchMode::Diffusion);
        // div σ^a against an independently projected right-hand side
        let mut sigma = FluxField::zeros(&m, 1, Conformity::HDiv);
        let mut g = ScalarField::zeros(&m, 1, Conformity::Broken);
        accumulate(&pb, &sol, &mut sigma, &mut g);
        let div = sigma.divergence(&m).unwrap();
        let rhs = l2_project_local(
            |e, xh| {
                if !patch.elements.contains(&e) {
                    return 0.0;
                }
                let x = m.maps[e].map(xh);
                let l = m.local_vertex(e, a).unwrap();
                let gpsi = m.maps[e].grad(&barycentric_grads(1)[l]);
                m.hat(a, &x) - u.grad(&m, e, xh)[0] * gpsi[0]
            },
            &m,
            1,
            6,
        )
        .unwrap();
        for e in 0..m.n_elements() {
            for i in 0..2 {
                assert!((div.element(e)[i] - rhs.element(e)[i]).abs() < 1e-10);
            }
        }
    }

    fn check_reconstruction(m: &Mesh, p: usize, s: &ProblemSpec) {
        let u = solve_problem(m, p, s).unwrap().u_h;
        let rec = reconstruct(m, &u, s, c_star(m, p)).unwrap();
        let res = verify_equilibration(m, &rec, s).unwrap();
        assert!(res.l2 <= 1e-9 * res.scale.max(1e-300), "p {p} eps {} kappa {}: {res:?}", s.epsilon, s.kappa);
        assert!(rec.sigma.max_normal_jump(m) <= 1e-10, "jump {}", rec.sigma.max_normal_jump(m));
        for log in &rec.patches {
            assert!(log.stationarity < 1e-10, "{log:?}");
        }
    }

    #[test]
    fn reconstruction_2d() {
        let m = structured_triangle_mesh(4, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        for p in 1..=2 {
            check_reconstruction(&m, p, &spec(1.0, 1.0, |_| 1.0));
            check_reconstruction(&m, p, &spec(1e-2, 1.0, |x| (3.0 * x[0]).sin() + x[1]));
            check_reconstruction(&m, p, &spec(1.0, 0.0, |x| x[0] * x[1]));
        }
    }

    #[test]
    fn reconstruction_1d() {
        let m = uniform_interval_mesh(16, (0.0, 1.0)).unwrap();
        for p in 1..=3 {
            for (eps, kappa) in [(1.0, 1.0), (1e-4, 1.0), (1.0, 0.0), (1e-2, 0.0)] {
                check_reconstruction(&m, p, &spec(eps, kappa, |x| (5.0 * x[0]).cos()));
            }
        }
    }

    #[test]
    fn mean_value_property() {
        let m = structured_triangle_mesh(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = spec(0.1, 2.0, |x| x[0] + 1.0);
        let u = solve_problem(&m, 2, &s).unwrap().u_h;
        for a in m.interior_vertices() {
            let patch = m.build_patch(a).unwrap();
            let (pb, sol) = solve_patch(&m, &patch, &u, &s, 0.5).unwrap();
            // (φ^a − Π(ψ u), 1) = (γ, 1) = 0
            let mean = pb.q_mean.dot(&sol.gamma);
            let scale: f64 = pb.q_mean.iter().zip(sol.gamma.iter()).map(|(a, b)| (a * b).abs()).sum();
            assert!(mean.abs() <= 1e-10 * scale.max(1e-14), "{mean} {scale}");
        }
    }

    #[test]
    fn minimality_and_weight_monotonicity() {
        let m = structured_triangle_mesh(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kappa in [0.0, 1.0] {
            let s = spec(0.2, kappa, |x| (2.0 * x[0]).exp() * x[1]);
            let u = solve_problem(&m, 1, &s).unwrap().u_h;
            for patch in m.patches() {
                let (pb, sol) = solve_patch(&m, &patch, &u, &s, 0.7).unwrap();
                for _ in 0..10 {
                    let (v, q) = pb.feasible_direction(&mut rng);
                    let t = 1e-2;
                    let d = pb.constraint_defect(&(&sol.tau + &v * t), &(&sol.gamma + &q * t));
                    let d0 = pb.constraint_defect(&sol.tau, &sol.gamma);
                    assert!((d - d0).amax() < 1e-10 * (1.0 + v.amax()));
                    let j = pb.objective(&(&sol.tau + &v * t), &(&sol.gamma + &q * t));
                    assert!(j >= sol.objective * (1.0 - 1e-12), "{j} < {}", sol.objective);
                }
                let (_, lo) = solve_patch(&m, &patch, &u, &s, 0.3).unwrap();
                let first = |sol: &PatchSolution, pb: &PatchProblem| {
                    sol.objective - kappa * kappa * sol.gamma.iter().zip(pb.q_mass.iter()).map(|(g, m)| g * g * m).sum::<f64>()
                };
                let pb_lo = PatchProblem::new(&m, &patch, &u, &s, 0.3).unwrap();
                assert!(first(&lo, &pb_lo) <= first(&sol, &pb) * (1.0 + 1e-10) + 1e-14);
            }
        }
    }

    #[test]
    fn deterministic_reconstruction() {
        let m = structured_triangle_mesh(4, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = spec(0.1, 1.0, |x| x[0].sin());
        let u = solve_problem(&m, 2, &s).unwrap().u_h;
        let a = reconstruct(&m, &u, &s, 3.0).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| reconstruct(&m, &u, &s, 3.0).unwrap());
        assert_eq!(a.sigma.coeffs, b.sigma.coeffs);
        assert_eq!(a.phi.coeffs, b.phi.coeffs);
    }

    #[test]
    fn scaled_flux_detected() {
        let m = uniform_interval_mesh(8, (0.0, 1.0)).unwrap();
        let s = spec(1.0, 1.0, |x| x[0]);
        let u = solve_problem(&m, 1, &s).unwrap().u_h;
        let mut rec = reconstruct(&m, &u, &s, 3.0).unwrap();
        let div_norm = rec.sigma.divergence(&m).unwrap().l2_norm(&m);
        rec.sigma = rec.sigma.scaled(1.1);
        let res = verify_equilibration(&m, &rec, &s).unwrap();
        assert!((res.l2 - 0.1 * div_norm).abs() < 1e-9 * div_norm);
    }
}

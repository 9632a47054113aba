//! Explicit trace and inverse-inequality constants, eigenvalue oracles for the
//! sharp reference-element constants, and the composite constant `C_*`.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::basis::{num_monomials, scalar_tabulation};
use crate::poly::quadrature::gauss_legendre;
use crate::poly::rtn::{face_point, reference_faces, rtn_basis, rtn_tabulation};
use crate::poly::AffineMap;

/// Largest degree for which eigenvalue oracles are computed.
pub const MAX_ORACLE_DEGREE: usize = 8;

fn hypercube_factor(d: usize) -> f64 {
    5f64.sqrt() / 4.0 * (2.0 * SQRT_2).powi(d as i32)
}

/// `C_Tr = sqrt(θ (d+1) (2 + d/π))`.
pub fn trace_constant(theta: f64, d: usize) -> f64 {
    let d = d as f64;
    (theta * (d + 1.0) * (2.0 + d / PI)).sqrt()
}

/// `C_{p+1,d,∂K} = sqrt((d+1)(p+2)(p+d+1) θ)`.
pub fn face_inverse_constant(p: usize, d: usize, theta: f64) -> f64 {
    let (p, d) = (p as f64, d as f64);
    ((d + 1.0) * (p + 2.0) * (p + d + 1.0) * theta).sqrt()
}

/// `C_{p+1,d,K} = sqrt(d) θ (√5/4)(2√2)^d sqrt(p(p+1)(p+2)(p+3))`.
pub fn div_inverse_constant(p: usize, d: usize, theta: f64) -> f64 {
    let pf = p as f64;
    (d as f64).sqrt() * theta * hypercube_factor(d) * (pf * (pf + 1.0) * (pf + 2.0) * (pf + 3.0)).sqrt()
}

/// `(1/√2) sqrt((p-1) p (p+1) (p+2))`, zero for `p <= 1`.
pub fn cp1_bound(p: usize) -> f64 {
    if p <= 1 {
        return 0.0;
    }
    let p = p as f64;
    ((p - 1.0) * p * (p + 1.0) * (p + 2.0)).sqrt() / SQRT_2
}

/// `(√5/4)(2√2)^d cp1_bound(p)`.
pub fn cpd_formula_bound(p: usize, d: usize) -> f64 {
    hypercube_factor(d) * cp1_bound(p)
}

/// Bound on `C_{p,d}` that is safe for every `p`: at `d = 1` the sharp value,
/// otherwise the simplex factor times `max(cp1_bound(p), C_{p,1})`.
pub fn cpd_bound(p: usize, d: usize) -> Result<f64> {
    let sharp = eigen_oracle_inverse_constant(1, p, OracleKind::Derivative)?;
    if d == 1 {
        return Ok(sharp);
    }
    Ok(hypercube_factor(d) * cp1_bound(p).max(sharp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    /// `‖v'‖ / ‖v‖` on P_p(0,1).
    Derivative,
    /// `h ‖div v‖ / ‖v‖` on RTN_p of the reference simplex.
    Div,
    /// `h^{1/2} ‖v·n‖_∂K / ‖v‖` on RTN_p of the reference simplex.
    NormalTrace,
}

impl OracleKind {
    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::Derivative => "derivative-on-interval",
            OracleKind::Div => "div-on-simplex",
            OracleKind::NormalTrace => "normal-trace-on-simplex",
        }
    }
}

/// Diameter of the reference simplex.
pub fn reference_diameter(dim: usize) -> f64 {
    if dim == 1 {
        1.0
    } else {
        SQRT_2
    }
}

/// Shape regularity `h/ρ` of the reference simplex.
pub fn reference_theta(dim: usize) -> f64 {
    if dim == 1 {
        1.0
    } else {
        1.0 + SQRT_2
    }
}

/// Largest eigenvalue of the pencil `(b, m)` with `m` symmetric positive semi-definite.
pub fn max_generalized_eigenvalue(b: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let sym = |a: DMatrix<f64>| (&a + a.transpose()) * 0.5;
    if let Some(chol) = m.clone().cholesky() {
        let linv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::OracleFailure("singular Cholesky factor".into()))?;
        let c = sym(&linv * b * linv.transpose());
        let ev = SymmetricEigen::new(c).eigenvalues;
        if ev.iter().all(|x| x.is_finite()) {
            return Ok(ev.max());
        }
    }
    // orthonormalize through the eigenvectors of `m`
    let eig = SymmetricEigen::new(sym(m.clone()));
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(Error::OracleFailure("Gram matrix is not positive".into()));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-14 * top).collect();
    let mut t = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..n {
            t[(r, c)] = eig.eigenvectors[(r, i)] / s;
        }
    }
    let c = sym(t.transpose() * b * &t);
    let ev = SymmetricEigen::new(c).eigenvalues;
    if ev.iter().any(|x| !x.is_finite()) {
        return Err(Error::OracleFailure("non-finite eigenvalue".into()));
    }
    Ok(ev.max())
}

fn compute_oracle(dim: usize, p: usize, kind: OracleKind) -> Result<f64> {
    match kind {
        OracleKind::Derivative => {
            let tab = scalar_tabulation(1, p, 2 * p)?;
            let n = num_monomials(1, p);
            let mut b = DMatrix::zeros(n, n);
            for (q, w) in tab.rule.weights.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        b[(i, j)] += w * tab.grad[q][i][0] * tab.grad[q][j][0];
                    }
                }
            }
            max_generalized_eigenvalue(&b, &DMatrix::identity(n, n)).map(f64::sqrt)
        }
        OracleKind::Div | OracleKind::NormalTrace => {
            if !(1..=2).contains(&dim) {
                return Err(Error::UnsupportedDimension(dim));
            }
            let basis = rtn_basis(dim, p)?;
            let tab = rtn_tabulation(dim, p, 2 * p + 2)?;
            let n = basis.len();
            let h = reference_diameter(dim);
            let mut m = DMatrix::zeros(n, n);
            let mut b = DMatrix::zeros(n, n);
            for (q, w) in tab.rule.weights.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        let v = &tab.val[q];
                        m[(i, j)] += w * (v[i][0] * v[j][0] + v[i][1] * v[j][1]);
                        if kind == OracleKind::Div {
                            b[(i, j)] += w * h * h * tab.div[q][i] * tab.div[q][j];
                        }
                    }
                }
            }
            if kind == OracleKind::NormalTrace {
                let (s, ws) = gauss_legendre(p + 2);
                for (f, face) in reference_faces(dim).iter().enumerate() {
                    let pts: Vec<(f64, f64)> = if dim == 1 {
                        vec![(0.0, 1.0)]
                    } else {
                        s.iter().cloned().zip(ws.iter().cloned()).collect()
                    };
                    for (t, wt) in pts {
                        let e = basis.eval(&face_point(dim, f, t));
                        let vn: Vec<f64> = e
                            .val
                            .iter()
                            .map(|v| v[0] * face.normal[0] + v[1] * face.normal[1])
                            .collect();
                        for i in 0..n {
                            for j in 0..n {
                                b[(i, j)] += h * wt * face.measure * vn[i] * vn[j];
                            }
                        }
                    }
                }
            }
            max_generalized_eigenvalue(&b, &m).map(f64::sqrt)
        }
    }
}

/// Sharp constant of the given kind on the reference element, cached.
pub fn eigen_oracle_inverse_constant(dim: usize, p: usize, kind: OracleKind) -> Result<f64> {
    if p > MAX_ORACLE_DEGREE {
        return Err(Error::invalid(format!(
            "oracle degree {p} exceeds the maximum {MAX_ORACLE_DEGREE}"
        )));
    }
    let dim = if kind == OracleKind::Derivative { 1 } else { dim };
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, OracleKind), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&v) = cache.lock().unwrap().get(&(dim, p, kind)) {
        return Ok(v);
    }
    let v = compute_oracle(dim, p, kind)?;
    cache.lock().unwrap().insert((dim, p, kind), v);
    Ok(v)
}

/// Formula value the oracle is compared against (at θ = 1).
pub fn oracle_formula_bound(dim: usize, p: usize, kind: OracleKind) -> f64 {
    match kind {
        OracleKind::Derivative => cp1_bound(p),
        OracleKind::Div => div_inverse_constant(p, dim, 1.0),
        OracleKind::NormalTrace => face_inverse_constant(p, dim, 1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Formula,
    Oracle,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantSet {
    pub theta: f64,
    pub dim: usize,
    pub p: usize,
    pub c_tr: f64,
    pub c_face: f64,
    /// Effective divergence constant used in `c_star`.
    pub c_div: f64,
    pub c_div_formula: f64,
    pub c_div_provenance: Provenance,
    pub c_star: f64,
}

/// `C_* = (C_div/√π + C_Tr C_face)/√2`.
pub fn c_star(c_div: f64, c_tr: f64, c_face: f64) -> f64 {
    (c_div / PI.sqrt() + c_tr * c_face) / SQRT_2
}

/// Constants for degree `p`, dimension `d` and shape regularity `θ`. The
/// divergence constant is `max(formula, √(2d) θ cpd_bound(p+1, d))`.
pub fn constant_set(p: usize, d: usize, theta: f64) -> Result<ConstantSet> {
    if d == 0 {
        return Err(Error::UnsupportedDimension(d));
    }
    if !(theta >= 1.0) || !theta.is_finite() {
        return Err(Error::invalid(format!("shape regularity must be >= 1, got {theta}")));
    }
    let c_tr = trace_constant(theta, d);
    let c_face = face_inverse_constant(p, d, theta);
    let formula = div_inverse_constant(p, d, theta);
    let composed = (2.0 * d as f64).sqrt() * theta * cpd_bound(p + 1, d)?;
    let (c_div, prov) = if composed > formula {
        (composed, Provenance::Oracle)
    } else {
        (formula, Provenance::Formula)
    };
    Ok(ConstantSet {
        theta,
        dim: d,
        p,
        c_tr,
        c_face,
        c_div,
        c_div_formula: formula,
        c_div_provenance: prov,
        c_star: c_star(c_div, c_tr, c_face),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantsRow {
    pub p: usize,
    pub d: usize,
    pub theta: f64,
    pub set: ConstantSet,
    pub oracle_derivative: f64,
    pub oracle_div: Option<f64>,
    pub oracle_trace: Option<f64>,
    pub formula_derivative: f64,
    /// Oracle ≤ formula for every kind computed in this row.
    pub oracle_below_formula: bool,
    /// The interval/p = 1 row where the derivative formula vanishes.
    pub anomaly: bool,
}

pub fn constants_table(ps: &[usize], ds: &[usize], theta: f64) -> Result<Vec<ConstantsRow>> {
    let mut rows = Vec::new();
    for &p in ps {
        for &d in ds {
            let set = constant_set(p, d, theta)?;
            let od = eigen_oracle_inverse_constant(1, p, OracleKind::Derivative)?;
            let (odiv, otr) = if d <= 2 {
                (
                    Some(eigen_oracle_inverse_constant(d, p, OracleKind::Div)?),
                    Some(eigen_oracle_inverse_constant(d, p, OracleKind::NormalTrace)?),
                )
            } else {
                (None, None)
            };
            let fd = cp1_bound(p);
            let below = |o: f64, f: f64| o <= f * (1.0 + 1e-10) + 1e-12;
            let mut ok = below(od, fd);
            if let Some(o) = odiv {
                ok &= below(o, oracle_formula_bound(d, p, OracleKind::Div));
            }
            if let Some(o) = otr {
                ok &= below(o, oracle_formula_bound(d, p, OracleKind::NormalTrace));
            }
            rows.push(ConstantsRow {
                p,
                d,
                theta,
                set,
                oracle_derivative: od,
                oracle_div: odiv,
                oracle_trace: otr,
                formula_derivative: fd,
                oracle_below_formula: ok,
                anomaly: !below(od, fd),
            });
        }
    }
    Ok(rows)
}

/// Inequality checked by [`soundness_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityKind {
    /// `‖v‖_∂K ≤ C_Tr ‖∇v‖^{1/2} ‖v‖^{1/2}` for zero-mean polynomials of degree ≤ 6.
    Trace,
    /// `h^{1/2} ‖v·n‖_∂K ≤ C_face ‖v‖` on RTN_p.
    FaceInverse,
    /// `h ‖div v‖ ≤ C_div ‖v‖` on RTN_p.
    DivInverse,
}

#[derive(Clone, Debug, Serialize)]
pub struct SoundnessReport {
    pub kind: InequalityKind,
    pub dim: usize,
    pub p: usize,
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs / (C · rhs)` observed.
    pub max_ratio: f64,
}

/// Random simplex with shape regularity at most `max_theta`, positively oriented.
pub fn random_simplex(dim: usize, rng: &mut impl Rng, max_theta: f64) -> Vec<[f64; 2]> {
    loop {
        let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
        let o = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        if dim == 1 {
            return vec![[o[0], 0.0], [o[0] + scale, 0.0]];
        }
        let mut v: Vec<[f64; 2]> = (0..3)
            .map(|_| [o[0] + scale * rng.gen_range(-1.0..1.0), o[1] + scale * rng.gen_range(-1.0..1.0)])
            .collect();
        let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
        if det < 0.0 {
            v.swap(1, 2);
        }
        let (h, rho) = simplex_h_rho(&v);
        if rho > 0.0 && h / rho <= max_theta {
            return v;
        }
    }
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Diameter and inscribed-ball diameter.
pub fn simplex_h_rho(v: &[[f64; 2]]) -> (f64, f64) {
    if v.len() == 2 {
        let h = dist(&v[0], &v[1]);
        return (h, h);
    }
    let e = [dist(&v[1], &v[2]), dist(&v[0], &v[2]), dist(&v[0], &v[1])];
    let area = 0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs();
    let semi = 0.5 * (e[0] + e[1] + e[2]);
    (e[0].max(e[1]).max(e[2]), 2.0 * area / semi)
}

/// Physical boundary quadrature: (reference point, outward unit normal, weight).
fn boundary_rule(v: &[[f64; 2]], n_pts: usize) -> Vec<([f64; 2], [f64; 2], f64)> {
    let dim = v.len() - 1;
    if dim == 1 {
        return vec![([1.0, 0.0], [1.0, 0.0], 1.0), ([0.0, 0.0], [-1.0, 0.0], 1.0)];
    }
    let (s, w) = gauss_legendre(n_pts);
    let mut out = Vec::new();
    for (f, face) in reference_faces(2).iter().enumerate() {
        let (a, b) = (v[face.verts[0]], v[face.verts[1]]);
        let opp = v[f];
        let len = dist(&a, &b);
        let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
        if (opp[0] - a[0]) * n[0] + (opp[1] - a[1]) * n[1] > 0.0 {
            n = [-n[0], -n[1]];
        }
        for (t, wt) in s.iter().zip(&w) {
            out.push((face_point(2, f, *t), n, wt * len));
        }
    }
    out
}

/// Checks one inequality on `n` random shape-regular simplices (θ ≤ 10) with
/// random polynomial fields, using the constants of [`constant_set`] at the
/// element's own shape regularity (formula values except the p = 0 divergence
/// constant, which uses the effective value).
pub fn soundness_check(kind: InequalityKind, dim: usize, p: usize, n: usize, seed: u64) -> Result<SoundnessReport> {
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((dim as u64) << 32) ^ ((p as u64) << 40) ^ kind as u64);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..n {
        let v = random_simplex(dim, &mut rng, 10.0);
        let map = AffineMap::from_vertices(dim, &v)?;
        let det = map.abs_det();
        let (h, rho) = simplex_h_rho(&v);
        let theta = h / rho;
        let (lhs, rhs) = match kind {
            InequalityKind::Trace => {
                let deg = rng.gen_range(1..=6usize);
                let tab = scalar_tabulation(dim, deg, 2 * deg)?;
                let nb = num_monomials(dim, deg);
                // zero mean: no component along the constant basis function
                let c: Vec<f64> = (0..nb).map(|i| if i == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
                let norm_sq = det * c.iter().map(|x| x * x).sum::<f64>();
                let mut grad_sq = 0.0;
                for (q, w) in tab.rule.weights.iter().enumerate() {
                    let mut g = [0.0; 2];
                    for i in 0..nb {
                        g[0] += c[i] * tab.grad[q][i][0];
                        g[1] += c[i] * tab.grad[q][i][1];
                    }
                    let g = map.grad(&g);
                    grad_sq += w * det * (g[0] * g[0] + g[1] * g[1]);
                }
                let basis = crate::poly::scalar_basis(dim, deg)?;
                let mut bnd = 0.0;
                for (xh, _, w) in boundary_rule(&v, deg + 1) {
                    let val: f64 = basis.values(&xh).iter().zip(&c).map(|(b, c)| b * c).sum();
                    bnd += w * val * val;
                }
                let c_tr = trace_constant(theta, dim);
                (bnd.sqrt(), c_tr * (grad_sq.sqrt() * norm_sq.sqrt()).sqrt())
            }
            InequalityKind::FaceInverse | InequalityKind::DivInverse => {
                let basis = rtn_basis(dim, p)?;
                let tab = rtn_tabulation(dim, p, 2 * p + 2)?;
                let nb = basis.len();
                let c: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut norm_sq = 0.0;
                let mut div_sq = 0.0;
                for (q, w) in tab.rule.weights.iter().enumerate() {
                    let mut vh = [0.0; 2];
                    let mut dh = 0.0;
                    for i in 0..nb {
                        vh[0] += c[i] * tab.val[q][i][0];
                        vh[1] += c[i] * tab.val[q][i][1];
                        dh += c[i] * tab.div[q][i];
                    }
                    let vp = map.piola(&vh);
                    norm_sq += w * det * (vp[0] * vp[0] + vp[1] * vp[1]);
                    div_sq += w * det * map.piola_div(dh).powi(2);
                }
                if kind == InequalityKind::DivInverse {
                    let c_div = if p == 0 {
                        constant_set(p, dim, theta)?.c_div
                    } else {
                        div_inverse_constant(p, dim, theta)
                    };
                    (h * div_sq.sqrt(), c_div * norm_sq.sqrt())
                } else {
                    let mut bnd = 0.0;
                    for (xh, nrm, w) in boundary_rule(&v, p + 2) {
                        let e = basis.eval(&xh);
                        let mut vh = [0.0; 2];
                        for i in 0..nb {
                            vh[0] += c[i] * e.val[i][0];
                            vh[1] += c[i] * e.val[i][1];
                        }
                        let vp = map.piola(&vh);
                        bnd += w * (vp[0] * nrm[0] + vp[1] * nrm[1]).powi(2);
                    }
                    (h.sqrt() * bnd.sqrt(), face_inverse_constant(p, dim, theta) * norm_sq.sqrt())
                }
            }
        };
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 + 1e-12 {
            violations += 1;
        }
    }
    Ok(SoundnessReport {
        kind,
        dim,
        p,
        samples: n,
        violations,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn trace_constant_examples() {
        assert!(close(trace_constant(1.0, 1), (2.0 * (2.0 + 1.0 / PI)).sqrt(), 1e-15));
        assert!((trace_constant(1.0, 1) - 2.15328).abs() < 1e-5);
        assert!((trace_constant(1.0 + SQRT_2, 2) - 4.3700).abs() < 1e-4);
        assert!(trace_constant(2.0, 2) > trace_constant(1.0, 2));
        assert!(trace_constant(1.0, 2) > trace_constant(1.0, 1));
    }

    #[test]
    fn face_constant_examples() {
        assert!((face_inverse_constant(1, 2, 1.0 + SQRT_2) - 9.3226).abs() < 1e-4);
        assert!(close(face_inverse_constant(0, 1, 1.0), 2.0 * SQRT_2, 1e-15));
        assert!(face_inverse_constant(2, 2, 1.0) > face_inverse_constant(1, 2, 1.0));
    }

    #[test]
    fn div_constant_examples() {
        let expect = SQRT_2 * 5f64.sqrt() / 4.0 * 8.0 * 24f64.sqrt();
        assert!(close(div_inverse_constant(1, 2, 1.0), expect, 1e-14));
        // √2 · 21.909 (the √d factor included)
        assert!((div_inverse_constant(1, 2, 1.0) - 30.984).abs() < 1e-3);
        assert!(close(div_inverse_constant(2, 2, 3.0), 3.0 * div_inverse_constant(2, 2, 1.0), 1e-14));
    }

    #[test]
    fn composition_cross_check() {
        for p in 1..=4 {
            for d in 1..=3 {
                let a = div_inverse_constant(p, d, 1.7);
                let b = (2.0 * d as f64).sqrt() * 1.7 * cpd_formula_bound(p + 1, d);
                assert!((a - b).abs() <= 1e-12 * a, "p {p} d {d}: {a} {b}");
            }
        }
    }

    #[test]
    fn cp1_examples() {
        assert!(close(cp1_bound(2), 12f64.sqrt(), 1e-15));
        assert_eq!(cp1_bound(0), 0.0);
        assert_eq!(cp1_bound(1), 0.0);
    }

    #[test]
    fn cpd_specializations() {
        assert!(close(cpd_formula_bound(2, 2), 240f64.sqrt(), 1e-14));
        assert!(close(cpd_formula_bound(2, 3), 1920f64.sqrt(), 1e-14));
        let d1 = cpd_bound(2, 1).unwrap();
        assert!(close(d1, eigen_oracle_inverse_constant(1, 2, OracleKind::Derivative).unwrap(), 1e-15));
    }

    #[test]
    fn interval_oracle_values() {
        let c1 = eigen_oracle_inverse_constant(1, 1, OracleKind::Derivative).unwrap();
        assert!(close(c1, 12f64.sqrt(), 1e-12));
        // v = L_2 on (0,1): ‖v'‖² = 60
        let c2 = eigen_oracle_inverse_constant(1, 2, OracleKind::Derivative).unwrap();
        assert!(close(c2, 60f64.sqrt(), 1e-12));
        assert_eq!(eigen_oracle_inverse_constant(1, 0, OracleKind::Derivative).unwrap(), 0.0);
    }

    #[test]
    fn interval_trace_oracle_closed_form() {
        // sup (v(0)² + v(1)²)/‖v‖² over P_n(0,1) is (n+1)(n+2); RTN_p = P_{p+1}
        for p in 0..=4 {
            let c = eigen_oracle_inverse_constant(1, p, OracleKind::NormalTrace).unwrap();
            let n = (p + 1) as f64;
            assert!(close(c * c, (n + 1.0) * (n + 2.0), 1e-10), "p {p}: {}", c * c);
        }
    }

    #[test]
    fn triangle_div_oracle_below_formula() {
        let o = eigen_oracle_inverse_constant(2, 1, OracleKind::Div).unwrap();
        assert!(o <= div_inverse_constant(1, 2, 1.0) + 1e-10);
    }

    #[test]
    fn generalized_eigen_fallback() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]);
        let l = max_generalized_eigenvalue(&b, &m).unwrap();
        assert!(close(l, 2.0, 1e-12));
    }

    #[test]
    fn c_star_recomputation() {
        let s = constant_set(2, 2, 1.0 + SQRT_2).unwrap();
        let expect = (s.c_div / PI.sqrt() + s.c_tr * s.c_face) / SQRT_2;
        assert!(close(s.c_star, expect, 1e-15));
        assert!(s.c_div >= s.c_div_formula);
    }

    #[test]
    fn c_star_monotone() {
        let mut prev = 0.0;
        for p in 0..=4 {
            let c = constant_set(p, 2, 2.0).unwrap().c_star;
            assert!(c >= prev);
            prev = c;
        }
        for p in 0..=3 {
            assert!(constant_set(p, 2, 2.0).unwrap().c_star >= constant_set(p, 1, 2.0).unwrap().c_star);
            assert!(constant_set(p, 1, 3.0).unwrap().c_star >= constant_set(p, 1, 2.0).unwrap().c_star);
        }
    }

    #[test]
    fn zero_degree_div_uses_oracle() {
        let s = constant_set(0, 2, 1.0).unwrap();
        assert_eq!(s.c_div_formula, 0.0);
        assert!(s.c_div > 0.0);
        assert_eq!(s.c_div_provenance, Provenance::Oracle);
    }

    #[test]
    fn small_soundness_runs() {
        for kind in [InequalityKind::Trace, InequalityKind::FaceInverse, InequalityKind::DivInverse] {
            for dim in 1..=2 {
                for p in 0..=2 {
                    let r = soundness_check(kind, dim, p, 50, 7).unwrap();
                    assert_eq!(r.violations, 0, "{kind:?} d {dim} p {p}: {}", r.max_ratio);
                }
            }
        }
    }

    #[test]
    #[ignore]
    fn print_oracles() {
        for d in 1..=2 {
            for p in 0..=4 {
                let kinds = [OracleKind::Derivative, OracleKind::Div, OracleKind::NormalTrace];
                for k in kinds {
                    let o = eigen_oracle_inverse_constant(d, p, k).unwrap();
                    println!("d {d} p {p} {:?} oracle {o:.6} formula {:.6}", k, oracle_formula_bound(d, p, k));
                }
            }
        }
    }

    #[test]
    fn reference_geometry() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let (h, rho) = simplex_h_rho(&v);
        assert!(close(h / rho, reference_theta(2), 1e-14));
        assert!(close(h, reference_diameter(2), 1e-15));
    }

    proptest! {
        #[test]
        fn theta_scaling(theta in 1.0f64..20.0, p in 0usize..5, d in 1usize..4) {
            prop_assert!((div_inverse_constant(p, d, 2.0 * theta) - 2.0 * div_inverse_constant(p, d, theta)).abs() <= 1e-12 * div_inverse_constant(p, d, theta).max(1.0));
            prop_assert!((trace_constant(2.0 * theta, d) - SQRT_2 * trace_constant(theta, d)).abs() <= 1e-12 * trace_constant(theta, d));
        }
    }
}

//! Piecewise polynomial scalar fields and RTN flux fields on a mesh.

use serde::{Deserialize, Serialize};

use super::basis::{scalar_basis, scalar_tabulation};
use super::quadrature::gauss_legendre;
use super::rtn::rtn_basis;
use crate::error::Result;
use crate::mesh::Mesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conformity {
    Broken,
    H10,
    HDiv,
}

/// Element-wise polynomial of degree `degree`, stored as modal coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub dim: usize,
    pub degree: usize,
    pub n_local: usize,
    pub coeffs: Vec<f64>,
    pub conformity: Conformity,
}

impl ScalarField {
    pub fn zeros(mesh: &Mesh, degree: usize, conformity: Conformity) -> Self {
        let n_local = super::basis::num_monomials(mesh.dim, degree);
        ScalarField {
            dim: mesh.dim,
            degree,
            n_local,
            coeffs: vec![0.0; n_local * mesh.n_elements()],
            conformity,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.coeffs.len() / self.n_local
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.coeffs[e * self.n_local..(e + 1) * self.n_local]
    }

    pub fn element_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.coeffs[e * self.n_local..(e + 1) * self.n_local]
    }

    pub fn value(&self, e: usize, xh: &[f64; 2]) -> f64 {
        let b = scalar_basis(self.dim, self.degree).expect("supported dimension");
        b.values(xh).iter().zip(self.element(e)).map(|(a, c)| a * c).sum()
    }

    pub fn grad(&self, mesh: &Mesh, e: usize, xh: &[f64; 2]) -> [f64; 2] {
        let b = scalar_basis(self.dim, self.degree).expect("supported dimension");
        let ev = b.eval(xh);
        let mut g = [0.0; 2];
        for (gi, c) in ev.grad.iter().zip(self.element(e)) {
            g[0] += c * gi[0];
            g[1] += c * gi[1];
        }
        mesh.maps[e].grad(&g)
    }

    /// Value at a physical point (located by search).
    pub fn value_at(&self, mesh: &Mesh, x: &[f64; 2]) -> Option<f64> {
        mesh.locate(x).map(|(e, xh)| self.value(e, &xh))
    }

    /// ‖v‖²_K, exact thanks to the orthonormal basis.
    pub fn l2_norm_sq_element(&self, mesh: &Mesh, e: usize) -> f64 {
        mesh.maps[e].abs_det() * self.element(e).iter().map(|c| c * c).sum::<f64>()
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        (0..self.n_elements()).map(|e| self.l2_norm_sq_element(mesh, e)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Same field represented in a higher-degree basis (exact, thanks to hierarchy).
    pub fn raised(&self, degree: usize) -> Self {
        assert!(degree >= self.degree);
        let n_new = super::basis::num_monomials(self.dim, degree);
        let ne = self.n_elements();
        let mut coeffs = vec![0.0; n_new * ne];
        for e in 0..ne {
            coeffs[e * n_new..e * n_new + self.n_local].copy_from_slice(self.element(e));
        }
        ScalarField {
            dim: self.dim,
            degree,
            n_local: n_new,
            coeffs,
            conformity: self.conformity,
        }
    }

    /// Largest trace mismatch across interior faces and largest trace on
    /// boundary faces, sampled at face quadrature points.
    pub fn trace_defects(&self, mesh: &Mesh) -> (f64, f64) {
        let (mut jump, mut bnd) = (0.0f64, 0.0f64);
        for (fid, face) in mesh.faces.iter().enumerate() {
            for (x, _) in face_rule(mesh, fid, 2 * self.degree + 2) {
                let (e, _) = face.owner;
                let a = self.value(e, &mesh.maps[e].inverse_map(&x));
                match face.neighbor {
                    Some((n, _)) => {
                        let b = self.value(n, &mesh.maps[n].inverse_map(&x));
                        jump = jump.max((a - b).abs());
                    }
                    None => bnd = bnd.max(a.abs()),
                }
            }
        }
        (jump, bnd)
    }
}

/// L² projection onto P_p(T_h) with a quadrature rule of degree `quad_degree`.
pub fn l2_project<F>(f: F, mesh: &Mesh, p: usize, quad_degree: usize) -> Result<ScalarField>
where
    F: Fn(&[f64; 2]) -> f64,
{
    let tab = scalar_tabulation(mesh.dim, p, quad_degree)?;
    let mut out = ScalarField::zeros(mesh, p, Conformity::Broken);
    for e in 0..mesh.n_elements() {
        let map = mesh.maps[e];
        let c = out.element_mut(e);
        for (q, (xh, w)) in tab.rule.iter().enumerate() {
            let fx = f(&map.map(xh));
            for (ci, phi) in c.iter_mut().zip(&tab.val[q]) {
                *ci += w * fx * phi;
            }
        }
    }
    Ok(out)
}

/// Element-wise projection of an element-aware integrand `f(e, x̂)`.
pub fn l2_project_local<F>(f: F, mesh: &Mesh, p: usize, quad_degree: usize) -> Result<ScalarField>
where
    F: Fn(usize, &[f64; 2]) -> f64,
{
    let tab = scalar_tabulation(mesh.dim, p, quad_degree)?;
    let mut out = ScalarField::zeros(mesh, p, Conformity::Broken);
    for e in 0..mesh.n_elements() {
        let c = out.element_mut(e);
        for (q, (xh, w)) in tab.rule.iter().enumerate() {
            let fx = f(e, xh);
            for (ci, phi) in c.iter_mut().zip(&tab.val[q]) {
                *ci += w * fx * phi;
            }
        }
    }
    Ok(out)
}

/// Gauss points on a mesh face in physical coordinates with weights that
/// include the face measure. In 1D the single point has weight 1.
pub fn face_rule(mesh: &Mesh, face: usize, degree: usize) -> Vec<([f64; 2], f64)> {
    let f = &mesh.faces[face];
    if mesh.dim == 1 {
        return vec![(mesh.coords[f.vertices[0]], 1.0)];
    }
    let a = mesh.coords[f.vertices[0]];
    let b = mesh.coords[f.vertices[1]];
    let (s, w) = gauss_legendre(degree / 2 + 1);
    s.iter()
        .zip(&w)
        .map(|(s, w)| ([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])], w * f.measure))
        .collect()
}

/// Sign relating the local face-moment DOF `k` on local face `f` of element
/// `e` to the global DOF of the mesh face (owner normal, increasing global
/// vertex parameterization).
pub fn face_dof_sign(mesh: &Mesh, e: usize, f: usize, k: usize) -> f64 {
    let fid = mesh.element_faces[e][f];
    let face = &mesh.faces[fid];
    let s_n = if face.owner == (e, f) { 1.0 } else { -1.0 };
    if mesh.dim == 1 || k % 2 == 0 {
        return s_n;
    }
    let rf = super::rtn::reference_faces(mesh.dim)[f];
    let ga = mesh.elements[e][rf.verts[0]];
    let gb = mesh.elements[e][rf.verts[1]];
    if ga > gb {
        -s_n
    } else {
        s_n
    }
}

/// Element-wise RTN_p field, stored as local nodal (DOF) coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxField {
    pub dim: usize,
    pub degree: usize,
    pub n_local: usize,
    pub coeffs: Vec<f64>,
    pub conformity: Conformity,
}

impl FluxField {
    pub fn zeros(mesh: &Mesh, degree: usize, conformity: Conformity) -> Self {
        let n_local = super::rtn::RtnBasis::dimension(mesh.dim, degree);
        FluxField {
            dim: mesh.dim,
            degree,
            n_local,
            coeffs: vec![0.0; n_local * mesh.n_elements()],
            conformity,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.coeffs.len() / self.n_local
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.coeffs[e * self.n_local..(e + 1) * self.n_local]
    }

    pub fn element_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.coeffs[e * self.n_local..(e + 1) * self.n_local]
    }

    /// Physical value (Piola-mapped) at reference point `xh` of element `e`.
    pub fn value(&self, mesh: &Mesh, e: usize, xh: &[f64; 2]) -> [f64; 2] {
        let b = rtn_basis(self.dim, self.degree).expect("supported dimension");
        let ev = b.eval(xh);
        let mut v = [0.0; 2];
        for (vi, c) in ev.val.iter().zip(self.element(e)) {
            v[0] += c * vi[0];
            v[1] += c * vi[1];
        }
        mesh.maps[e].piola(&v)
    }

    pub fn div(&self, mesh: &Mesh, e: usize, xh: &[f64; 2]) -> f64 {
        let b = rtn_basis(self.dim, self.degree).expect("supported dimension");
        let ev = b.eval(xh);
        let d: f64 = ev.div.iter().zip(self.element(e)).map(|(a, c)| a * c).sum();
        mesh.maps[e].piola_div(d)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Divergence as a modal field of degree p (exact projection).
    pub fn divergence(&self, mesh: &Mesh) -> Result<ScalarField> {
        l2_project_local(|e, xh| self.div(mesh, e, xh), mesh, self.degree, 2 * self.degree + 2)
    }

    /// Largest normal-component jump across interior faces at face quadrature points.
    pub fn max_normal_jump(&self, mesh: &Mesh) -> f64 {
        let mut m = 0.0f64;
        for fid in mesh.interior_faces() {
            let face = &mesh.faces[fid];
            let (e, _) = face.owner;
            let (n, _) = face.neighbor.expect("interior face");
            for (x, _) in face_rule(mesh, fid, 2 * self.degree + 2) {
                let a = self.value(mesh, e, &mesh.maps[e].inverse_map(&x));
                let b = self.value(mesh, n, &mesh.maps[n].inverse_map(&x));
                let jn = (a[0] - b[0]) * face.normal[0] + (a[1] - b[1]) * face.normal[1];
                m = m.max(jn.abs());
            }
        }
        m
    }

    /// Largest absolute normal component on boundary faces.
    pub fn max_boundary_normal(&self, mesh: &Mesh) -> f64 {
        let mut m = 0.0f64;
        for (fid, face) in mesh.faces.iter().enumerate().filter(|(_, f)| f.is_boundary()) {
            let (e, _) = face.owner;
            for (x, _) in face_rule(mesh, fid, 2 * self.degree + 2) {
                let a = self.value(mesh, e, &mesh.maps[e].inverse_map(&x));
                m = m.max((a[0] * face.normal[0] + a[1] * face.normal[1]).abs());
            }
        }
        m
    }
}

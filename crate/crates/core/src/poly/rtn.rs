//! Raviart-Thomas-Nedelec element RTN_p = P_p^d + x P_p on the reference simplex.
//!
//! Degrees of freedom: for every reference face, the moments of the normal
//! component against orthonormal Legendre polynomials L_0..L_p on the face
//! (parameterized from its lower to its higher local vertex), followed by the
//! interior moments of each component against the modal basis of P_{p-1}.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::basis::{eval_monomials, monomial_exponents, num_monomials, scalar_basis};
use super::quadrature::{gauss_legendre, quadrature, QuadratureRule};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct RefFace {
    /// Local vertices of the face in increasing order (second entry unused in 1D).
    pub verts: [usize; 2],
    pub normal: [f64; 2],
    pub measure: f64,
}

/// Face `f` is opposite local vertex `f`.
pub fn reference_faces(dim: usize) -> Vec<RefFace> {
    match dim {
        1 => vec![
            RefFace { verts: [1, 1], normal: [1.0, 0.0], measure: 1.0 },
            RefFace { verts: [0, 0], normal: [-1.0, 0.0], measure: 1.0 },
        ],
        _ => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            vec![
                RefFace { verts: [1, 2], normal: [s, s], measure: std::f64::consts::SQRT_2 },
                RefFace { verts: [0, 2], normal: [-1.0, 0.0], measure: 1.0 },
                RefFace { verts: [0, 1], normal: [0.0, -1.0], measure: 1.0 },
            ]
        }
    }
}

/// Point on reference face `f` at parameter `s` in [0,1].
pub fn face_point(dim: usize, f: usize, s: f64) -> [f64; 2] {
    let v = super::basis::reference_vertices(dim);
    let face = reference_faces(dim)[f];
    if dim == 1 {
        return v[face.verts[0]];
    }
    let a = v[face.verts[0]];
    let b = v[face.verts[1]];
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Orthonormal Legendre polynomial of degree `k` on (0,1).
pub fn legendre01(k: usize, s: f64) -> f64 {
    let t = 2.0 * s - 1.0;
    let (mut p0, mut p1) = (1.0, t);
    let pk = if k == 0 {
        1.0
    } else {
        for j in 2..=k {
            let j = j as f64;
            let p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
            p0 = p1;
            p1 = p2;
        }
        p1
    };
    ((2 * k + 1) as f64).sqrt() * pk
}

#[derive(Clone, Debug)]
pub struct RtnBasis {
    pub dim: usize,
    pub degree: usize,
    /// Row `i`: monomial coefficients (degree p+1) of component 0 followed by component 1.
    pub coeffs: DMatrix<f64>,
    /// `face_dofs[f][k]`: local index of the k-th normal moment on face `f`.
    pub face_dofs: Vec<Vec<usize>>,
    pub interior_dofs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RtnEval {
    pub val: Vec<[f64; 2]>,
    pub div: Vec<f64>,
}

impl RtnBasis {
    pub fn dimension(dim: usize, p: usize) -> usize {
        match dim {
            1 => p + 2,
            _ => (p + 1) * (p + 3),
        }
    }

    pub fn new(dim: usize, p: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        let nm = num_monomials(dim, p + 1);
        let exps = monomial_exponents(dim, p + 1);
        let index_of = |a: usize, b: usize| -> usize {
            if dim == 1 {
                a
            } else {
                let k = a + b;
                k * (k + 1) / 2 + b
            }
        };
        let n_low = num_monomials(dim, p);
        let mut raw: Vec<Vec<f64>> = Vec::new();
        for c in 0..dim {
            for k in 0..n_low {
                let mut r = vec![0.0; 2 * nm];
                r[c * nm + k] = 1.0;
                raw.push(r);
            }
        }
        for e in exps.iter().filter(|e| e[0] + e[1] == p) {
            let mut r = vec![0.0; 2 * nm];
            r[index_of(e[0] + 1, e[1])] = 1.0;
            if dim == 2 {
                r[nm + index_of(e[0], e[1] + 1)] = 1.0;
            }
            raw.push(r);
        }
        let n = raw.len();
        debug_assert_eq!(n, Self::dimension(dim, p));
        let raw = DMatrix::from_fn(n, 2 * nm, |i, j| raw[i][j]);

        let probe = RtnBasis {
            dim,
            degree: p,
            coeffs: raw.clone(),
            face_dofs: Vec::new(),
            interior_dofs: Vec::new(),
        };
        let (dofs, face_dofs, interior_dofs) = probe.dof_matrix()?;
        let inv = dofs
            .try_inverse()
            .ok_or_else(|| Error::SolverFailure("singular RTN DOF matrix".into()))?;
        let coeffs = inv.transpose() * raw;
        Ok(RtnBasis {
            dim,
            degree: p,
            coeffs,
            face_dofs,
            interior_dofs,
        })
    }

    /// DOF functionals applied to the current members: `D[i][j] = dof_i(v_j)`.
    #[allow(clippy::type_complexity)]
    fn dof_matrix(&self) -> Result<(DMatrix<f64>, Vec<Vec<usize>>, Vec<usize>)> {
        let p = self.degree;
        let dim = self.dim;
        let n = self.len();
        let faces = reference_faces(dim);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut face_dofs = Vec::new();
        let (sq, sw) = gauss_legendre(p + 2);
        for (f, face) in faces.iter().enumerate() {
            let mut ids = Vec::new();
            let kmax = if dim == 1 { 0 } else { p };
            for k in 0..=kmax {
                let mut row = vec![0.0; n];
                if dim == 1 {
                    let ev = self.eval(&face_point(dim, f, 0.0));
                    for j in 0..n {
                        row[j] = ev.val[j][0] * face.normal[0];
                    }
                } else {
                    for (s, w) in sq.iter().zip(&sw) {
                        let ev = self.eval(&face_point(dim, f, *s));
                        let l = legendre01(k, *s);
                        for j in 0..n {
                            let vn = ev.val[j][0] * face.normal[0] + ev.val[j][1] * face.normal[1];
                            row[j] += face.measure * w * vn * l;
                        }
                    }
                }
                ids.push(rows.len());
                rows.push(row);
            }
            face_dofs.push(ids);
        }
        let mut interior_dofs = Vec::new();
        if p >= 1 {
            let sb = scalar_basis(dim, p - 1)?;
            let rule = quadrature(dim, 2 * p)?;
            for c in 0..dim {
                for q in 0..sb.len() {
                    let mut row = vec![0.0; n];
                    for (x, w) in rule.iter() {
                        let ev = self.eval(x);
                        let phi = sb.values(x)[q];
                        for j in 0..n {
                            row[j] += w * ev.val[j][c] * phi;
                        }
                    }
                    interior_dofs.push(rows.len());
                    rows.push(row);
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok((m, face_dofs, interior_dofs))
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    pub fn eval(&self, x: &[f64; 2]) -> RtnEval {
        let m = eval_monomials(self.dim, self.degree + 1, x);
        let nm = m.val.len();
        let n = self.len();
        let mut out = RtnEval {
            val: vec![[0.0; 2]; n],
            div: vec![0.0; n],
        };
        for i in 0..n {
            let (mut v0, mut v1, mut d) = (0.0, 0.0, 0.0);
            for k in 0..nm {
                let c0 = self.coeffs[(i, k)];
                let c1 = self.coeffs[(i, nm + k)];
                v0 += c0 * m.val[k];
                v1 += c1 * m.val[k];
                d += c0 * m.dx[k] + c1 * m.dy[k];
            }
            out.val[i] = [v0, v1];
            out.div[i] = d;
        }
        out
    }
}

/// RTN values and divergences tabulated on a quadrature rule.
#[derive(Clone, Debug)]
pub struct RtnTabulation {
    pub rule: Arc<QuadratureRule>,
    pub val: Vec<Vec<[f64; 2]>>,
    pub div: Vec<Vec<f64>>,
}

type BasisCache = Mutex<HashMap<(usize, usize), Arc<RtnBasis>>>;
type TabCache = Mutex<HashMap<(usize, usize, usize), Arc<RtnTabulation>>>;

pub fn rtn_basis(dim: usize, p: usize) -> Result<Arc<RtnBasis>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(b) = cache.lock().unwrap().get(&(dim, p)) {
        return Ok(b.clone());
    }
    let b = Arc::new(RtnBasis::new(dim, p)?);
    cache.lock().unwrap().insert((dim, p), b.clone());
    Ok(b)
}

pub fn rtn_tabulation(dim: usize, p: usize, quad_degree: usize) -> Result<Arc<RtnTabulation>> {
    static CACHE: OnceLock<TabCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (dim, p, quad_degree);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    let basis = rtn_basis(dim, p)?;
    let rule = quadrature(dim, quad_degree)?;
    let mut tab = RtnTabulation {
        rule: rule.clone(),
        val: Vec::with_capacity(rule.len()),
        div: Vec::with_capacity(rule.len()),
    };
    for x in &rule.points {
        let e = basis.eval(x);
        tab.val.push(e.val);
        tab.div.push(e.div);
    }
    let tab = Arc::new(tab);
    cache.lock().unwrap().insert(key, tab.clone());
    Ok(tab)
}

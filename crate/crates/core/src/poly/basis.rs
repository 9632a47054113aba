//! Monomials and orthonormal (modal) scalar bases on the reference simplex.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::quadrature::{quadrature, QuadratureRule};
use crate::error::{Error, Result};

pub fn num_monomials(dim: usize, degree: usize) -> usize {
    match dim {
        1 => degree + 1,
        _ => (degree + 1) * (degree + 2) / 2,
    }
}

/// Exponents in graded order. In 2D, degree `k` block is `(k,0), (k-1,1), ..., (0,k)`.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::with_capacity(num_monomials(dim, degree));
    for k in 0..=degree {
        if dim == 1 {
            out.push([k, 0]);
        } else {
            for j in 0..=k {
                out.push([k - j, j]);
            }
        }
    }
    out
}

/// Monomial values and derivatives up to second order at one point.
#[derive(Clone, Debug, Default)]
pub struct MonomialValues {
    pub val: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dxx: Vec<f64>,
    pub dxy: Vec<f64>,
    pub dyy: Vec<f64>,
}

fn powers(t: f64, n: usize) -> Vec<f64> {
    let mut p = vec![1.0; n + 1];
    for i in 1..=n {
        p[i] = p[i - 1] * t;
    }
    p
}

pub fn eval_monomials(dim: usize, degree: usize, x: &[f64; 2]) -> MonomialValues {
    let px = powers(x[0], degree);
    let py = powers(x[1], degree);
    let pw = |p: &[f64], e: usize, d: usize| -> f64 {
        if e < d {
            0.0
        } else {
            let c: f64 = ((e - d + 1)..=e).map(|k| k as f64).product();
            c * p[e - d]
        }
    };
    let exps = monomial_exponents(dim, degree);
    let mut m = MonomialValues::default();
    for &[a, b] in &exps {
        m.val.push(px[a] * py[b]);
        m.dx.push(pw(&px, a, 1) * py[b]);
        m.dy.push(px[a] * pw(&py, b, 1));
        m.dxx.push(pw(&px, a, 2) * py[b]);
        m.dxy.push(pw(&px, a, 1) * pw(&py, b, 1));
        m.dyy.push(px[a] * pw(&py, b, 2));
    }
    m
}

/// Exact integral of a monomial over the reference simplex.
pub fn monomial_integral(dim: usize, exp: [usize; 2]) -> f64 {
    let fact = |n: usize| -> f64 { (1..=n).map(|k| k as f64).product() };
    match dim {
        1 => 1.0 / (exp[0] as f64 + 1.0),
        _ => fact(exp[0]) * fact(exp[1]) / fact(exp[0] + exp[1] + 2),
    }
}

fn centroid(dim: usize) -> [f64; 2] {
    match dim {
        1 => [0.5, 0.0],
        _ => [1.0 / 3.0, 1.0 / 3.0],
    }
}

fn shift(x: &[f64; 2], c: &[f64; 2]) -> [f64; 2] {
    [x[0] - c[0], x[1] - c[1]]
}

/// Orthonormal basis of P_p on the reference simplex, hierarchical in the degree:
/// the first `num_monomials(dim, q)` members span P_q for every q <= p.
#[derive(Clone, Debug)]
pub struct ScalarBasis {
    pub dim: usize,
    pub degree: usize,
    /// Row `i` holds the coefficients of basis function `i` in monomials
    /// centred at the reference centroid.
    pub coeffs: DMatrix<f64>,
}

/// Value, reference gradient and reference Hessian (xx, xy, yy) of every basis function.
#[derive(Clone, Debug)]
pub struct BasisEval {
    pub val: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub hess: Vec<[f64; 3]>,
}

impl ScalarBasis {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        let n = num_monomials(dim, degree);
        let rule = super::quadrature::make_quadrature(dim, 2 * degree)?;
        let center = centroid(dim);
        let mut gram = DMatrix::zeros(n, n);
        for (x, w) in rule.iter() {
            let m = eval_monomials(dim, degree, &shift(x, &center)).val;
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] += w * m[i] * m[j];
                }
            }
        }
        let mut c = DMatrix::<f64>::identity(n, n);
        // Two passes of Cholesky-based Gram-Schmidt.
        for _ in 0..2 {
            let g = &c * &gram * c.transpose();
            let g = (&g + g.transpose()) * 0.5;
            let chol = g
                .cholesky()
                .ok_or_else(|| Error::SolverFailure(format!("monomial Gram matrix not SPD (degree {degree})")))?;
            let linv = chol
                .l()
                .try_inverse()
                .ok_or_else(|| Error::SolverFailure("singular Cholesky factor".into()))?;
            c = linv * c;
        }
        Ok(ScalarBasis { dim, degree, coeffs: c })
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    pub fn eval(&self, x: &[f64; 2]) -> BasisEval {
        let m = eval_monomials(self.dim, self.degree, &shift(x, &centroid(self.dim)));
        let n = self.len();
        let mut out = BasisEval {
            val: vec![0.0; n],
            grad: vec![[0.0; 2]; n],
            hess: vec![[0.0; 3]; n],
        };
        for i in 0..n {
            let (mut v, mut gx, mut gy, mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for k in 0..m.val.len() {
                let c = self.coeffs[(i, k)];
                if c == 0.0 {
                    continue;
                }
                v += c * m.val[k];
                gx += c * m.dx[k];
                gy += c * m.dy[k];
                hxx += c * m.dxx[k];
                hxy += c * m.dxy[k];
                hyy += c * m.dyy[k];
            }
            out.val[i] = v;
            out.grad[i] = [gx, gy];
            out.hess[i] = [hxx, hxy, hyy];
        }
        out
    }

    pub fn values(&self, x: &[f64; 2]) -> Vec<f64> {
        let m = eval_monomials(self.dim, self.degree, &shift(x, &centroid(self.dim)));
        (0..self.len())
            .map(|i| (0..m.val.len()).map(|k| self.coeffs[(i, k)] * m.val[k]).sum())
            .collect()
    }
}

/// Basis values and gradients tabulated at the points of a quadrature rule.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub rule: Arc<QuadratureRule>,
    /// `val[q][i]`
    pub val: Vec<Vec<f64>>,
    pub grad: Vec<Vec<[f64; 2]>>,
    pub hess: Vec<Vec<[f64; 3]>>,
}

type BasisCache = Mutex<HashMap<(usize, usize), Arc<ScalarBasis>>>;
type TabCache = Mutex<HashMap<(usize, usize, usize), Arc<Tabulation>>>;

pub fn scalar_basis(dim: usize, degree: usize) -> Result<Arc<ScalarBasis>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(b) = cache.lock().unwrap().get(&(dim, degree)) {
        return Ok(b.clone());
    }
    let b = Arc::new(ScalarBasis::new(dim, degree)?);
    cache.lock().unwrap().insert((dim, degree), b.clone());
    Ok(b)
}

pub fn scalar_tabulation(dim: usize, degree: usize, quad_degree: usize) -> Result<Arc<Tabulation>> {
    static CACHE: OnceLock<TabCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (dim, degree, quad_degree);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    let basis = scalar_basis(dim, degree)?;
    let rule = quadrature(dim, quad_degree)?;
    let mut tab = Tabulation {
        rule: rule.clone(),
        val: Vec::with_capacity(rule.len()),
        grad: Vec::with_capacity(rule.len()),
        hess: Vec::with_capacity(rule.len()),
    };
    for x in &rule.points {
        let e = basis.eval(x);
        tab.val.push(e.val);
        tab.grad.push(e.grad);
        tab.hess.push(e.hess);
    }
    let tab = Arc::new(tab);
    cache.lock().unwrap().insert(key, tab.clone());
    Ok(tab)
}

/// Barycentric coordinates of a reference point.
pub fn barycentric(dim: usize, x: &[f64; 2]) -> [f64; 3] {
    match dim {
        1 => [1.0 - x[0], x[0], 0.0],
        _ => [1.0 - x[0] - x[1], x[0], x[1]],
    }
}

/// Reference gradients of the barycentric coordinates.
pub fn barycentric_grads(dim: usize) -> [[f64; 2]; 3] {
    match dim {
        1 => [[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
        _ => [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]],
    }
}

/// Reference vertices of the simplex.
pub fn reference_vertices(dim: usize) -> Vec<[f64; 2]> {
    match dim {
        1 => vec![[0.0, 0.0], [1.0, 0.0]],
        _ => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        for dim in 1..=2 {
            for p in 0..=6 {
                let tab = scalar_tabulation(dim, p, 2 * p).unwrap();
                let n = num_monomials(dim, p);
                for i in 0..n {
                    for j in 0..n {
                        let s: f64 = tab
                            .rule
                            .weights
                            .iter()
                            .enumerate()
                            .map(|(q, w)| w * tab.val[q][i] * tab.val[q][j])
                            .sum();
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((s - e).abs() < 1e-10, "dim {dim} p {p} ({i},{j}) {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn basis_is_hierarchical() {
        let b3 = scalar_basis(2, 3).unwrap();
        let b1 = scalar_basis(2, 1).unwrap();
        let x = [0.2, 0.3];
        let v3 = b3.values(&x);
        let v1 = b1.values(&x);
        for i in 0..3 {
            assert!((v3[i] - v1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = scalar_basis(2, 3).unwrap();
        let x = [0.21, 0.37];
        let e = b.eval(&x);
        let h = 1e-6;
        let vp = b.values(&[x[0] + h, x[1]]);
        let vm = b.values(&[x[0] - h, x[1]]);
        for i in 0..b.len() {
            let fd = (vp[i] - vm[i]) / (2.0 * h);
            assert!((fd - e.grad[i][0]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}

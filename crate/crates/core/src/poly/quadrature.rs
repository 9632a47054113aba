//! Gauss rules on the reference interval (0,1) and the reference triangle
//! {x, y >= 0, x + y <= 1}. Triangle rules are collapsed (Duffy) tensor
//! products of Gauss-Legendre rules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub dim: usize,
    /// Reference coordinates; the second entry is unused when `dim == 1`.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 2], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 2]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Gauss-Legendre nodes and weights on (0,1), exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map (-1,1) -> (0,1)
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule on the reference simplex of dimension `dim` exact for total degree `degree`.
pub fn make_quadrature(dim: usize, degree: usize) -> Result<QuadratureRule> {
    match dim {
        1 => {
            let n = degree / 2 + 1;
            let (x, w) = gauss_legendre(n);
            Ok(QuadratureRule {
                dim,
                points: x.into_iter().map(|x| [x, 0.0]).collect(),
                weights: w,
                exact_degree: degree,
            })
        }
        2 => {
            // x = u (1 - v), y = v, Jacobian (1 - v): degree + 1 in v.
            let nu = degree / 2 + 1;
            let nv = (degree + 1) / 2 + 1;
            let (u, wu) = gauss_legendre(nu);
            let (v, wv) = gauss_legendre(nv);
            let mut points = Vec::with_capacity(nu * nv);
            let mut weights = Vec::with_capacity(nu * nv);
            for (&vj, &wj) in v.iter().zip(&wv) {
                for (&ui, &wi) in u.iter().zip(&wu) {
                    points.push([ui * (1.0 - vj), vj]);
                    weights.push(wi * wj * (1.0 - vj));
                }
            }
            Ok(QuadratureRule {
                dim,
                points,
                weights,
                exact_degree: degree,
            })
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

type RuleCache = Mutex<HashMap<(usize, usize), Arc<QuadratureRule>>>;

/// Cached version of [`make_quadrature`].
pub fn quadrature(dim: usize, degree: usize) -> Result<Arc<QuadratureRule>> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(rule) = cache.lock().unwrap().get(&(dim, degree)) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(make_quadrature(dim, degree)?);
    cache.lock().unwrap().insert((dim, degree), rule.clone());
    Ok(rule)
}

/// Measure of the reference simplex.
pub fn reference_measure(dim: usize) -> f64 {
    match dim {
        1 => 1.0,
        2 => 0.5,
        _ => 1.0 / (1..=dim).map(|k| k as f64).product::<f64>(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn two_point_gauss_integrates_cubic() {
        let rule = make_quadrature(1, 3).unwrap();
        assert_eq!(rule.len(), 2);
        let v = rule.integrate(|x| x[0].powi(3));
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn triangle_area() {
        let rule = make_quadrature(2, 0).unwrap();
        assert!((rule.integrate(|_| 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn triangle_x2y2() {
        let rule = make_quadrature(2, 4).unwrap();
        let v = rule.integrate(|x| x[0] * x[0] * x[1] * x[1]);
        assert!((v - 1.0 / 180.0).abs() < 1e-16);
    }

    #[test]
    fn exact_on_all_monomials() {
        for degree in 0..=14 {
            let r1 = make_quadrature(1, degree).unwrap();
            let r2 = make_quadrature(2, degree).unwrap();
            assert!((r1.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!((r2.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
            for a in 0..=degree {
                let exact = 1.0 / (a as f64 + 1.0);
                let v = r1.integrate(|x| x[0].powi(a as i32));
                assert!((v - exact).abs() < 1e-13 * exact, "1d deg {degree} a {a}");
                for b in 0..=(degree - a) {
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let v = r2.integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32));
                    assert!((v - exact).abs() < 1e-13 * exact, "2d deg {degree} ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn unsupported_dimension() {
        assert!(matches!(make_quadrature(3, 2), Err(Error::UnsupportedDimension(3))));
    }
}

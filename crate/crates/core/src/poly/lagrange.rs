//! Lagrange element of degree p, expressed in the modal basis.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::basis::scalar_basis;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LagrangeElement {
    pub dim: usize,
    pub degree: usize,
    /// Barycentric multi-indices (entries sum to `degree`), one per node.
    pub multi: Vec<[usize; 3]>,
    pub nodes: Vec<[f64; 2]>,
    /// Maps nodal values to modal coefficients.
    pub nodal_to_modal: DMatrix<f64>,
}

impl LagrangeElement {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("Lagrange element needs degree >= 1"));
        }
        let mut multi = Vec::new();
        match dim {
            1 => {
                for i in 0..=degree {
                    multi.push([degree - i, i, 0]);
                }
            }
            2 => {
                for j in 0..=degree {
                    for i in 0..=(degree - j) {
                        multi.push([degree - i - j, i, j]);
                    }
                }
            }
            d => return Err(Error::UnsupportedDimension(d)),
        }
        let pf = degree as f64;
        let nodes: Vec<[f64; 2]> = multi.iter().map(|m| [m[1] as f64 / pf, m[2] as f64 / pf]).collect();
        let basis = scalar_basis(dim, degree)?;
        let n = nodes.len();
        let mut v = DMatrix::zeros(n, n);
        for (i, x) in nodes.iter().enumerate() {
            let vals = basis.values(x);
            for j in 0..n {
                v[(i, j)] = vals[j];
            }
        }
        let nodal_to_modal = v
            .try_inverse()
            .ok_or_else(|| Error::SolverFailure("singular Lagrange Vandermonde matrix".into()))?;
        Ok(LagrangeElement {
            dim,
            degree,
            multi,
            nodes,
            nodal_to_modal,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Modal coefficients of the Lagrange basis function attached to node `k`.
    pub fn modal_of(&self, k: usize) -> Vec<f64> {
        self.nodal_to_modal.column(k).iter().copied().collect()
    }
}

type Cache = Mutex<HashMap<(usize, usize), Arc<LagrangeElement>>>;

pub fn lagrange_element(dim: usize, degree: usize) -> Result<Arc<LagrangeElement>> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(e) = cache.lock().unwrap().get(&(dim, degree)) {
        return Ok(e.clone());
    }
    let e = Arc::new(LagrangeElement::new(dim, degree)?);
    cache.lock().unwrap().insert((dim, degree), e.clone());
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodal_interpolation_property() {
        for dim in 1..=2 {
            for p in 1..=4 {
                let el = lagrange_element(dim, p).unwrap();
                let basis = scalar_basis(dim, p).unwrap();
                for k in 0..el.len() {
                    let c = el.modal_of(k);
                    for (i, x) in el.nodes.iter().enumerate() {
                        let v: f64 = basis.values(x).iter().zip(&c).map(|(a, b)| a * b).sum();
                        let e = if i == k { 1.0 } else { 0.0 };
                        assert!((v - e).abs() < 1e-10);
                    }
                }
            }
        }
    }
}

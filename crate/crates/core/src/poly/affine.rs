//! Affine maps from the reference simplex and the contravariant Piola transform.

use crate::error::{Error, Result};

/// `x = b + J x̂`. In 1D the matrix is padded to `diag(h, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub dim: usize,
    pub jac: [[f64; 2]; 2],
    pub inv: [[f64; 2]; 2],
    pub shift: [f64; 2],
    pub det: f64,
}

impl AffineMap {
    /// Map whose reference vertices go to `verts` (dim + 1 points).
    pub fn from_vertices(dim: usize, verts: &[[f64; 2]]) -> Result<Self> {
        let b = verts[0];
        let jac = match dim {
            1 => [[verts[1][0] - b[0], 0.0], [0.0, 1.0]],
            2 => [
                [verts[1][0] - b[0], verts[2][0] - b[0]],
                [verts[1][1] - b[1], verts[2][1] - b[1]],
            ],
            d => return Err(Error::UnsupportedDimension(d)),
        };
        Self::new(dim, jac, b)
    }

    pub fn new(dim: usize, jac: [[f64; 2]; 2], shift: [f64; 2]) -> Result<Self> {
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let scale = jac.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if !det.is_finite() || det.abs() <= 1e-14 * scale.powi(dim as i32) {
            return Err(Error::InvalidElement {
                element: usize::MAX,
                reason: format!("singular affine map (det = {det:e})"),
            });
        }
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        Ok(AffineMap { dim, jac, inv, shift, det })
    }

    pub fn identity(dim: usize) -> Self {
        AffineMap {
            dim,
            jac: [[1.0, 0.0], [0.0, 1.0]],
            inv: [[1.0, 0.0], [0.0, 1.0]],
            shift: [0.0; 2],
            det: 1.0,
        }
    }

    pub fn abs_det(&self) -> f64 {
        self.det.abs()
    }

    pub fn map(&self, xh: &[f64; 2]) -> [f64; 2] {
        let j = &self.jac;
        let mut x = [
            self.shift[0] + j[0][0] * xh[0] + j[0][1] * xh[1],
            self.shift[1] + j[1][0] * xh[0] + j[1][1] * xh[1],
        ];
        if self.dim == 1 {
            x[1] = self.shift[1];
        }
        x
    }

    pub fn inverse_map(&self, x: &[f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.shift[0], x[1] - self.shift[1]];
        let i = &self.inv;
        if self.dim == 1 {
            return [i[0][0] * d[0], 0.0];
        }
        [i[0][0] * d[0] + i[0][1] * d[1], i[1][0] * d[0] + i[1][1] * d[1]]
    }

    /// Physical gradient from a reference gradient: `J^{-T} ĝ`.
    pub fn grad(&self, g: &[f64; 2]) -> [f64; 2] {
        let i = &self.inv;
        [i[0][0] * g[0] + i[1][0] * g[1], i[0][1] * g[0] + i[1][1] * g[1]]
    }

    /// Physical Laplacian from a reference Hessian (xx, xy, yy): `tr(J^{-T} Ĥ J^{-1})`.
    pub fn laplacian(&self, h: &[f64; 3]) -> f64 {
        let i = &self.inv;
        let hm = [[h[0], h[1]], [h[1], h[2]]];
        let mut tr = 0.0;
        for r in 0..self.dim {
            for a in 0..2 {
                for b in 0..2 {
                    tr += i[a][r] * hm[a][b] * i[b][r];
                }
            }
        }
        tr
    }

    /// Contravariant Piola transform `v = J v̂ / det J`.
    pub fn piola(&self, vh: &[f64; 2]) -> [f64; 2] {
        let j = &self.jac;
        let mut v = [
            (j[0][0] * vh[0] + j[0][1] * vh[1]) / self.det,
            (j[1][0] * vh[0] + j[1][1] * vh[1]) / self.det,
        ];
        if self.dim == 1 {
            v[1] = 0.0;
        }
        v
    }

    /// Inverse Piola transform `v̂ = det J J^{-1} v`.
    pub fn inverse_piola(&self, v: &[f64; 2]) -> [f64; 2] {
        let i = &self.inv;
        let mut vh = [
            self.det * (i[0][0] * v[0] + i[0][1] * v[1]),
            self.det * (i[1][0] * v[0] + i[1][1] * v[1]),
        ];
        if self.dim == 1 {
            vh[1] = 0.0;
        }
        vh
    }

    /// Divergence of a Piola-mapped field from the reference divergence.
    pub fn piola_div(&self, div_hat: f64) -> f64 {
        div_hat / self.det
    }

    /// Operator 2-norms of `J` and `J^{-1}`.
    pub fn norms(&self) -> (f64, f64) {
        let n = |m: &[[f64; 2]; 2]| -> f64 {
            if self.dim == 1 {
                return m[0][0].abs();
            }
            let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
            let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
            let c = m[0][1] * m[0][1] + m[1][1] * m[1][1];
            let tr = a + c;
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            (0.5 * (tr + disc)).sqrt()
        };
        (n(&self.jac), n(&self.inv))
    }
}

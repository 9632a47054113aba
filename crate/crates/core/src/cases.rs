//! Builtin manufactured problems with closed-form solutions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ProblemSpec, Source};
use crate::mesh::{structured_triangle_mesh, uniform_interval_mesh, Mesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseId {
    /// `u = 1 − cosh(κx/ε)/cosh(κ/(2ε))` on `(−1/2, 1/2)`, `f = κ²`.
    BoundaryLayer,
    /// `u = sin(πx(2x−1))` on `(0, 1)`.
    #[serde(rename = "smooth-1d")]
    Smooth1d,
    /// `u = sin(πx) sin(πy)` on the unit square.
    #[serde(rename = "smooth-2d")]
    Smooth2d,
}

impl CaseId {
    pub const ALL: [CaseId; 3] = [CaseId::BoundaryLayer, CaseId::Smooth1d, CaseId::Smooth2d];

    pub fn name(&self) -> &'static str {
        match self {
            CaseId::BoundaryLayer => "boundary-layer",
            CaseId::Smooth1d => "smooth-1d",
            CaseId::Smooth2d => "smooth-2d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CaseId::Smooth2d => 2,
            _ => 1,
        }
    }

    /// `n` intervals, or an `n x n` triangulated square (`2n²` triangles).
    pub fn mesh(&self, n: usize) -> Result<Mesh> {
        match self {
            CaseId::BoundaryLayer => uniform_interval_mesh(n, (-0.5, 0.5)),
            CaseId::Smooth1d => uniform_interval_mesh(n, (0.0, 1.0)),
            CaseId::Smooth2d => structured_triangle_mesh(n, n, [0.0, 1.0, 0.0, 1.0]),
        }
    }

    /// The boundary-layer case is trivial (`u = f = 0`) at `κ = 0`.
    pub fn is_degenerate(&self, kappa: f64) -> bool {
        matches!(self, CaseId::BoundaryLayer) && kappa == 0.0
    }

    pub fn spec(&self, epsilon: f64, kappa: f64) -> Result<ProblemSpec> {
        ProblemSpec::new(epsilon, kappa, Source::function(|_| 0.0))?;
        let (e2, k2) = (epsilon * epsilon, kappa * kappa);
        let spec = match self {
            CaseId::BoundaryLayer => {
                let a = kappa / epsilon;
                let den = 1.0 + (-a).exp();
                let u = move |x: &[f64; 2]| {
                    let t = x[0].abs();
                    1.0 - ((a * (t - 0.5)).exp() + (-a * (t + 0.5)).exp()) / den
                };
                let du = move |x: &[f64; 2]| {
                    let t = x[0].abs();
                    let g = -a * ((a * (t - 0.5)).exp() - (-a * (t + 0.5)).exp()) / den;
                    [g * x[0].signum(), 0.0]
                };
                ProblemSpec::new(epsilon, kappa, Source::function(move |_| k2))?.with_exact(Arc::new(u), Arc::new(du))
            }
            CaseId::Smooth1d => {
                let phi = |x: f64| PI * x * (2.0 * x - 1.0);
                let dphi = |x: f64| PI * (4.0 * x - 1.0);
                let f = move |x: &[f64; 2]| {
                    let (s, c, d) = (phi(x[0]).sin(), phi(x[0]).cos(), dphi(x[0]));
                    e2 * (s * d * d - 4.0 * PI * c) + k2 * s
                };
                ProblemSpec::new(epsilon, kappa, Source::function(f))?.with_exact(
                    Arc::new(move |x| phi(x[0]).sin()),
                    Arc::new(move |x| [phi(x[0]).cos() * dphi(x[0]), 0.0]),
                )
            }
            CaseId::Smooth2d => {
                let c = 2.0 * e2 * PI * PI + k2;
                let u = |x: &[f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
                ProblemSpec::new(epsilon, kappa, Source::function(move |x| c * u(x)))?.with_exact(
                    Arc::new(u),
                    Arc::new(|x| {
                        [
                            PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                            PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                        ]
                    }),
                )
            }
        };
        Ok(spec)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown case '{s}'")))
    }
}

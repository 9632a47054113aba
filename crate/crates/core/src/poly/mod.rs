//! Reference-element machinery: quadrature, scalar and RTN bases, affine maps, fields.

pub mod affine;
pub mod basis;
pub mod field;
pub mod lagrange;
pub mod quadrature;
pub mod rtn;

pub use affine::AffineMap;
pub use basis::{scalar_basis, ScalarBasis};
pub use field::{l2_project, l2_project_local, Conformity, FluxField, ScalarField};
pub use lagrange::{lagrange_element, LagrangeElement};
pub use quadrature::{make_quadrature, quadrature, QuadratureRule};
pub use rtn::{rtn_basis, RtnBasis};

/// Default quadrature degree for bilinear terms.
pub fn bilinear_degree(p: usize) -> usize {
    2 * p + 2
}

/// Default quadrature degree for terms involving non-polynomial data.
pub fn data_degree(p: usize) -> usize {
    2 * p + 4
}

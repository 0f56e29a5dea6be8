//! Effective conductivity of composites with thin interphases.
//!
//! The effective tensor of a composite whose interphases have total
//! thickness `h` is approximated by the tensor of a reference composite (the
//! interphases collapsed onto perfect interfaces) plus a first-order
//! correction that only needs the reference fields on those interfaces.
//!
//! * [`geometry`]: conductivity tensors, field vectors, interface meshes.
//! * [`assemblage`]: closed forms for the doubly coated sphere assemblage and
//!   for laminates.
//! * [`shift`]: interface-shift and interphase corrections as surface sums.
//! * [`solver`]: periodic Lippmann-Schwinger solver supplying interface fields.

// `!(x > 0.0)` style comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assemblage;
pub mod error;
pub mod geometry;
pub mod shift;
pub mod solver;
mod summation;

pub use error::{Error, Result};
pub use geometry::{
    decompose_field, make_isotropic, quadratic_form, ConductivityTensor, FieldVector, InterfaceMesh,
    InterfacePatch, Matrix, OneSided, Side, SideFields,
};

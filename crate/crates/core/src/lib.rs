//! Numerical homogenization of perforated second-grade viscoelastic solids.
//!
//! The crate discretizes deformations of periodically perforated planar
//! domains with C1 bicubic Hermite elements, advances the quasistatic
//! viscoelastic model by incremental minimization, solves the periodic
//! strain-gradient cell problem that defines the homogenized energy and
//! provides diagnostics for unfolding, extension and Korn-type inequalities.
//!
//! Element loops run through [`exec::ExecPolicy`], data-parallel with the
//! `parallel` feature (on by default).

pub mod c1grid;
pub mod exec;
pub mod funineq;
pub mod geometry;
pub mod homog;
pub mod linalg;
pub mod materials;
pub mod micro;
pub mod solver;
pub mod tensor;
pub mod twoscale;

pub use c1grid::{C1Error, C1Field, C1Space, Jet2, QpInfo, SpaceSource};
pub use exec::ExecPolicy;
pub use geometry::{Face, FacetTag, GeometryError, PerforatedDomain, Rational, Rect, UnitCell};
pub use materials::{Coefficient, DissipationLaw, ElasticLaw, MaterialBundle, StrainGradientLaw};
pub use tensor::{Mat2, Tens3};

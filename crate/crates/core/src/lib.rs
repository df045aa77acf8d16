//! Newton-type methods for generalized equations over boxes, analysed as
//! input-to-state stable systems driven by disturbances.
//!
//! The layers build on each other: [`geometry`] (boxes, normal cones,
//! projections), [`subproblem`] (mixed affine variational inequalities),
//! [`geneq`] (Josephy-Newton iteration), [`multistep`] (two-block schemes),
//! [`nlp`] (SQP, quasi-Newton, augmented Lagrangian) and [`iss`] (gain
//! estimation). [`experiment`] and [`cli`] drive reproducible runs.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod geneq;
pub mod geometry;
pub mod iss;
pub mod linalg;
pub mod multistep;
pub mod nlp;
pub mod registry;
pub mod subproblem;

pub use error::{Error, Result};

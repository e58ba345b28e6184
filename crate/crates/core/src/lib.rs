//! Lead-field ECG simulation on 2-D torso sections with uncertainty
//! quantification for electrode placement.
//!
//! The library builds an idealized heart-torso mesh, simulates the
//! activation sequence with an anisotropic eikonal model, and computes
//! deterministic and statistical ECG signals through lead fields: the
//! expectation of a lead under random electrode positions costs one
//! elliptic solve, and its correlation costs one solve per factor of a
//! truncated pivoted Cholesky factorization of the boundary correlation
//! matrix, independent of the number of time steps.
//!
//! Validation paths (per-time-step forward solves with pointwise
//! evaluation, Monte-Carlo electrode sampling, and a dense tensor-product
//! correlation solve on small meshes) live in [`oracle`].
//!
//! See the guide under `book/` for a narrative walk-through; its code
//! snippets compile and run as doctests of this crate.

pub mod activation;
pub mod assembly;
pub mod cli;
pub mod config;
pub mod density;
pub mod ecg;
pub mod error;
pub mod linsolve;
pub mod lowrank;
pub mod mesh;
pub mod oracle;
mod quadrature;
pub mod report;

pub use error::{Error, Result};
pub use quadrature::pl_boundary_integral;

/// The guide chapters double as doctests so the book stays in sync with
/// the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(geometry, "../../../book/src/geometry.md");
    chapter!(densities, "../../../book/src/densities.md");
    chapter!(activation, "../../../book/src/activation.md");
    chapter!(lead_fields, "../../../book/src/lead-fields.md");
    chapter!(correlation, "../../../book/src/correlation.md");
    chapter!(validation, "../../../book/src/validation.md");
    chapter!(cli, "../../../book/src/cli.md");
}

//! Solvers for ergodic mean field control and stationary mean field games
//! on the unit torus.
//!
//! The crate provides two neural solvers (a direct Gibbs-reparametrized
//! cost minimization and a Deep Galerkin residual solver for the coupled
//! optimality system), a 1D finite-difference benchmark, analytic test
//! cases with known solutions, and a particle simulator, all driven by a
//! JSON-configured CLI.

pub mod algo1;
pub mod bench;
pub mod cli;
pub mod dgm;
pub mod field;
pub mod model;
pub mod net;
pub mod opt;
pub mod sde;
pub mod tape;

/// Guide chapters, compiled as doctests so the book stays in sync with
/// the library.
#[cfg(doctest)]
mod guide {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(overview, "../../../book/src/overview.md");
    chapter!(model, "../../../book/src/model.md");
    chapter!(direct, "../../../book/src/direct.md");
    chapter!(dgm, "../../../book/src/dgm.md");
    chapter!(bench, "../../../book/src/bench.md");
    chapter!(sde, "../../../book/src/sde.md");
    chapter!(cli, "../../../book/src/cli.md");
}

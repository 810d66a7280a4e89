//! Finite-difference solvers for the Dirichlet problem of the elliptic
//! Monge-Ampère equation `det(D²u) = f` on the unit box in two and three
//! dimensions.
//!
//! Three discretizations are provided: the standard centred-difference
//! scheme, a monotone wide-stencil scheme built on the variational
//! characterization of the determinant, and a hybrid that blends the two
//! with a weight field chosen a priori from the data. The resulting
//! nonlinear systems are solved by damped Newton iteration with sparse
//! Jacobians; explicit and semi-implicit iterations are included for
//! comparison.

pub mod discretization;
pub mod error;
pub mod grid;
pub mod linearization;
pub mod linsolve;
pub mod problems;
pub mod reporting;
pub mod solvers;
pub mod stencil;

pub use discretization::{Residual, Scheme, WeightField};
pub use error::{MaError, Result};
pub use grid::{Field, GridFunction, GridSpec, InteriorMap, PointClass};
pub use linearization::SparseMatrix;
pub use problems::Problem;
pub use solvers::{SolveReport, SolverConfig, Termination};
pub use stencil::{BoundaryTrace, Direction, DirectionMode, StencilBasisSet};

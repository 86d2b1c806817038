//! Numerical laboratory for solitary waves of the two-dimensional
//! Zakharov–Kuznetsov equation `∂t u + ∂x(Δu + u²) = 0` on a periodic box.

pub mod functionals;
pub mod grid;
pub mod groundstate;
pub mod invariants;
pub mod linop;
pub mod modulation;
pub mod snapshot;
pub mod template;
pub mod zk_solver;

pub use grid::{Grid, GridError, RealField};
pub use groundstate::{solve_ground_state, GroundState, GroundStateError};

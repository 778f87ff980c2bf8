//! Asymptotic-preserving finite-volume schemes for plasma fluid models.
//!
//! The crate covers three families of solvers that share a common design:
//! implicit evaluation of a small number of flux/source terms turns a
//! singularly perturbed problem into one whose time step is independent of
//! the stiffness parameter.
//!
//! - [`euler_poisson`]: 1D electron fluid coupled to the Poisson equation,
//!   uniformly stable in the scaled Debye length.
//! - [`euler_maxwell`]: 1D electron fluid coupled to the full Maxwell system
//!   (components `n, q_x, q_y, E_x, E_y, B_z`).
//! - [`lorentz`]: 3D ion fluid in a given electromagnetic field, uniformly
//!   stable in the scaled gyro-period, with a drift-limit diagnostic.
//!
//! Supporting modules: [`grid`] (uniform lattices and ghost cells),
//! [`flux`] (central + Rusanov fluxes and their implicit corrections),
//! [`linsolve`] (tridiagonal/cyclic/sparse direct solves and condition
//! estimation), [`stability`] (linearized amplification analysis) and
//! [`aniso`] (field-aligned elliptic solvers, naive and micro-macro).

pub mod aniso;
pub mod closure;
pub mod euler_maxwell;
pub mod euler_poisson;
pub mod flux;
pub mod grid;
pub mod linsolve;
pub mod lorentz;
pub mod stability;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on user input was violated.
    InvalidInput(String),
    /// A linear system could not be solved (singular or inconsistent).
    Singular(String),
    /// The requested configuration is outside the supported scope.
    Unsupported(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::Singular(m) => write!(f, "singular system: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

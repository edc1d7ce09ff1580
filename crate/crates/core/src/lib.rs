//! Fisher-KPP traveling fronts, measure superpositions of fronts, and
//! numerical checks of their qualitative behaviour.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod interp;
pub mod measures;
pub mod nonlinearity;
pub mod pde;
pub mod profile_bank;
pub mod profiles;
pub mod quadrature;
pub mod steepness;

pub use error::{Error, Result};
pub use nonlinearity::{KppClass, Nonlinearity};
pub use pde::{Boundary, Coefficients, Field, Grid1D, SolverConfig, Window};
pub use profile_bank::ProfileBank;
pub use profiles::{decay_rate, psi, FrontProfile, Query};

//! Target networks versus functional regularization for Q-value estimation:
//! exact spectral analysis under linear function approximation, and
//! sample-based Q-learning on small gridworlds.

pub mod disk;
pub mod error;
pub mod fourrooms;
pub mod numeric;
pub mod linear_fa;
pub mod mdp;
pub mod qlearn;
pub mod smallmat;
pub mod verify;

pub use error::{Error, Result};
pub use numeric::NumericPolicy;
pub use linear_fa::{Algorithm, Classification, IterationSpec, LinearFaProblem, SpectralReport, WeightVector};
pub use mdp::{Mdp, Policy, QTable};
pub use smallmat::{Matrix, Spectrum};

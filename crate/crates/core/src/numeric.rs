//! Tolerances shared by every operation and test.

/// One record for all numeric thresholds so operations and tests agree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericPolicy {
    /// Entrywise agreement for identities such as `a * a^-1 = I`.
    pub entrywise: f64,
    /// Convergence target for the eigenvalue iteration.
    pub spectral: f64,
    /// Half-width of the "marginal" band around a spectral radius of 1.
    pub marginal_band: f64,
    /// `|w|_inf` above which a trajectory is declared divergent.
    pub blowup: f64,
    /// Largest condition estimate accepted by `mat_inverse`.
    pub max_condition: f64,
    /// QR sweeps allowed per eigenvalue before giving up.
    pub qr_iterations_per_eigenvalue: usize,
    pub stationary_tol: f64,
    pub stationary_max_iterations: usize,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        entrywise: 1e-10,
        spectral: 1e-10,
        marginal_band: 1e-9,
        blowup: 1e8,
        max_condition: 1e12,
        qr_iterations_per_eigenvalue: 60,
        stationary_tol: 1e-13,
        stationary_max_iterations: 2_000_000,
    };
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}

//! Outer-step error propagation, spectral classification and trajectories.

use serde::{Deserialize, Serialize};

use super::LinearFaProblem;
use crate::error::{Error, Result};
use crate::numeric::NumericPolicy;
use crate::smallmat::{
    condition_number_complex, eigenvectors, inverse_named, mat_mul, mat_power, norm_inf, spectral_norm, spectrum,
    Matrix, Spectrum,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td0,
    Tn,
    Fr,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Td0 => "td",
            Algorithm::Tn => "tn",
            Algorithm::Fr => "fr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSpec {
    pub algorithm: Algorithm,
    pub eta: f64,
    /// Inner steps per frozen update; ignored by TD(0).
    pub period: u64,
    /// Regularization weight; FR only.
    pub kappa: f64,
}

impl IterationSpec {
    pub fn new(algorithm: Algorithm, eta: f64, period: u64, kappa: f64) -> Result<IterationSpec> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        if period == 0 {
            return Err(Error::invalid("period must be at least 1"));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be nonnegative, got {kappa}")));
        }
        Ok(IterationSpec { algorithm, eta, period, kappa })
    }

    pub fn td(eta: f64) -> Result<IterationSpec> {
        IterationSpec::new(Algorithm::Td0, eta, 1, 0.0)
    }

    pub fn tn(eta: f64, period: u64) -> Result<IterationSpec> {
        IterationSpec::new(Algorithm::Tn, eta, period, 0.0)
    }

    pub fn fr(eta: f64, period: u64, kappa: f64) -> Result<IterationSpec> {
        IterationSpec::new(Algorithm::Fr, eta, period, kappa)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    TdStep,
    TnComposed,
    FrComposed,
    TnLimit,
    FrLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Converges,
    Diverges,
    Marginal,
}

impl Classification {
    pub fn from_radius(radius: f64, band: f64) -> Classification {
        if radius < 1.0 - band {
            Classification::Converges
        } else if radius > 1.0 + band {
            Classification::Diverges
        } else {
            Classification::Marginal
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Classification::Converges => "converges",
            Classification::Diverges => "diverges",
            Classification::Marginal => "marginal",
        }
    }
}

/// Serialized as `{kind, eigenvalues: [[re, im]], radius, classification}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub kind: MatrixKind,
    #[serde(flatten)]
    pub spectrum: Spectrum,
    pub classification: Classification,
}

impl SpectralReport {
    pub fn radius(&self) -> f64 {
        self.spectrum.radius
    }
}

pub fn classify_matrix(kind: MatrixKind, m: &Matrix) -> Result<SpectralReport> {
    let spectrum = spectrum(m)?;
    let classification = Classification::from_radius(spectrum.radius, NumericPolicy::DEFAULT.marginal_band);
    Ok(SpectralReport { kind, spectrum, classification })
}

fn composed_kind(algorithm: Algorithm) -> MatrixKind {
    match algorithm {
        Algorithm::Td0 => MatrixKind::TdStep,
        Algorithm::Tn => MatrixKind::TnComposed,
        Algorithm::Fr => MatrixKind::FrComposed,
    }
}

/// `γΥ = γ(ΦᵀDΦ)⁻¹ΦᵀDPΦ`.
pub fn tn_limit_matrix(p: &LinearFaProblem) -> Matrix {
    p.upsilon().scale(p.gamma())
}

/// `κA_κ⁻¹ΦᵀDΦ`.
pub fn fr_limit_matrix(p: &LinearFaProblem, kappa: f64) -> Result<Matrix> {
    let a_inv = inverse_named(&p.a_kappa(kappa), "A_kappa")?;
    Ok(mat_mul(&a_inv, p.gram())?.scale(kappa))
}

/// The matrix `M` with `w_next − w* = M(w − w*)` for one outer step.
///
/// TD: `I − ηA₀`. TN: `E^T(I − γΥ) + γΥ` with `E = I − ηΦᵀDΦ`.
/// FR: `(I − ηA_κ)^T(I − F) + F` with `F = κA_κ⁻¹ΦᵀDΦ`.
pub fn iteration_matrix(p: &LinearFaProblem, spec: &IterationSpec) -> Result<Matrix> {
    let n = p.n_features();
    let id = Matrix::identity(n);
    match spec.algorithm {
        Algorithm::Td0 => id.sub(&p.a_kappa(0.0).scale(spec.eta)),
        Algorithm::Tn => {
            let limit = tn_limit_matrix(p);
            let e = id.sub(&p.gram().scale(spec.eta))?;
            mat_mul(&mat_power(&e, spec.period)?, &id.sub(&limit)?)?.add(&limit)
        }
        Algorithm::Fr => {
            let limit = fr_limit_matrix(p, spec.kappa)?;
            let b = id.sub(&p.a_kappa(spec.kappa).scale(spec.eta))?;
            mat_mul(&mat_power(&b, spec.period)?, &id.sub(&limit)?)?.add(&limit)
        }
    }
}

/// Spectrum and verdict for the composed matrix of `spec`.
///
/// When the inner power overflows the report carries an empty eigenvalue
/// list, an infinite radius and a "diverges" verdict.
pub fn classify(p: &LinearFaProblem, spec: &IterationSpec) -> Result<SpectralReport> {
    let kind = composed_kind(spec.algorithm);
    match iteration_matrix(p, spec) {
        Ok(m) => classify_matrix(kind, &m),
        Err(Error::NonFinite { .. }) => Ok(SpectralReport {
            kind,
            spectrum: Spectrum { eigenvalues: Vec::new(), radius: f64::INFINITY },
            classification: Classification::Diverges,
        }),
        Err(e) => Err(e),
    }
}

/// Step size that makes every inner step a contraction where one exists.
///
/// TN uses `1/λ_max(ΦᵀDΦ)`. TD and FR use `min Re λ / |λ|²` over
/// `λ ∈ Sp(A_κ)` when the whole spectrum lies in the open right half-plane,
/// which guarantees `|1 − ηλ| < 1` for every eigenvalue; otherwise
/// `1/max|λ|`. For a single feature both reduce to `1/A_κ` (or `1/|A_κ|`).
pub fn adaptive_eta(p: &LinearFaProblem, algorithm: Algorithm, kappa: f64) -> Result<f64> {
    let s = match algorithm {
        Algorithm::Tn => return Ok(1.0 / spectrum(p.gram())?.radius),
        Algorithm::Td0 => spectrum(&p.a_kappa(0.0))?,
        Algorithm::Fr => spectrum(&p.a_kappa(kappa))?,
    };
    if s.radius == 0.0 {
        return Err(Error::Singular { what: "A_kappa".into(), pivot: 0.0 });
    }
    if s.eigenvalues.iter().all(|z| z.re > 0.0) {
        Ok(s.eigenvalues.iter().map(|z| z.re / z.norm_sqr()).fold(f64::INFINITY, f64::min))
    } else {
        Ok(1.0 / s.radius)
    }
}

/// Weights after each outer step; `weights[0]` is the start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub weights: Vec<Vec<f64>>,
    pub diverged: bool,
    /// Outer step at which `‖w‖∞` first exceeded the blow-up bound.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.weights.last().expect("trajectory holds the start point")
    }
}

/// Runs the two-timescale loop: freeze `w̄ = w`, take `T` semi-gradient
/// steps, repeat. TD(0) takes one step per outer iteration.
///
/// The semi-gradients are evaluated through the cached `p x p` products,
/// e.g. for TN `ΦᵀDΦw − γΦᵀDPΦw̄ − ΦᵀDR`.
pub fn run_iteration(p: &LinearFaProblem, spec: &IterationSpec, w0: &[f64], outer_steps: usize) -> Result<Trajectory> {
    if outer_steps == 0 {
        return Err(Error::invalid("outer_steps must be at least 1"));
    }
    if w0.len() != p.n_features() {
        return Err(Error::dims("run_iteration", "w0 has the wrong length"));
    }
    let blowup = NumericPolicy::DEFAULT.blowup;
    let b = p.phi_d_r();
    // Inner update: w ← w − η(H w − K w̄ − b).
    let (h, k, inner) = match spec.algorithm {
        Algorithm::Td0 => (p.a_kappa(0.0), Matrix::zeros(p.n_features(), p.n_features()), 1),
        Algorithm::Tn => (p.gram().clone(), p.cross().scale(p.gamma()), spec.period),
        Algorithm::Fr => (p.a_kappa(spec.kappa), p.gram().scale(spec.kappa), spec.period),
    };
    let mut w = w0.to_vec();
    let mut weights = vec![w.clone()];
    for step in 1..=outer_steps {
        let kw = k.mul_vec(&w)?;
        let shift: Vec<f64> = kw.iter().zip(b).map(|(x, y)| x + y).collect();
        for _ in 0..inner {
            let hw = h.mul_vec(&w)?;
            for i in 0..w.len() {
                w[i] -= spec.eta * (hw[i] - shift[i]);
            }
        }
        let blown = !w.iter().all(|x| x.is_finite()) || norm_inf(&w) > blowup;
        weights.push(w.clone());
        if blown {
            return Ok(Trajectory { weights, diverged: true, diverged_at: Some(step) });
        }
    }
    Ok(Trajectory { weights, diverged: false, diverged_at: None })
}

/// Smallest period `K` that the Bauer–Fike argument certifies for TN:
/// `K > log(C / (1 − γρ(Υ))) / log(1 / ‖I − ηΦᵀDΦ‖₂)` with
/// `C = cond₂(V)·‖I − γΥ‖₂` and `V` the eigenvectors of `Υ`.
pub fn k_lower_bound(p: &LinearFaProblem, eta: f64) -> Result<u64> {
    let ups = p.upsilon();
    let spec = spectrum(&ups)?;
    let g_rho = p.gamma() * spec.radius;
    if g_rho >= 1.0 {
        return Err(Error::BoundInapplicable(format!("gamma * rho(Upsilon) = {g_rho} >= 1")));
    }
    let n = p.n_features();
    let e_norm = spectral_norm(&Matrix::identity(n).sub(&p.gram().scale(eta))?)?;
    if e_norm >= 1.0 {
        return Err(Error::BoundInapplicable(format!("||I - eta Gram|| = {e_norm} >= 1")));
    }
    if e_norm == 0.0 {
        return Ok(1);
    }
    let cond_v = condition_number_complex(&eigenvectors(&ups, &spec)?)?;
    if !cond_v.is_finite() || cond_v > 1e14 {
        return Err(Error::BoundInapplicable("Upsilon is not diagonalizable".into()));
    }
    let c = cond_v * spectral_norm(&Matrix::identity(n).sub(&ups.scale(p.gamma()))?)?;
    let bound = (c / (1.0 - g_rho)).ln() / (1.0 / e_norm).ln();
    if !(bound < 1e18) {
        return Err(Error::BoundInapplicable(format!("bound {bound} does not fit a period")));
    }
    Ok(if bound < 1.0 { 1 } else { bound.floor() as u64 + 1 })
}

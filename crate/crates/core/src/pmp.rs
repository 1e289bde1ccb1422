//! Maximum-principle diagnostics: switching function, control Hamiltonian,
//! case classification and the singular band of the regularizer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{evaluate, CostSpec};
use crate::dynamics::Protocol;
use crate::error::{Error, Result};
use crate::linalg::{cdot, C64};
use crate::operators::{HamiltonianPair, NormKind};

/// Relative band tolerance for `ζ > 0`.
pub const BAND_TOL: f64 = 1e-3;
/// Distance from 0 or 1 that still counts as a bang.
pub const U_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    Singular,
    BangZero,
    BangOne,
    Violated,
}

impl CaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseLabel::Singular => "singular",
            CaseLabel::BangZero => "bang_zero",
            CaseLabel::BangOne => "bang_one",
            CaseLabel::Violated => "violated",
        }
    }
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CaseLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "singular" => Ok(CaseLabel::Singular),
            "bang_zero" => Ok(CaseLabel::BangZero),
            "bang_one" => Ok(CaseLabel::BangOne),
            "violated" => Ok(CaseLabel::Violated),
            other => Err(Error::Config(format!("unknown case label {other:?}"))),
        }
    }
}

/// `m_lb = max ∂q(0)`, `m_ub = min ∂q(1)` and the all-singular weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularBand {
    pub m_lb: f64,
    pub m_ub: f64,
    /// `+∞` when `m_lb` and `m_ub` share a sign.
    #[serde(with = "infinite_as_null")]
    pub zeta_threshold: f64,
}

impl SingularBand {
    /// Whether every optimal protocol is forced to bang at both ends.
    pub fn has_threshold(&self) -> bool {
        self.zeta_threshold.is_finite()
    }

    pub fn warning(&self) -> Option<&'static str> {
        (!self.has_threshold()).then_some(
            "subgradients at u=0 and u=1 share a sign: the optimal solution may be zero or one at the start or at the end, but not necessarily at both",
        )
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Band tolerance and bang tolerance used by [`classify_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTolerance {
    pub band: f64,
    pub u: f64,
}

impl ClassifyTolerance {
    /// `1e-3·ζ·(1 + max(|m_lb|, |m_ub|))` for `ζ > 0`. At `ζ = 0` the band
    /// collapses to `{0}` and the tolerance becomes `1e-3·mu_scale`, with
    /// `mu_scale = 1 + ‖λ(T)‖ σ_max(F)` bounding `|μ|`.
    pub fn new(band: &SingularBand, zeta: f64, mu_scale: f64) -> Self {
        let band_tol = if zeta > 0.0 {
            BAND_TOL * zeta * (1.0 + band.m_lb.abs().max(band.m_ub.abs()))
        } else {
            BAND_TOL * mu_scale
        };
        Self {
            band: band_tol,
            u: U_TOL,
        }
    }
}

/// `μ = -i⟨λ|F|x⟩ + i⟨x|F|λ⟩ = 2 Im⟨λ|F|x⟩`.
pub fn switching_mu(x: &DVector<C64>, lam: &DVector<C64>, ham: &HamiltonianPair) -> f64 {
    let mut fx = vec![C64::new(0.0, 0.0); ham.dim()];
    ham.apply_f(1.0, x.as_slice(), &mut fx);
    2.0 * cdot(lam.as_slice(), &fx).im
}

/// `𝕳 = i⟨x|H(u)|λ⟩ - i⟨λ|H(u)|x⟩ - ζ q(u) = 2 Im⟨λ|H(u)|x⟩ - ζ q(u)`.
pub fn control_hamiltonian(
    x: &DVector<C64>,
    lam: &DVector<C64>,
    u: f64,
    ham: &HamiltonianPair,
    spec: &CostSpec,
) -> Result<f64> {
    crate::operators::check_control(u)?;
    let mut hx = vec![C64::new(0.0, 0.0); ham.dim()];
    ham.apply_h(u, 1.0, 0.0, x.as_slice(), &mut hx);
    let h = 2.0 * cdot(lam.as_slice(), &hx).im;
    if spec.zeta == 0.0 {
        return Ok(h);
    }
    Ok(h - spec.zeta * ham.q_value(u, spec.norm)?)
}

/// Case label for one step from the band inequalities.
pub fn classify_step(mu_k: f64, band: &SingularBand, zeta: f64, u_k: f64, tol: &ClassifyTolerance) -> CaseLabel {
    let lo = zeta * band.m_lb;
    let hi = zeta * band.m_ub;
    if lo - tol.band <= mu_k && mu_k <= hi + tol.band {
        CaseLabel::Singular
    } else if mu_k <= lo + tol.band && u_k <= tol.u {
        CaseLabel::BangZero
    } else if mu_k >= hi - tol.band && u_k >= 1.0 - tol.u {
        CaseLabel::BangOne
    } else {
        CaseLabel::Violated
    }
}

/// Band edges for `kind` and the weight `2 σ_max(F) σ_max(C) / min(|m_lb|, |m_ub|)`
/// above which every step is singular.
pub fn singular_band(ham: &HamiltonianPair, kind: NormKind) -> Result<SingularBand> {
    let (m_lb, m_ub) = ham.band_edges(kind)?;
    let zeta_threshold = if m_lb < 0.0 && m_ub > 0.0 {
        2.0 * ham.sigma_max_f() * ham.sigma_max_c() / m_lb.abs().min(m_ub.abs())
    } else {
        f64::INFINITY
    };
    Ok(SingularBand {
        m_lb,
        m_ub,
        zeta_threshold,
    })
}

/// Smallest `ζ` guaranteeing an all-singular optimum (`+∞` if none exists).
pub fn sufficient_zeta(ham: &HamiltonianPair, kind: NormKind) -> Result<f64> {
    Ok(singular_band(ham, kind)?.zeta_threshold)
}

/// `u* = (∂q)^{-1}(μ / ζ)` for a singular step.
pub fn analytic_singular_u(
    x: &DVector<C64>,
    lam: &DVector<C64>,
    ham: &HamiltonianPair,
    kind: NormKind,
    zeta: f64,
) -> Result<f64> {
    singular_u_from_mu(switching_mu(x, lam, ham), ham, kind, zeta)
}

/// `(∂q)^{-1}(μ / ζ)` for a given switching value.
pub fn singular_u_from_mu(mu: f64, ham: &HamiltonianPair, kind: NormKind, zeta: f64) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(Error::Config(format!("analytic singular control needs zeta > 0, got {zeta}")));
    }
    Ok(ham.q_subgradient_inverse(mu / zeta, kind)?.u)
}

/// Maximum-principle diagnostics along a protocol's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmpDiagnostics {
    /// `μ(x(τ_k), λ(τ_k))` at the `K + 1` grid nodes.
    pub mu: Vec<f64>,
    /// `(1/dt) ∫ μ dτ` over each step, i.e. minus the terminal-cost
    /// gradient per unit time. This is the discrete switching function used
    /// for classification.
    pub mu_step: Vec<f64>,
    /// `𝕳` at the `K + 1` nodes, using the control of the step that starts
    /// there (the last node uses the final step's control).
    pub control_hamiltonian: Vec<f64>,
    pub case_labels: Vec<CaseLabel>,
    pub singular_fraction: f64,
    pub band: SingularBand,
    pub tolerance: ClassifyTolerance,
    pub zeta: f64,
    /// `1 + ‖λ(T)‖ σ_max(F)`, the natural scale of `|μ|`.
    pub mu_scale: f64,
}

impl PmpDiagnostics {
    pub fn hamiltonian_mean(&self) -> f64 {
        self.control_hamiltonian.iter().sum::<f64>() / self.control_hamiltonian.len() as f64
    }

    /// `max 𝕳 - min 𝕳` along the trajectory.
    pub fn hamiltonian_spread(&self) -> f64 {
        let (lo, hi) = self
            .control_hamiltonian
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
        hi - lo
    }

    pub fn count(&self, label: CaseLabel) -> usize {
        self.case_labels.iter().filter(|&&l| l == label).count()
    }
}

/// Computes trajectory, co-states, `μ`, `𝕳` and case labels for `protocol`.
pub fn diagnose(ham: &HamiltonianPair, protocol: &Protocol, spec: &CostSpec) -> Result<PmpDiagnostics> {
    let eval = evaluate(ham, protocol, &CostSpec { zeta: 0.0, ..*spec })?;
    let states = &eval.trajectory.states;
    let costates = &eval.adjoint.costates;
    let values = protocol.values();
    let k = values.len();
    let dt = protocol.grid().dt();

    let mu: Vec<f64> = states.iter().zip(costates).map(|(x, l)| switching_mu(x, l, ham)).collect();
    let mu_step: Vec<f64> = eval.terminal_gradient.iter().map(|g| -g / dt).collect();
    let control_hamiltonian = (0..=k)
        .map(|i| control_hamiltonian(&states[i], &costates[i], values[i.min(k - 1)], ham, spec))
        .collect::<Result<Vec<f64>>>()?;

    let band = singular_band(ham, spec.norm)?;
    let mu_scale = 1.0 + costates[k].norm() * ham.sigma_max_f();
    let tolerance = ClassifyTolerance::new(&band, spec.zeta, mu_scale);
    let case_labels: Vec<CaseLabel> = mu_step
        .iter()
        .zip(values)
        .map(|(&m, &u)| classify_step(m, &band, spec.zeta, u, &tolerance))
        .collect();
    let singular = case_labels.iter().filter(|&&l| l == CaseLabel::Singular).count();
    Ok(PmpDiagnostics {
        mu,
        mu_step,
        control_hamiltonian,
        singular_fraction: singular as f64 / k as f64,
        case_labels,
        band,
        tolerance,
        zeta: spec.zeta,
        mu_scale,
    })
}

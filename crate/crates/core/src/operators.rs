//! Ising Hamiltonians, the interpolated family `H(u) = uB + (1-u)C`, and the
//! norm regularizer `q(u)` with its subdifferential.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    lanczos_extreme, positive_start, sym_eigen, ExtremeSpectrum, Generator, SortedEigen, SparseSym, C64,
};

/// Default cap on the number of qubits (Hilbert dimension `2^12 = 4096`).
pub const DEFAULT_MAX_QUBITS: usize = 12;

/// Relative tolerance used to cluster eigenvalues into a degenerate eigenspace.
pub const CLUSTER_TOL: f64 = 1e-9;

/// Largest dimension for which extreme eigenpairs are taken from a full dense
/// decomposition; above it, transverse-field Ising pairs use Lanczos.
const DENSE_EIGEN_LIMIT: usize = 32;

const HERMITIAN_TOL: f64 = 1e-12;

/// An Ising problem: `N` qubits and a symmetric coupling matrix `J`.
///
/// Diagonal entries of `J` are ignored when building the cost Hamiltonian,
/// since `σ_i^z σ_i^z = I` only shifts the energy by a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    n_qubits: usize,
    couplings: Vec<Vec<f64>>,
}

impl IsingModel {
    pub fn new(couplings: Vec<Vec<f64>>) -> Result<Self> {
        let n = couplings.len();
        if n == 0 {
            return Err(Error::InvalidModel("at least one qubit is required".into()));
        }
        for (i, row) in couplings.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!(
                    "coupling row {i} has length {}, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!("J[{i}][{j}] is not finite")));
                }
                if (v - couplings[j][i]).abs() > HERMITIAN_TOL * (1.0 + v.abs()) {
                    return Err(Error::InvalidModel(format!(
                        "coupling matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            n_qubits: n,
            couplings,
        })
    }

    /// Off-diagonal couplings i.i.d. uniform on `[-1, 1]`, symmetrised, zero diagonal.
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Self {
        let mut couplings = vec![vec![0.0; n_qubits]; n_qubits];
        for i in 0..n_qubits {
            for j in (i + 1)..n_qubits {
                let v = rng.gen_range(-1.0..=1.0);
                couplings[i][j] = v;
                couplings[j][i] = v;
            }
        }
        Self {
            n_qubits,
            couplings,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn couplings(&self) -> &[Vec<f64>] {
        &self.couplings
    }
}

/// Which matrix norm the regularizer uses, and whether the identity component
/// is projected out first (`q̃(u) = min_φ ‖H(u) + φI‖`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixNorm {
    Spectral,
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormKind {
    pub norm: MatrixNorm,
    #[serde(default)]
    pub phase_reduced: bool,
}

impl NormKind {
    pub const SPECTRAL: NormKind = NormKind {
        norm: MatrixNorm::Spectral,
        phase_reduced: false,
    };
    pub const FROBENIUS: NormKind = NormKind {
        norm: MatrixNorm::Frobenius,
        phase_reduced: false,
    };

    pub fn with_phase_reduction(self) -> Self {
        Self {
            phase_reduced: true,
            ..self
        }
    }
}

/// The interval `[lo, hi]` spanned by `∂q(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SubgradientInterval {
    pub fn point(s: f64) -> Self {
        Self { lo: s, hi: s }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, s: f64, tol: f64) -> bool {
        s >= self.lo - tol && s <= self.hi + tol
    }

    fn hull(self, other: Self) -> Self {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

/// Result of inverting the subdifferential: the midpoint of the preimage
/// interval and that interval's width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientInverse {
    pub u: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy)]
struct FrobeniusGram {
    bb: f64,
    bc: f64,
    cc: f64,
    tr_b: f64,
    tr_c: f64,
}

/// Mixer `B`, diagonal problem Hamiltonian `C` and their difference `F = B - C`.
///
/// Both matrices are real in the computational basis, so they are stored as
/// real symmetric matrices (`C` as its diagonal).
#[derive(Debug, Clone)]
pub struct HamiltonianPair {
    b: DMatrix<f64>,
    c: DVector<f64>,
    b_sparse: SparseSym,
    n_qubits: Option<usize>,
    /// Set for the transverse-field Ising family, whose `αB + βC` (α ≠ 0) has
    /// simple extreme eigenvalues.
    stoquastic: bool,
    gram: FrobeniusGram,
    b_inf_norm: f64,
    c_max_abs: f64,
    sigma_max_f: OnceLock<f64>,
}

impl HamiltonianPair {
    /// Builds a pair from a real symmetric mixer and the diagonal of `C`.
    pub fn new(b: DMatrix<f64>, c_diagonal: DVector<f64>) -> Result<Self> {
        let d = b.nrows();
        if b.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.ncols(),
            });
        }
        if c_diagonal.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c_diagonal.len(),
            });
        }
        let asym = (&b - b.transpose()).abs().max();
        if asym > HERMITIAN_TOL || b.iter().chain(c_diagonal.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotHermitian(asym));
        }
        Ok(Self::assemble(b, c_diagonal, None, false))
    }

    fn assemble(b: DMatrix<f64>, c: DVector<f64>, n_qubits: Option<usize>, stoquastic: bool) -> Self {
        let gram = FrobeniusGram {
            bb: b.iter().map(|v| v * v).sum(),
            bc: (0..c.len()).map(|i| b[(i, i)] * c[i]).sum(),
            cc: c.iter().map(|v| v * v).sum(),
            tr_b: b.trace(),
            tr_c: c.sum(),
        };
        let b_sparse = SparseSym::from_dense(&b);
        let b_inf_norm = b_sparse.inf_norm();
        let c_max_abs = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self {
            b,
            c,
            b_sparse,
            n_qubits,
            stoquastic,
            gram,
            b_inf_norm,
            c_max_abs,
            sigma_max_f: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn n_qubits(&self) -> Option<usize> {
        self.n_qubits
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Diagonal of `C` in the computational basis.
    pub fn c_diagonal(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn c(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.c)
    }

    pub fn f(&self) -> DMatrix<f64> {
        &self.b - self.c()
    }

    /// `σ_max(C)`.
    pub fn sigma_max_c(&self) -> f64 {
        self.c_max_abs
    }

    /// `σ_max(F)` with `F = B - C`.
    pub fn sigma_max_f(&self) -> f64 {
        *self
            .sigma_max_f
            .get_or_init(|| self.combination_extremes(1.0, -1.0).spectral_norm())
    }

    /// `λ_min(C)`, the ground-state energy of the problem Hamiltonian.
    pub fn c_min(&self) -> f64 {
        self.c.min()
    }

    pub fn c_max(&self) -> f64 {
        self.c.max()
    }

    /// Dense `H(u) = uB + (1-u)C`.
    pub fn hamiltonian_at(&self, u: f64) -> Result<DMatrix<f64>> {
        check_control(u)?;
        let mut h = &self.b * u;
        for i in 0..self.dim() {
            h[(i, i)] += (1.0 - u) * self.c[i];
        }
        Ok(h)
    }

    /// `out = scale · H(u) x + shift · x`.
    pub(crate) fn apply_h(&self, u: f64, scale: f64, shift: f64, x: &[C64], out: &mut [C64]) {
        let wb = scale * u;
        let wc = scale * (1.0 - u);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.b_sparse.row_dot(i, x) * wb + x[i] * (wc * self.c[i] + shift);
        }
    }

    /// `out = scale · F x`.
    pub(crate) fn apply_f(&self, scale: f64, x: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.b_sparse.row_dot(i, x) - x[i] * self.c[i]) * scale;
        }
    }

    /// `out = C x`.
    pub(crate) fn apply_c(&self, x: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i] * self.c[i];
        }
    }

    /// `⟨x|C|x⟩`, real because `C` is Hermitian.
    pub fn energy(&self, x: &[C64]) -> f64 {
        x.iter().zip(self.c.iter()).map(|(z, c)| c * z.norm_sqr()).sum()
    }

    pub(crate) fn h_norm_bound(&self, u: f64) -> f64 {
        u.abs() * self.b_inf_norm + (1.0 - u).abs() * self.c_max_abs
    }

    pub(crate) fn f_norm_bound(&self) -> f64 {
        self.b_inf_norm + self.c_max_abs
    }

    /// Extreme eigen-data of `wb·B + wc·C`.
    fn combination_extremes(&self, wb: f64, wc: f64) -> ExtremeSpectrum {
        let d = self.dim();
        if wb == 0.0 {
            // Diagonal: eigenvectors are computational basis states.
            let values: Vec<f64> = self.c.iter().map(|c| wc * c).collect();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let eig = SortedEigen {
                values: order.iter().map(|&k| values[k]).collect(),
                vectors: DMatrix::from_fn(d, d, |i, j| if i == order[j] { 1.0 } else { 0.0 }),
            };
            return ExtremeSpectrum::from_sorted(&eig, CLUSTER_TOL);
        }
        if self.stoquastic && d > DENSE_EIGEN_LIMIT && wb > 0.0 {
            // With wb > 0 the off-diagonal part is entrywise non-positive and
            // irreducible, and everything commutes with the global spin flip
            // (index i ↦ d-1-i). The ground state is the positive Perron vector,
            // hence flip-even; the top state is its Z-conjugate, of flip parity
            // (-1)^N. Both are simple, and Lanczos restricted to the right
            // sector avoids the exponentially close partner in the other one.
            let apply = |x: &[f64], y: &mut [f64]| {
                self.b_sparse.mul_real(x, y);
                for i in 0..d {
                    y[i] = wb * y[i] + wc * self.c[i] * x[i];
                }
            };
            let sector = |sign: f64| {
                move |v: &mut [f64]| {
                    for i in 0..d / 2 {
                        let j = d - 1 - i;
                        let a = 0.5 * (v[i] + sign * v[j]);
                        v[i] = a;
                        v[j] = sign * a;
                    }
                }
            };
            let n = self.n_qubits.expect("Ising pairs know their qubit count");
            let top_sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let start = positive_start(d);
            let (lambda_min, v_min) = lanczos_extreme(apply, sector(1.0), start.clone(), true);
            let alternating: Vec<f64> = start
                .iter()
                .enumerate()
                .map(|(i, x)| if i.count_ones() % 2 == 0 { *x } else { -x })
                .collect();
            let (lambda_max, v_max) = lanczos_extreme(apply, sector(top_sign), alternating, false);
            return ExtremeSpectrum {
                lambda_min,
                lambda_max,
                min_space: vec![v_min],
                max_space: vec![v_max],
            };
        }
        let mut m = &self.b * wb;
        for i in 0..d {
            m[(i, i)] += wc * self.c[i];
        }
        ExtremeSpectrum::from_sorted(&sym_eigen(&m), CLUSTER_TOL)
    }

    /// Extreme eigenvalues and clustered eigenspaces of `H(u)`.
    pub fn extremes_at(&self, u: f64) -> Result<ExtremeSpectrum> {
        check_control(u)?;
        Ok(self.combination_extremes(u, 1.0 - u))
    }

    /// Range of `V^T F V` over an orthonormal basis `V`: `[λ_min, λ_max]`.
    fn compressed_f_range(&self, space: &[DVector<f64>]) -> SubgradientInterval {
        let k = space.len();
        let fv: Vec<DVector<f64>> = space
            .iter()
            .map(|v| {
                let mut out = DVector::zeros(v.len());
                self.b_sparse.mul_real(v.as_slice(), out.as_mut_slice());
                out - v.component_mul(&self.c)
            })
            .collect();
        let m = DMatrix::from_fn(k, k, |i, j| space[i].dot(&fv[j]));
        let m = (&m + m.transpose()) * 0.5;
        let eig = sym_eigen(&m);
        SubgradientInterval {
            lo: eig.values[0],
            hi: eig.values[k - 1],
        }
    }

    fn frobenius_terms(&self, u: f64, phase_reduced: bool) -> (f64, f64) {
        let g = self.gram;
        let d = self.dim() as f64;
        let (bb, bc, cc) = if phase_reduced {
            (
                g.bb - g.tr_b * g.tr_b / d,
                g.bc - g.tr_b * g.tr_c / d,
                g.cc - g.tr_c * g.tr_c / d,
            )
        } else {
            (g.bb, g.bc, g.cc)
        };
        let v = 1.0 - u;
        let sq = (u * u * bb + 2.0 * u * v * bc + v * v * cc).max(0.0);
        // ⟨H(u), F⟩_F with F = B - C.
        let inner = u * bb + (v - u) * bc - v * cc;
        (sq.sqrt(), inner)
    }

    /// The regularizer `q(u)` for the chosen norm.
    pub fn q_value(&self, u: f64, kind: NormKind) -> Result<f64> {
        check_control(u)?;
        Ok(match kind.norm {
            MatrixNorm::Frobenius => self.frobenius_terms(u, kind.phase_reduced).0,
            MatrixNorm::Spectral => spectral_q(&self.combination_extremes(u, 1.0 - u), kind.phase_reduced),
        })
    }

    /// The subdifferential `∂q(u)` as an interval.
    pub fn q_subgradient(&self, u: f64, kind: NormKind) -> Result<SubgradientInterval> {
        Ok(self.q_with_subgradient(u, kind)?.1)
    }

    /// `q(u)` and `∂q(u)` from a single spectral computation.
    pub fn q_with_subgradient(&self, u: f64, kind: NormKind) -> Result<(f64, SubgradientInterval)> {
        check_control(u)?;
        match kind.norm {
            MatrixNorm::Frobenius => {
                let (norm, inner) = self.frobenius_terms(u, kind.phase_reduced);
                if norm <= 1e-300 || norm <= 1e-14 * (self.gram.bb + self.gram.cc).sqrt() {
                    return Err(Error::ZeroMatrixSubgradient);
                }
                Ok((norm, SubgradientInterval::point(inner / norm)))
            }
            MatrixNorm::Spectral => {
                let ext = self.combination_extremes(u, 1.0 - u);
                let q = spectral_q(&ext, kind.phase_reduced);
                let top = self.compressed_f_range(&ext.max_space);
                let bottom = self.compressed_f_range(&ext.min_space);
                if kind.phase_reduced {
                    let s = SubgradientInterval {
                        lo: 0.5 * (top.lo - bottom.hi),
                        hi: 0.5 * (top.hi - bottom.lo),
                    };
                    return Ok((q, s));
                }
                let norm = ext.spectral_norm();
                let tol = CLUSTER_TOL * norm;
                let negated = SubgradientInterval {
                    lo: -bottom.hi,
                    hi: -bottom.lo,
                };
                let max_active = ext.lambda_max >= norm - tol;
                let min_active = -ext.lambda_min >= norm - tol;
                let s = match (max_active, min_active) {
                    (true, true) => top.hull(negated),
                    (true, false) => top,
                    _ => negated,
                };
                Ok((q, s))
            }
        }
    }

    /// `M_lb = max ∂q(0)` and `M_ub = min ∂q(1)`.
    pub fn band_edges(&self, kind: NormKind) -> Result<(f64, f64)> {
        Ok((self.q_subgradient(0.0, kind)?.hi, self.q_subgradient(1.0, kind)?.lo))
    }

    /// Finds `u` with `target ∈ ∂q(u)` by bisection on the monotone
    /// subdifferential. A flat preimage interval resolves to its midpoint.
    pub fn q_subgradient_inverse(&self, target: f64, kind: NormKind) -> Result<SubgradientInverse> {
        const U_TOL: f64 = 1e-11;
        let (m_lb, m_ub) = self.band_edges(kind)?;
        let slack = 1e-12 * (1.0 + target.abs());
        if !(target >= m_lb - slack && target <= m_ub + slack) {
            return Err(Error::OutOfBand {
                target,
                lo: m_lb,
                hi: m_ub,
            });
        }
        // Left end: inf { u : hi(u) >= target }.
        let left = if m_lb >= target {
            0.0
        } else {
            let (mut a, mut b) = (0.0, 1.0);
            while b - a > U_TOL {
                let mid = 0.5 * (a + b);
                if self.q_subgradient(mid, kind)?.hi >= target {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        };
        // Right end: sup { u : lo(u) <= target }.
        let right = if m_ub <= target {
            1.0
        } else {
            let (mut a, mut b) = (left, 1.0);
            while b - a > U_TOL {
                let mid = 0.5 * (a + b);
                if self.q_subgradient(mid, kind)?.lo <= target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let right = right.max(left);
        Ok(SubgradientInverse {
            u: 0.5 * (left + right),
            width: right - left,
        })
    }
}

pub(crate) fn check_control(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::ControlOutOfRange(u))
    }
}

fn spectral_q(ext: &ExtremeSpectrum, phase_reduced: bool) -> f64 {
    if phase_reduced {
        0.5 * (ext.lambda_max - ext.lambda_min)
    } else {
        ext.spectral_norm()
    }
}

/// Builds `B = -Σ σ_i^x` and `C = 2 Σ_{i<j} J_ij σ_i^z σ_j^z`.
pub fn build_ising(model: &IsingModel) -> Result<HamiltonianPair> {
    build_ising_with_budget(model, DEFAULT_MAX_QUBITS)
}

pub fn build_ising_with_budget(model: &IsingModel, max_qubits: usize) -> Result<HamiltonianPair> {
    let n = model.n_qubits();
    if n > max_qubits || n >= usize::BITS as usize - 1 {
        return Err(Error::DimensionOverflow {
            n_qubits: n,
            max_qubits,
        });
    }
    let d = 1usize << n;
    // Qubit i (0-based) is Kronecker factor i, i.e. bit (n - 1 - i) of the index.
    let bit = |i: usize| 1usize << (n - 1 - i);
    let mut b = DMatrix::zeros(d, d);
    for z in 0..d {
        for i in 0..n {
            b[(z, z ^ bit(i))] = -1.0;
        }
    }
    let j = model.couplings();
    let c = DVector::from_fn(d, |z, _| {
        let spin = |i: usize| if z & bit(i) == 0 { 1.0 } else { -1.0 };
        let mut e = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                e += 2.0 * j[a][b] * spin(a) * spin(b);
            }
        }
        e
    });
    Ok(HamiltonianPair::assemble(b, c, Some(n), true))
}

/// The uniform superposition `|+⟩^{⊗N}`, ground state of `B = -Σσ^x`.
pub fn ground_state_of_b(ham: &HamiltonianPair) -> DVector<C64> {
    let d = ham.dim();
    DVector::from_element(d, C64::new(1.0 / (d as f64).sqrt(), 0.0))
}

/// `scale · H(u) + shift · I` as a propagator generator.
pub(crate) struct StepGenerator<'a> {
    pub pair: &'a HamiltonianPair,
    pub u: f64,
    pub scale: f64,
    pub shift: f64,
}

impl Generator for StepGenerator<'_> {
    fn dim(&self) -> usize {
        self.pair.dim()
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        self.pair.apply_h(self.u, self.scale, self.shift, x, out);
    }
    fn norm_bound(&self) -> f64 {
        self.scale.abs() * self.pair.h_norm_bound(self.u) + self.shift.abs()
    }
}

/// `scale · F`, the derivative of `scale · H(u)` with respect to `u`.
pub(crate) struct DirectionGenerator<'a> {
    pub pair: &'a HamiltonianPair,
    pub scale: f64,
}

impl Generator for DirectionGenerator<'_> {
    fn dim(&self) -> usize {
        self.pair.dim()
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        self.pair.apply_f(self.scale, x, out);
    }
    fn norm_bound(&self) -> f64 {
        self.scale.abs() * self.pair.f_norm_bound()
    }
}

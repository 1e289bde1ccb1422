//! Dense and sparse real-symmetric linear algebra used by the propagators and
//! the norm regularizers.
//!
//! All Hamiltonians handled by this crate are real symmetric in the
//! computational basis (the mixer is real, the Ising cost is diagonal), so
//! eigen-problems are solved over the reals while states stay complex.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Hard cap on Taylor terms per sub-step. With the sub-step normalised to
/// `‖hG‖ ≤ 1` the series has converged to below `1e-30` long before this.
const MAX_TAYLOR_TERMS: usize = 40;

/// Real symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `y[i] = Σ_j M_ij x_j` for real vectors.
    pub fn mul_real(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *yi = acc;
        }
    }

    /// Row `i` of `M x` for a complex vector.
    #[inline]
    pub fn row_dot(&self, i: usize, x: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            acc += x[self.cols[p]] * self.vals[p];
        }
        acc
    }

    /// Maximum absolute row sum, an upper bound on the spectral norm.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.vals[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Eigendecomposition of a real symmetric matrix with eigenvalues sorted
/// ascending; column `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    SortedEigen { values, vectors }
}

/// `exp(-i θ H)` for a real symmetric `H`, computed through its eigenbasis.
pub fn expm_hermitian(h: &DMatrix<f64>, theta: f64) -> DMatrix<C64> {
    let eig = sym_eigen(h);
    let n = h.nrows();
    let v = eig.vectors.map(|x| C64::new(x, 0.0));
    let phases = DVector::from_iterator(
        n,
        eig.values
            .iter()
            .map(|&l| C64::from_polar(1.0, -theta * l)),
    );
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    scaled * v.transpose()
}

/// Extreme eigenvalues of a real symmetric matrix together with orthonormal
/// bases of the (tolerance-clustered) extreme eigenspaces.
#[derive(Debug, Clone)]
pub struct ExtremeSpectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub min_space: Vec<DVector<f64>>,
    pub max_space: Vec<DVector<f64>>,
}

impl ExtremeSpectrum {
    pub fn spectral_norm(&self) -> f64 {
        self.lambda_max.max(-self.lambda_min)
    }

    /// Builds the clustered extreme spaces from a full sorted decomposition.
    pub fn from_sorted(eig: &SortedEigen, rel_tol: f64) -> Self {
        let n = eig.values.len();
        let lo = eig.values[0];
        let hi = eig.values[n - 1];
        let tol = rel_tol * lo.abs().max(hi.abs());
        let min_space = (0..n)
            .take_while(|&k| eig.values[k] <= lo + tol)
            .map(|k| eig.vectors.column(k).into_owned())
            .collect();
        let max_space = (0..n)
            .rev()
            .take_while(|&k| eig.values[k] >= hi - tol)
            .map(|k| eig.vectors.column(k).into_owned())
            .collect();
        Self {
            lambda_min: lo,
            lambda_max: hi,
            min_space,
            max_space,
        }
    }
}

/// Lowest (`lowest = true`) or highest eigenpair of a real symmetric
/// operator by Lanczos with full re-orthogonalisation.
///
/// The Krylov space is kept inside an invariant subspace by applying
/// `project` to every new direction. The target eigenvalue must be simple
/// within that subspace and `start` must overlap its eigenvector.
pub fn lanczos_extreme<F, P>(apply: F, project: P, start: Vec<f64>, lowest: bool) -> (f64, DVector<f64>)
where
    F: Fn(&[f64], &mut [f64]),
    P: Fn(&mut [f64]),
{
    let n = start.len();
    let mut q = start;
    project(&mut q);
    normalize_real(&mut q);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];

    loop {
        apply(&q, &mut w);
        let a = dot_real(&q, &w);
        alpha.push(a);
        basis.push(q.clone());
        project(&mut w);
        for b in &basis {
            let c = dot_real(b, &w);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
        let b_next = norm_real(&w);
        let m = basis.len();
        let scale = alpha.iter().chain(&beta).fold(1e-300_f64, |acc, x| acc.max(x.abs()));
        let exhausted = m == n || b_next <= 1e-13 * scale;
        if exhausted || m % 4 == 0 {
            let (value, s) = tridiagonal_extreme(&alpha, &beta, lowest);
            if exhausted || (b_next * s[m - 1]).abs() <= 1e-11 * scale {
                let mut v = DVector::<f64>::zeros(n);
                for (c, b) in s.iter().zip(&basis) {
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi += c * bi;
                    }
                }
                let norm = v.norm();
                return (value, v / norm);
            }
        }
        beta.push(b_next);
        for (qi, wi) in q.iter_mut().zip(&w) {
            *qi = wi / b_next;
        }
    }
}

/// Extreme eigenpair of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`: the eigenvalue by Sturm-count bisection,
/// the unit eigenvector by inverse iteration.
fn tridiagonal_extreme(alpha: &[f64], beta: &[f64], lowest: bool) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let off = |i: usize| if i < beta.len() { beta[i].abs() } else { 0.0 };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let r = off(i) + if i > 0 { off(i - 1) } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    // Number of eigenvalues below x.
    let below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..m {
            let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
            d = alpha[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * scale;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let target = if lowest { 1 } else { m };
    let (mut a, mut b) = (lo - f64::EPSILON * scale, hi + f64::EPSILON * scale);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if below(mid) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    let lambda = 0.5 * (a + b);

    // Inverse iteration with a shift just outside the spectrum, which keeps
    // the elimination free of pivoting problems.
    let shift = if lowest { lambda - 1e-10 * scale } else { lambda + 1e-10 * scale };
    let mut s = vec![1.0; m];
    for _ in 0..3 {
        let mut diag: Vec<f64> = alpha.iter().map(|a| a - shift).collect();
        let mut rhs = s.clone();
        for i in 1..m {
            let l = beta[i - 1] / diag[i - 1];
            diag[i] -= l * beta[i - 1];
            rhs[i] -= l * rhs[i - 1];
        }
        s[m - 1] = rhs[m - 1] / diag[m - 1];
        for i in (0..m - 1).rev() {
            s[i] = (rhs[i] - beta[i] * s[i + 1]) / diag[i];
        }
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in s.iter_mut() {
            *x /= norm;
        }
    }
    (lambda, s)
}

/// Deterministic pseudo-random vector with entries in `[0.5, 1.5)`.
pub fn positive_start(n: usize) -> Vec<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

fn dot_real(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_real(a: &[f64]) -> f64 {
    dot_real(a, a).sqrt()
}

fn normalize_real(a: &mut [f64]) {
    let n = norm_real(a);
    for x in a {
        *x /= n;
    }
}

/// A Hermitian generator acting on complex state vectors.
pub trait Generator {
    fn dim(&self) -> usize;
    /// `out = G x`
    fn apply(&self, x: &[C64], out: &mut [C64]);
    /// Any upper bound on the spectral norm of `G`.
    fn norm_bound(&self) -> f64;
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max)
}

/// `exp(-i θ G) x` by a truncated Taylor series on sub-steps with `‖hG‖ ≤ 1`.
///
/// Terms are accumulated until two consecutive terms fall below the unit
/// round-off relative to the partial sum, so the result is exact to
/// floating-point precision.
pub fn expmv<G: Generator + ?Sized>(gen: &G, theta: f64, x: &[C64]) -> Vec<C64> {
    let n = gen.dim();
    let substeps = ((theta.abs() * gen.norm_bound()).ceil() as usize).max(1);
    let h = theta / substeps as f64;
    let mut v = x.to_vec();
    let mut term = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); n];
    for _ in 0..substeps {
        term.copy_from_slice(&v);
        let mut small = 0;
        for j in 1..=MAX_TAYLOR_TERMS {
            gen.apply(&term, &mut scratch);
            let c = C64::new(0.0, -h / j as f64);
            for ((t, s), vi) in term.iter_mut().zip(&scratch).zip(v.iter_mut()) {
                *t = c * s;
                *vi += *t;
            }
            if max_abs(&term) <= f64::EPSILON * 1e-2 * max_abs(&v) {
                small += 1;
                if small == 2 {
                    break;
                }
            } else {
                small = 0;
            }
        }
    }
    v
}

/// Returns `(exp(-iθG)x, L x)` where `L` is the derivative of
/// `exp(-iθ G(u))` with respect to a scalar parameter `u` whose generator
/// derivative is `dG = ∂G/∂u`.
///
/// Uses the block-triangular identity
/// `exp([[A, E], [0, A]]) = [[e^A, L(A, E)], [0, e^A]]`, applied to `(0, x)`.
pub fn expmv_frechet<G, D>(gen: &G, dgen: &D, theta: f64, x: &[C64]) -> (Vec<C64>, Vec<C64>)
where
    G: Generator + ?Sized,
    D: Generator + ?Sized,
{
    let n = gen.dim();
    let bound = gen.norm_bound() + dgen.norm_bound();
    let substeps = ((theta.abs() * bound).ceil() as usize).max(1);
    let h = theta / substeps as f64;
    let zero = C64::new(0.0, 0.0);
    let mut t_sum = x.to_vec();
    let mut y_sum = vec![zero; n];
    let mut t_term = vec![zero; n];
    let mut y_term = vec![zero; n];
    let mut gt = vec![zero; n];
    let mut gy = vec![zero; n];
    let mut dt = vec![zero; n];
    for _ in 0..substeps {
        t_term.copy_from_slice(&t_sum);
        y_term.copy_from_slice(&y_sum);
        let mut small = 0;
        for j in 1..=MAX_TAYLOR_TERMS {
            gen.apply(&t_term, &mut gt);
            gen.apply(&y_term, &mut gy);
            dgen.apply(&t_term, &mut dt);
            let c = C64::new(0.0, -h / j as f64);
            for i in 0..n {
                t_term[i] = c * gt[i];
                y_term[i] = c * (gy[i] + dt[i]);
                t_sum[i] += t_term[i];
                y_sum[i] += y_term[i];
            }
            let scale = max_abs(&t_sum).max(max_abs(&y_sum));
            if max_abs(&t_term).max(max_abs(&y_term)) <= f64::EPSILON * 1e-2 * scale {
                small += 1;
                if small == 2 {
                    break;
                }
            } else {
                small = 0;
            }
        }
    }
    (t_sum, y_sum)
}

pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn cnorm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

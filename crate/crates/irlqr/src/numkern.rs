//! Dense numerical kernels for small symmetric and general matrices.
//!
//! Everything here targets the matrix sizes typical of low-dimensional
//! regulation problems (a handful of states and inputs), so the solvers are
//! plain fixed-point iterations with explicit convergence and divergence
//! checks — no Schur forms, no doubling. Divergence of an iteration is the
//! mechanism by which instability or non-stabilizability is detected.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Iteration cap shared by the Lyapunov and Riccati fixed-point loops.
const MAX_ITER: usize = 100_000;

/// Relative residual target for the discrete Lyapunov solver.
const DLYAP_TOL: f64 = 1e-10;

/// Relative tolerance on successive Riccati iterates.
const DARE_STEP_TOL: f64 = 1e-11;

/// Relative residual target for the Riccati solution.
const DARE_RESIDUAL_TOL: f64 = 1e-8;

/// Norm beyond which a fixed-point iterate is declared divergent.
const DIVERGENCE_NORM: f64 = 1e100;

/// Relative symmetry defect tolerated by [`SymMatrix::new`].
const SYMMETRY_TOL: f64 = 1e-12;

/// Errors surfaced by the kernel layer.
#[derive(Debug, Clone, PartialEq)]
pub enum NumError {
    /// A fixed-point iteration failed to meet tolerance within the cap,
    /// which for Lyapunov equations signals an unstable coefficient matrix.
    NonConvergent { iterations: usize },
    /// The Riccati iteration diverged or its limit is not positive definite.
    NonStabilizable,
    /// An inner linear solve hit a numerically singular matrix.
    IllConditioned,
    /// A matrix required to be positive semidefinite has a significantly
    /// negative eigenvalue.
    NotPsd { min_eigenvalue: f64 },
    /// A Cholesky factorization failed on a matrix required to be positive
    /// definite.
    NotPd,
    /// The nominal Lyapunov witness does not certify every input matrix.
    NoCommonCertificate { eta: f64 },
    /// Operand shapes are incompatible.
    DimMismatch { context: &'static str },
    /// A matrix required to be symmetric is not, within tolerance.
    NotSymmetric { defect: f64 },
    /// Non-finite entries where finite values are required.
    NotFinite { context: &'static str },
}

impl fmt::Display for NumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumError::NonConvergent { iterations } => {
                write!(f, "fixed-point iteration did not converge within {iterations} iterations")
            }
            NumError::NonStabilizable => {
                write!(f, "Riccati iteration diverged: pair is not stabilizable")
            }
            NumError::IllConditioned => write!(f, "inner linear solve is numerically singular"),
            NumError::NotPsd { min_eigenvalue } => {
                write!(f, "matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")
            }
            NumError::NotPd => write!(f, "matrix is not positive definite"),
            NumError::NoCommonCertificate { eta } => {
                write!(f, "nominal witness does not certify all matrices (eta = {eta:e})")
            }
            NumError::DimMismatch { context } => write!(f, "dimension mismatch in {context}"),
            NumError::NotSymmetric { defect } => {
                write!(f, "matrix is not symmetric (relative defect {defect:e})")
            }
            NumError::NotFinite { context } => write!(f, "non-finite entries in {context}"),
        }
    }
}

impl std::error::Error for NumError {}

/// A real symmetric matrix. The constructor enforces symmetry up to a small
/// relative tolerance and the stored representation is exactly symmetric, so
/// downstream symmetric eigendecompositions and Cholesky factorizations see
/// consistent data.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps a square matrix, verifying symmetry to within `1e-12` relative
    /// tolerance and re-symmetrizing to suppress roundoff drift.
    pub fn new(m: DMatrix<f64>) -> Result<Self, NumError> {
        if m.nrows() != m.ncols() {
            return Err(NumError::DimMismatch { context: "SymMatrix::new" });
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(NumError::NotFinite { context: "SymMatrix::new" });
        }
        let defect = (&m - m.transpose()).norm() / m.norm().max(1.0);
        if defect > SYMMETRY_TOL {
            return Err(NumError::NotSymmetric { defect });
        }
        Ok(Self::symmetrized(m))
    }

    /// Internal fast path for matrices that are symmetric by construction.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let sym = (&m + m.transpose()).scale(0.5);
        SymMatrix { m: sym }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { m: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix { m: DMatrix::zeros(n, n) }
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        SymMatrix { m: DMatrix::identity(n, n).scale(scale) }
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        SymMatrix { m: DMatrix::from_diagonal(d) }
    }

    pub fn order(&self) -> usize {
        self.m.nrows()
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_mat(self) -> DMatrix<f64> {
        self.m
    }

    /// Eigendecomposition; returns `(values, vectors)` with vectors in columns.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        jacobi_eigen(&self.m)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigen().0.min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen().0.max()
    }

    /// Cholesky factor, or [`NumError::NotPd`].
    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>, NumError> {
        Cholesky::new(self.m.clone()).ok_or(NumError::NotPd)
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.m
    }
}

/// Witness of geometric decay for a family of square matrices: a common
/// Lyapunov matrix `p` with contraction factor `rho` such that every
/// certified `M` satisfies `Mᵀ p M ⪯ rho² p`, hence `‖Mᵏ‖_F ≤ c·rhoᵏ`.
#[derive(Debug, Clone)]
pub struct DecayCertificate {
    pub c: f64,
    pub rho: f64,
    pub p: SymMatrix,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()).scale(0.5)
}

/// Cyclic Jacobi eigendecomposition for a small symmetric matrix. Converges
/// to machine precision — unlike shifted-QL variants it keeps clustered
/// spectra honest — which the clipping operator relies on for idempotency.
/// Returns `(values, vectors)` with eigenvectors in columns.
pub(crate) fn jacobi_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut a = symmetrize(m.clone());
    let mut v = DMatrix::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= f64::EPSILON * scale {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (DVector::from_fn(n, |i, _| a[(i, i)]), v)
}

/// Solves the discrete Lyapunov equation `Σ = A Σ Aᵀ + Q` by iterating the
/// map to its fixed point. The returned iterate has residual at most
/// `1e-10·max(1, ‖Σ‖_F)`; failure to reach that within the iteration cap
/// (or outright divergence) reports [`NumError::NonConvergent`], which is
/// how an unstable `A` manifests.
pub fn solve_dlyap(a: &DMatrix<f64>, q: &SymMatrix) -> Result<SymMatrix, NumError> {
    let n = a.nrows();
    if a.ncols() != n || q.order() != n {
        return Err(NumError::DimMismatch { context: "solve_dlyap" });
    }
    let mut sigma = q.mat().clone();
    for _ in 0..MAX_ITER {
        let next = symmetrize(a * &sigma * a.transpose() + q.mat());
        // The defect ‖next − Σ‖ is exactly the equation residual of Σ.
        let residual = (&next - &sigma).norm();
        if residual <= DLYAP_TOL * sigma.norm().max(1.0) {
            return Ok(SymMatrix::symmetrized(sigma));
        }
        if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_NORM {
            return Err(NumError::NonConvergent { iterations: MAX_ITER });
        }
        sigma = next;
    }
    Err(NumError::NonConvergent { iterations: MAX_ITER })
}

/// Solves the generalized discrete algebraic Riccati equation
///
/// ```text
/// P = AᵀPA − (AᵀPB + N)(BᵀPB + R)⁻¹(BᵀPA + Nᵀ) + Q
/// ```
///
/// for the stage cost `xᵀQx + uᵀRu + 2xᵀNu` (`N` is `dx×du`). The cross term
/// is removed by completing the square (`Ā = A − BR⁻¹Nᵀ`, `Q̄ = Q − NR⁻¹Nᵀ`)
/// and the reduced Riccati map is iterated from `Q̄` to its fixed point.
/// Requires `R ≻ 0` and `[Q N; Nᵀ R] ≻ 0` (equivalently `Q̄ ≻ 0`).
pub fn solve_gdare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    n: &DMatrix<f64>,
) -> Result<SymMatrix, NumError> {
    let dx = a.nrows();
    let du = b.ncols();
    if a.ncols() != dx || b.nrows() != dx || q.order() != dx || r.order() != du {
        return Err(NumError::DimMismatch { context: "solve_gdare" });
    }
    if n.nrows() != dx || n.ncols() != du {
        return Err(NumError::DimMismatch { context: "solve_gdare cross term" });
    }

    let r_chol = r.cholesky()?;
    let rinv_nt = r_chol.solve(&n.transpose()); // R⁻¹Nᵀ, du×dx
    let a_bar = a - b * &rinv_nt;
    let q_bar = symmetrize(q.mat() - n * &rinv_nt);
    // Q̄ ≻ 0 is the Schur-complement form of the stacked cost condition.
    if Cholesky::new(q_bar.clone()).is_none() {
        return Err(NumError::NotPd);
    }

    let bt = b.transpose();
    let mut p = q_bar.clone();
    for _ in 0..MAX_ITER {
        let pb = &p * b;
        let inner = symmetrize(&bt * &pb + r.mat());
        let inner_chol = Cholesky::new(inner).ok_or(NumError::IllConditioned)?;
        let bpa = &bt * &p * &a_bar;
        let gain_term = inner_chol.solve(&bpa); // (BᵀPB+R)⁻¹BᵀPĀ
        let next = symmetrize(a_bar.transpose() * &p * &a_bar - bpa.transpose() * gain_term + &q_bar);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > 1e14 {
            return Err(NumError::NonStabilizable);
        }
        let step = (&next - &p).norm();
        p = next;
        if step <= DARE_STEP_TOL * p.norm().max(1.0) {
            let sol = SymMatrix::symmetrized(p);
            if sol.cholesky().is_err() {
                return Err(NumError::NonStabilizable);
            }
            let resid = gdare_residual(a, b, q, r, n, &sol);
            if resid > DARE_RESIDUAL_TOL * sol.norm().max(1.0) {
                return Err(NumError::NonStabilizable);
            }
            return Ok(sol);
        }
    }
    Err(NumError::NonStabilizable)
}

/// Frobenius norm of the generalized Riccati defect at `p`; diagnostic
/// companion to [`solve_gdare`].
pub fn gdare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    n: &DMatrix<f64>,
    p: &SymMatrix,
) -> f64 {
    let apb = a.transpose() * p.mat() * b + n;
    let inner = symmetrize(b.transpose() * p.mat() * b + r.mat());
    let inner_chol = match Cholesky::new(inner) {
        Some(c) => c,
        None => return f64::INFINITY,
    };
    let cross = &apb * inner_chol.solve(&apb.transpose());
    let rhs = a.transpose() * p.mat() * a - cross + q.mat();
    (p.mat() - rhs).norm()
}

/// State-feedback gain `K = −(BᵀPB + R)⁻¹(BᵀPA + Nᵀ)` with `P` from
/// [`solve_gdare`]; the closed loop `A + BK` is Schur stable whenever the
/// solve succeeds.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    n: &DMatrix<f64>,
) -> Result<DMatrix<f64>, NumError> {
    lqr_solution(a, b, q, r, n).map(|(k, _)| k)
}

/// Gain and Riccati solution together, for callers that need both.
pub fn lqr_solution(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    n: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, SymMatrix), NumError> {
    let p = solve_gdare(a, b, q, r, n)?;
    let inner = symmetrize(b.transpose() * p.mat() * b + r.mat());
    let inner_chol = Cholesky::new(inner).ok_or(NumError::IllConditioned)?;
    let k = -inner_chol.solve(&(b.transpose() * p.mat() * a + n.transpose()));
    Ok((k, p))
}

/// Caps the eigenvalues of a PSD matrix at `c` in its own eigenbasis. The
/// result keeps the eigenvectors of `p` and satisfies both `⪯ p` and `⪯ cI`.
pub fn sclip(p: &SymMatrix, c: f64) -> Result<SymMatrix, NumError> {
    assert!(c > 0.0, "sclip level must be positive");
    let (vals, vecs) = p.eigen();
    let spectral = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = vals.min();
    if min < -1e-10 * spectral {
        return Err(NumError::NotPsd { min_eigenvalue: min });
    }
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.min(c)));
    let m = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
    Ok(SymMatrix::symmetrized(m))
}

/// Metric projection onto the Frobenius ball `{Θ : ‖Θ − center‖_F ≤ radius}`:
/// points inside are returned unchanged, points outside are pulled radially
/// onto the boundary.
pub fn project_frobenius_ball(
    theta: &DMatrix<f64>,
    center: &DMatrix<f64>,
    radius: f64,
) -> DMatrix<f64> {
    assert!(radius > 0.0, "projection radius must be positive");
    assert_eq!(theta.shape(), center.shape(), "projection shape mismatch");
    let diff = theta - center;
    let dist = diff.norm();
    if dist <= radius {
        theta.clone()
    } else {
        center + diff.scale(radius / dist)
    }
}

/// Log-determinant of a positive definite matrix via its Cholesky factor,
/// `Σᵢ 2·log Lᵢᵢ`, avoiding overflow of the determinant itself.
pub fn logdet_pd(m: &SymMatrix) -> Result<f64, NumError> {
    let chol = m.cholesky()?;
    Ok(chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum())
}

/// Builds a common decay certificate for a family of square matrices.
///
/// The witness is the Lyapunov solution for the transposed nominal matrix,
/// `P = dlyap(M_nomᵀ, I)`, so that `M_nomᵀ P M_nom = P − I`. The contraction
/// margin over the family is `η = 1 − maxᵢ λmax(P^{-1/2} Mᵢᵀ P Mᵢ P^{-1/2})`;
/// if `η ≤ 0` the nominal witness fails to certify some input and
/// [`NumError::NoCommonCertificate`] is returned. On success the constants
/// are `C = √(n·κ(P))` and `ρ = √(1−η)`, which guarantee `‖Mᵢᵏ‖_F ≤ Cρᵏ`.
pub fn decay_certificate(
    matrices: &[DMatrix<f64>],
    nominal_index: usize,
) -> Result<DecayCertificate, NumError> {
    let nominal = matrices
        .get(nominal_index)
        .ok_or(NumError::DimMismatch { context: "decay_certificate nominal index" })?;
    let n = nominal.nrows();
    if nominal.ncols() != n || matrices.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(NumError::DimMismatch { context: "decay_certificate" });
    }

    let p = solve_dlyap(&nominal.transpose(), &SymMatrix::identity(n))?;
    let (vals, vecs) = p.eigen();
    let lam_max = vals.max();
    let lam_min = vals.min();
    let inv_sqrt = DVector::from_iterator(n, vals.iter().map(|&v| 1.0 / v.sqrt()));
    let p_inv_half = &vecs * DMatrix::from_diagonal(&inv_sqrt) * vecs.transpose();

    let mut worst: f64 = 0.0;
    for m in matrices {
        let g = symmetrize(&p_inv_half * m.transpose() * p.mat() * m * &p_inv_half);
        let top = jacobi_eigen(&g).0.max();
        worst = worst.max(top);
    }
    let eta = 1.0 - worst;
    if eta <= 0.0 {
        return Err(NumError::NoCommonCertificate { eta });
    }
    let c = ((n as f64) * lam_max / lam_min).sqrt();
    let rho = worst.sqrt();
    Ok(DecayCertificate { c, rho, p })
}

//! Linear system simulation, stage and ergodic costs, and closed-loop
//! covariances.
//!
//! Noise is produced by [`NoiseStream`], which derives the disturbance at
//! step `t` as a pure function of `(seed, channel, t)`. Controller choices
//! therefore cannot perturb the noise sequence, and runs with equal seeds
//! see identical disturbances regardless of which policy is being compared.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numkern::{solve_dlyap, solve_gdare, NumError, SymMatrix};

/// Ground-truth plant: dynamics `x⁺ = A x + B u + w` with `w ~ N(0, σ_w² I)`,
/// plus the stage-cost weights `Q ≻ 0`, `R ≻ 0`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_w: f64,
    q: SymMatrix,
    r: SymMatrix,
}

impl LinearSystem {
    /// Validates shapes, positive definiteness of the cost weights, and
    /// stabilizability of `(A, B)` (by solving the nominal Riccati equation).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma_w: f64,
        q: SymMatrix,
        r: SymMatrix,
    ) -> Result<Self, NumError> {
        let dx = a.nrows();
        let du = b.ncols();
        if a.ncols() != dx || b.nrows() != dx {
            return Err(NumError::DimMismatch { context: "LinearSystem dynamics" });
        }
        if q.order() != dx || r.order() != du {
            return Err(NumError::DimMismatch { context: "LinearSystem cost" });
        }
        if !sigma_w.is_finite() || sigma_w < 0.0 {
            return Err(NumError::NotFinite { context: "LinearSystem sigma_w" });
        }
        if !a.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
            return Err(NumError::NotFinite { context: "LinearSystem dynamics" });
        }
        q.cholesky()?;
        r.cholesky()?;
        solve_gdare(&a, &b, &q, &r, &DMatrix::zeros(dx, du))?;
        Ok(LinearSystem { a, b, sigma_w, q, r })
    }

    pub fn dx(&self) -> usize {
        self.a.nrows()
    }

    pub fn du(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    /// Stacked parameter matrix `[A B]`, `dx × (dx + du)`.
    pub fn theta(&self) -> DMatrix<f64> {
        let mut theta = DMatrix::zeros(self.dx(), self.dx() + self.du());
        theta.view_mut((0, 0), (self.dx(), self.dx())).copy_from(&self.a);
        theta.view_mut((0, self.dx()), (self.dx(), self.du())).copy_from(&self.b);
        theta
    }

    /// One deterministic transition with an externally supplied disturbance.
    pub fn advance(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dx(), "state dimension mismatch");
        assert_eq!(u.len(), self.du(), "input dimension mismatch");
        assert_eq!(w.len(), self.dx(), "disturbance dimension mismatch");
        &self.a * x + &self.b * u + w
    }
}

/// Deterministic Gaussian disturbance source. The draw at index `t` depends
/// only on `(seed, channel, t)`: each step keys a fresh ChaCha state, so two
/// streams with equal parameters replay the same sequence bit for bit.
/// Channels separate process noise from auxiliary randomness (probing,
/// posterior sampling) that must not disturb the plant's noise sequence.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    channel: u64,
    t: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed, channel: 0, t: 0 }
    }

    pub fn with_channel(seed: u64, channel: u64) -> Self {
        NoiseStream { seed, channel, t: 0 }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    fn rng_at(&self, t: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.channel.to_le_bytes());
        key[16..24].copy_from_slice(&0x6c71_7262_6e63_6831u64.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(t);
        rng
    }

    /// Next disturbance vector: `dim` independent `N(0, sigma²)` components.
    /// A zero `sigma` still advances the stream, so paired runs that differ
    /// only in noise scale consume identical indices.
    pub fn draw(&mut self, dim: usize, sigma: f64) -> DVector<f64> {
        let mut rng = self.rng_at(self.t);
        self.t += 1;
        DVector::from_iterator(dim, (0..dim).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        }))
    }

    /// Matrix of independent `N(0, sigma²)` entries, filled row-major from a
    /// single stream index.
    pub fn draw_matrix(&mut self, rows: usize, cols: usize, sigma: f64) -> DMatrix<f64> {
        let mut rng = self.rng_at(self.t);
        self.t += 1;
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }
}

/// Simulates one step `x⁺ = A x + B u + w_t`, drawing `w_t` from the stream.
pub fn step(
    sys: &LinearSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    noise: &mut NoiseStream,
) -> DVector<f64> {
    let w = noise.draw(sys.dx(), sys.sigma_w());
    sys.advance(x, u, &w)
}

/// Stage cost `xᵀQx + uᵀRu`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, q: &SymMatrix, r: &SymMatrix) -> f64 {
    assert_eq!(x.len(), q.order(), "stage_cost state dimension");
    assert_eq!(u.len(), r.order(), "stage_cost input dimension");
    (x.transpose() * q.mat() * x)[(0, 0)] + (u.transpose() * r.mat() * u)[(0, 0)]
}

/// Splits a stacked `[A B]` parameter matrix at column `dx`.
pub fn split_theta(theta: &DMatrix<f64>, dx: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(theta.nrows() == dx && theta.ncols() > dx, "theta shape mismatch");
    let a = theta.view((0, 0), (dx, dx)).into_owned();
    let b = theta.view((0, dx), (dx, theta.ncols() - dx)).into_owned();
    (a, b)
}

/// Closed-loop transition matrix `A + BK` for the parameters `[A B]`.
pub fn closed_loop(theta: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let dx = theta.nrows();
    let (a, b) = split_theta(theta, dx);
    a + b * k
}

/// Stacked gain lift `[I; K]`, `(dx+du) × dx`.
pub fn gain_lift(k: &DMatrix<f64>) -> DMatrix<f64> {
    let du = k.nrows();
    let dx = k.ncols();
    let mut lift = DMatrix::zeros(dx + du, dx);
    lift.view_mut((0, 0), (dx, dx)).copy_from(&DMatrix::identity(dx, dx));
    lift.view_mut((dx, 0), (du, dx)).copy_from(k);
    lift
}

/// Stationary closed-loop covariances under `u = Kx`: returns `(Σ, Σ̃)` where
/// `Σ` solves `Σ = (A+BK) Σ (A+BK)ᵀ + σ_w² I` and `Σ̃ = [I;K] Σ [I;K]ᵀ` is its
/// lift to state-input space.
pub fn closed_loop_cov(
    k: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    sigma_w: f64,
) -> Result<(SymMatrix, SymMatrix), NumError> {
    let dx = theta.nrows();
    let loop_mat = closed_loop(theta, k);
    let sigma = solve_dlyap(&loop_mat, &SymMatrix::scaled_identity(dx, sigma_w * sigma_w))?;
    let lift = gain_lift(k);
    let lifted = SymMatrix::symmetrized(&lift * sigma.mat() * lift.transpose());
    Ok((sigma, lifted))
}

/// Long-run average cost of the loop `u = Kx` on the plant `[A B]`, computed
/// as `trace(diag(Q,R)·Σ̃)`; equals `trace((Q + KᵀRK)Σ)`. Unstable loops
/// surface as [`NumError::NonConvergent`].
pub fn ergodic_cost(
    k: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    sigma_w: f64,
) -> Result<f64, NumError> {
    let (_, lifted) = closed_loop_cov(k, theta, sigma_w)?;
    let w = stack_cost(q, r, &DMatrix::zeros(q.order(), r.order()));
    Ok((w.mat() * lifted.mat()).trace())
}

/// Long-run average of the modified stage cost defined by a
/// [`GeneralizedCost`], `trace([Q̃ Ñ; Ñᵀ R̃]·Σ̃)`.
pub fn modified_ergodic_cost(
    k: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    gcost: &GeneralizedCost,
    sigma_w: f64,
) -> Result<f64, NumError> {
    let (_, lifted) = closed_loop_cov(k, theta, sigma_w)?;
    Ok((gcost.stacked().mat() * lifted.mat()).trace())
}

fn stack_cost(q: &SymMatrix, r: &SymMatrix, n: &DMatrix<f64>) -> SymMatrix {
    let dx = q.order();
    let du = r.order();
    let mut w = DMatrix::zeros(dx + du, dx + du);
    w.view_mut((0, 0), (dx, dx)).copy_from(q.mat());
    w.view_mut((dx, dx), (du, du)).copy_from(r.mat());
    w.view_mut((0, dx), (dx, du)).copy_from(n);
    w.view_mut((dx, 0), (du, dx)).copy_from(&n.transpose());
    SymMatrix::symmetrized(w)
}

/// Weight blocks `(Q̃, R̃, Ñ)` of a generalized quadratic stage cost
/// `xᵀQ̃x + uᵀR̃u + 2xᵀÑu`. Construction verifies that the stacked matrix
/// `[Q̃ Ñ; Ñᵀ R̃]` is positive definite, which the generalized Riccati
/// synthesis requires.
#[derive(Debug, Clone)]
pub struct GeneralizedCost {
    qb: SymMatrix,
    rb: SymMatrix,
    nb: DMatrix<f64>,
}

impl GeneralizedCost {
    pub fn new(qb: SymMatrix, rb: SymMatrix, nb: DMatrix<f64>) -> Result<Self, NumError> {
        if nb.nrows() != qb.order() || nb.ncols() != rb.order() {
            return Err(NumError::DimMismatch { context: "GeneralizedCost" });
        }
        let stacked = stack_cost(&qb, &rb, &nb);
        stacked.cholesky()?;
        Ok(GeneralizedCost { qb, rb, nb })
    }

    pub fn qb(&self) -> &SymMatrix {
        &self.qb
    }

    pub fn rb(&self) -> &SymMatrix {
        &self.rb
    }

    pub fn nb(&self) -> &DMatrix<f64> {
        &self.nb
    }

    pub fn stacked(&self) -> SymMatrix {
        stack_cost(&self.qb, &self.rb, &self.nb)
    }
}

//! Projected regularized least squares over stacked `[A B]` parameters.
//!
//! The state carries the regularized Gram matrix `V_t = λI + Σ z_k z_kᵀ` of
//! regressors `z = [x; u]`, updated rank-one per observed transition, plus
//! the running cross-moment needed for the closed-form estimate. Estimates
//! are projected onto the prior ball of radius `1/λ` around the initial
//! guess, and the confidence radius `β_t` is evaluated through
//! log-determinants so large horizons cannot overflow.

use nalgebra::{DMatrix, DVector};

use crate::numkern::{logdet_pd, project_frobenius_ball, NumError, SymMatrix};

/// Running sufficient statistics of the identification problem.
///
/// Invariants: `V ⪰ λI` (so `V ≻ 0`), and `logdet(V)` never decreases as
/// observations accumulate. Updates are functional — [`observe`] returns a
/// new state — so a run owns its state and read-only sharing is safe.
///
/// [`observe`]: ConfidenceState::observe
#[derive(Debug, Clone)]
pub struct ConfidenceState {
    v: SymMatrix,
    lambda: f64,
    hat_theta0: DMatrix<f64>,
    s: DMatrix<f64>,
    t: u64,
    sigma_w: f64,
    delta_id: f64,
}

/// A parameter estimate guaranteed to lie in the prior ball
/// `‖Θ − Θ̂₀‖_F ≤ 1/λ`.
#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    theta: DMatrix<f64>,
}

impl ThetaEstimate {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.theta
    }
}

impl ConfidenceState {
    /// Fresh state before any data: `V = λI`, zero cross-moment.
    ///
    /// `hat_theta0` is the prior center (`dx × (dx+du)`), `delta_id` the
    /// failure probability budgeted to identification.
    pub fn new(
        hat_theta0: DMatrix<f64>,
        lambda: f64,
        sigma_w: f64,
        delta_id: f64,
    ) -> Result<Self, NumError> {
        let dx = hat_theta0.nrows();
        let d = hat_theta0.ncols();
        if d <= dx || dx == 0 {
            return Err(NumError::DimMismatch { context: "ConfidenceState theta0" });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(NumError::NotFinite { context: "ConfidenceState lambda" });
        }
        if !(delta_id > 0.0 && delta_id < 1.0) {
            return Err(NumError::NotFinite { context: "ConfidenceState delta_id" });
        }
        if !(sigma_w.is_finite() && sigma_w >= 0.0) {
            return Err(NumError::NotFinite { context: "ConfidenceState sigma_w" });
        }
        Ok(ConfidenceState {
            v: SymMatrix::scaled_identity(d, lambda),
            lambda,
            hat_theta0,
            s: DMatrix::zeros(dx, d),
            t: 0,
            sigma_w,
            delta_id,
        })
    }

    pub fn dx(&self) -> usize {
        self.hat_theta0.nrows()
    }

    pub fn du(&self) -> usize {
        self.hat_theta0.ncols() - self.hat_theta0.nrows()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn v(&self) -> &SymMatrix {
        &self.v
    }

    pub fn hat_theta0(&self) -> &DMatrix<f64> {
        &self.hat_theta0
    }

    /// Folds one transition `(x, u, x⁺)` into the statistics:
    /// `V += zzᵀ`, `S += x⁺zᵀ` with `z = [x; u]`.
    pub fn observe(&self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Self {
        assert_eq!(x.len(), self.dx(), "observe: state dimension");
        assert_eq!(u.len(), self.du(), "observe: input dimension");
        assert_eq!(x_next.len(), self.dx(), "observe: successor dimension");
        let d = self.dx() + self.du();
        let mut z = DVector::zeros(d);
        z.rows_mut(0, self.dx()).copy_from(x);
        z.rows_mut(self.dx(), self.du()).copy_from(u);
        let v = SymMatrix::symmetrized(self.v.mat() + &z * z.transpose());
        let s = &self.s + x_next * z.transpose();
        ConfidenceState { v, s, t: self.t + 1, ..self.clone() }
    }

    /// Regularized least-squares estimate `(S + λΘ̂₀)V⁻¹`, projected onto the
    /// prior ball. `V` is factored per solve; no inverse is formed.
    pub fn point_estimate(&self) -> Result<ThetaEstimate, NumError> {
        let chol = self.v.cholesky()?;
        let rhs = (&self.s + self.hat_theta0.scale(self.lambda)).transpose();
        let raw = chol.solve(&rhs).transpose();
        let theta = project_frobenius_ball(&raw, &self.hat_theta0, 1.0 / self.lambda);
        Ok(ThetaEstimate { theta })
    }

    pub fn logdet_v(&self) -> f64 {
        logdet_pd(&self.v).expect("V >= lambda*I is positive definite")
    }

    /// Self-normalized confidence radius
    ///
    /// ```text
    /// β_t = σ_w √(2 dx · log( dx · det(V_t)^{1/2} / (δ · det(λI)^{1/2}) )) + 1/√λ
    /// ```
    ///
    /// evaluated via log-determinants. Nondecreasing in `t`.
    pub fn beta(&self) -> f64 {
        let d = (self.dx() + self.du()) as f64;
        let dx = self.dx() as f64;
        let half_logdet_ratio = 0.5 * (self.logdet_v() - d * self.lambda.ln());
        let inner = dx.ln() - self.delta_id.ln() + half_logdet_ratio;
        self.sigma_w * (2.0 * dx * inner).sqrt() + 1.0 / self.lambda.sqrt()
    }

    /// Weighted distance `‖(Θ̂_t − Θ)‖_{V_t} = √trace((Θ̂−Θ) V (Θ̂−Θ)ᵀ)`,
    /// the norm in which `β_t` bounds the estimation error.
    pub fn weighted_distance(&self, theta: &DMatrix<f64>) -> f64 {
        let est = self.point_estimate().expect("V is positive definite by invariant");
        let diff = est.matrix() - theta;
        let chol = self.v.cholesky().expect("V is positive definite by invariant");
        (diff * chol.l()).norm()
    }

    /// Whether `theta` lies inside the current confidence ellipsoid,
    /// `‖Θ̂_t − Θ‖_{V_t} ≤ β_t`. Diagnostic for coverage checks.
    pub fn in_confidence(&self, theta: &DMatrix<f64>) -> bool {
        self.weighted_distance(theta) <= self.beta()
    }
}

//! Shared fixtures for the integration suites: independent oracles, random
//! instance generators, and trace replay helpers.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use irlqr::algorithm::{
    build_modified_cost, nominal_gain, stability_constants, StabilityConstants,
};
use irlqr::control::{closed_loop, ergodic_cost, modified_ergodic_cost};
use irlqr::estimator::ConfidenceState;
use irlqr::harness::ExperimentConfig;
use irlqr::numkern::{decay_certificate, SymMatrix};
use irlqr::trace::RegretTrace;

/// Finite-horizon backward value iteration for the generalized Riccati
/// problem, iterating the map
///
/// ```text
/// P ← AᵀPA − (AᵀPB + N)(BᵀPB + R)⁻¹(BᵀPA + Nᵀ) + Q
/// ```
///
/// directly (no cross-term reduction, so it exercises an algebraic route
/// independent of the production solver) and returning the gain after
/// `steps` iterations.
pub fn value_iteration_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    steps: usize,
) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..steps {
        let inner = b.transpose() * &p * b + r;
        let inner_chol = Cholesky::new(inner).expect("BᵀPB + R must stay positive definite");
        let apb = a.transpose() * &p * b + n;
        let rhs = b.transpose() * &p * a + n.transpose();
        let next = a.transpose() * &p * a - &apb * inner_chol.solve(&rhs) + q;
        p = (&next + next.transpose()).scale(0.5);
    }
    let inner = b.transpose() * &p * b + r;
    let inner_chol = Cholesky::new(inner).expect("BᵀPB + R must stay positive definite");
    -inner_chol.solve(&(b.transpose() * &p * a + n.transpose()))
}

/// A randomly generated stabilizable instance with positive definite
/// stacked cost.
pub struct RandomInstance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub n: DMatrix<f64>,
}

/// Random matrix with spectral radius rescaled to `target`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, target: f64) -> DMatrix<f64> {
    loop {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let spectral: f64 = raw
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max);
        if spectral > 1e-6 {
            return raw.scale(target / spectral);
        }
    }
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(n, n).scale(rng.gen_range(0.3..1.0))
}

/// Draws a stabilizable `(A, B)` with `ρ(A) ≤ 0.85` and a positive definite
/// stacked cost; `with_cross` adds a nonzero cross weight by sampling the
/// full `(dx+du)²` block and partitioning it.
pub fn random_instance(rng: &mut ChaCha8Rng, with_cross: bool) -> RandomInstance {
    let dx = rng.gen_range(1..=6);
    let du = rng.gen_range(1..=3);
    let radius = rng.gen_range(0.1..0.85);
    let a = random_stable(rng, dx, radius);
    let b = DMatrix::from_fn(dx, du, |_, _| rng.gen_range(-1.0..1.0));
    if with_cross {
        let block = random_pd(rng, dx + du);
        let q = SymMatrix::new(block.view((0, 0), (dx, dx)).into_owned()).unwrap();
        let r = SymMatrix::new(block.view((dx, dx), (du, du)).into_owned()).unwrap();
        let n = block.view((0, dx), (dx, du)).into_owned();
        RandomInstance { a, b, q, r, n }
    } else {
        let q = SymMatrix::new(random_pd(rng, dx)).unwrap();
        let r = SymMatrix::new(random_pd(rng, du)).unwrap();
        RandomInstance { a, b, q, r, n: DMatrix::zeros(dx, du) }
    }
}

/// One audited controller update, reconstructed from a trace replay.
pub struct UpdateAudit {
    pub seed: u64,
    pub t: u64,
    /// `‖Θ̂_t − Θ⋆‖_{V_t} ≤ β_t` held at the update.
    pub in_confidence: bool,
    /// A joint decay certificate for the estimated and true closed loops
    /// exists and is dominated by the constants the learner used.
    pub certificate_valid: bool,
    /// `J(K_t, Θ⋆) − J̃(K_t, Θ̂_t, 𝒱_t)`; optimism requires this to be
    /// nonnegative (up to tolerance) under the preconditions.
    pub optimism_margin: f64,
    /// `trace(𝒱_t Σ̃^{K_t}_{Θ̂_t}) − |J(K_t, Θ̂_t) − J(K_t, Θ⋆)|`; the bonus
    /// must dominate the cost gap between estimate and truth.
    pub gap_margin: f64,
    /// `λmin(diag(Q,R) − 𝒱_t)`.
    pub reduced_cost_min_eig: f64,
    /// `‖K_t − K₀‖_F ≤ r_K`.
    pub gain_contained: bool,
}

/// Replays a learner trace against the ground truth of its config and audits
/// every logged update. The replay feeds the recorded transitions through a
/// fresh estimator, reproducing `V_t` exactly as the run saw it.
pub fn audit_updates(cfg: &ExperimentConfig, trace: &RegretTrace) -> Vec<UpdateAudit> {
    assert!(trace.error.is_none(), "cannot audit failed run: {:?}", trace.error);
    let theta_star = cfg.theta_star();
    let theta0 = cfg.theta0_matrix();
    let k0 = nominal_gain(&theta0, &cfg.q, &cfg.r).expect("nominal gain");
    let consts: StabilityConstants = stability_constants(
        &theta0,
        &k0,
        cfg.r_k,
        &cfg.q,
        &cfg.r,
        cfg.sigma_w,
        cfg.safety,
    )
    .expect("constants");

    let mut conf = ConfidenceState::new(theta0, cfg.lambda, cfg.sigma_w, cfg.delta / 3.0)
        .expect("confidence state");
    let mut audits = Vec::new();
    let mut next_update = 0usize;
    for step in &trace.steps {
        if next_update < trace.updates.len() && trace.updates[next_update].t == step.t {
            let ev = &trace.updates[next_update];
            next_update += 1;

            let in_confidence = conf.in_confidence(&theta_star);
            let loop_est = closed_loop(&ev.model, &ev.gain);
            let loop_true = closed_loop(&theta_star, &ev.gain);
            let certificate_valid = match decay_certificate(&[loop_est, loop_true], 0) {
                Ok(cert) => cert.c <= consts.c && cert.rho <= consts.rho,
                Err(_) => false,
            };

            // An unstable loop has unbounded average cost; updates where that
            // happens fail the certificate precondition above, so infinity is
            // only a placeholder that keeps the audit total.
            let bonus = ev.bonus.as_ref().expect("learner updates carry a bonus");
            let gcost = build_modified_cost(&cfg.q, &cfg.r, bonus).expect("reduced cost");
            let j_tilde = modified_ergodic_cost(&ev.gain, &ev.model, &gcost, cfg.sigma_w)
                .unwrap_or(f64::INFINITY);
            let j_true = ergodic_cost(&ev.gain, &theta_star, &cfg.q, &cfg.r, cfg.sigma_w)
                .unwrap_or(f64::INFINITY);
            let j_est = ergodic_cost(&ev.gain, &ev.model, &cfg.q, &cfg.r, cfg.sigma_w)
                .unwrap_or(f64::INFINITY);
            let bonus_trace = match irlqr::control::closed_loop_cov(&ev.gain, &ev.model, cfg.sigma_w)
            {
                Ok((_, lifted)) => (bonus.vcal.mat() * lifted.mat()).trace(),
                Err(_) => f64::INFINITY,
            };

            let dx = cfg.q.order();
            let du = cfg.r.order();
            let mut diag = DMatrix::zeros(dx + du, dx + du);
            diag.view_mut((0, 0), (dx, dx)).copy_from(cfg.q.mat());
            diag.view_mut((dx, dx), (du, du)).copy_from(cfg.r.mat());
            let reduced = SymMatrix::new((diag - bonus.vcal.mat()).clone()).expect("reduced weight");

            audits.push(UpdateAudit {
                seed: trace.seed,
                t: step.t,
                in_confidence,
                certificate_valid,
                optimism_margin: j_true - j_tilde,
                gap_margin: bonus_trace - (j_est - j_true).abs(),
                reduced_cost_min_eig: reduced.lambda_min(),
                gain_contained: ev.gain_dist <= cfg.r_k,
            });
        }
        conf = conf.observe(&step.x, &step.u, &(&cfg.a * &step.x + &cfg.b * &step.u + &step.w));
    }
    assert_eq!(next_update, trace.updates.len(), "every update must be replayed");
    audits
}

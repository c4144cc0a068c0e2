//! Reference online-LQR policies: certainty equivalence with persistent
//! excitation, and Thompson sampling.
//!
//! Both baselines reuse the learner's estimator, epoch trigger, noise
//! pairing, and trace layout, so regret comparisons against the
//! intrinsic-reward method are paired by seed. Their auxiliary randomness
//! (probing noise, posterior samples) lives on separate noise-stream
//! channels and never touches the process-noise sequence.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::algorithm::{run_online, GainStrategy, RunConfig, SynthOutcome};
use crate::control::{split_theta, LinearSystem, NoiseStream};
use crate::estimator::ConfidenceState;
use crate::numkern::{lqr_gain, project_frobenius_ball, NumError, SymMatrix};
use crate::trace::{RegretTrace, RunError};

/// Decaying input-noise schedule for persistent excitation: the injected
/// probe at step `t` has standard deviation `scale · σ_w · (t+1)^(−exponent)`
/// per input component.
#[derive(Debug, Clone, Copy)]
pub struct ProbingSchedule {
    pub scale: f64,
    pub exponent: f64,
}

impl ProbingSchedule {
    pub fn std_at(&self, t: u64, sigma_w: f64) -> f64 {
        self.scale * sigma_w * ((t + 1) as f64).powf(-self.exponent)
    }
}

struct CecPeStrategy {
    q: SymMatrix,
    r: SymMatrix,
    schedule: ProbingSchedule,
    probe: NoiseStream,
    sigma_w: f64,
}

impl GainStrategy for CecPeStrategy {
    fn resynthesize(
        &mut self,
        conf: &ConfidenceState,
        _t: u64,
        _m: u64,
    ) -> Result<SynthOutcome, NumError> {
        let estimate = conf.point_estimate()?;
        let beta = conf.beta();
        let start = Instant::now();
        let (a, b) = split_theta(estimate.matrix(), conf.dx());
        let k = lqr_gain(&a, &b, &self.q, &self.r, &DMatrix::zeros(conf.dx(), conf.du()))?;
        let timed_ns = start.elapsed().as_nanos() as u64;
        Ok(SynthOutcome {
            k,
            model: estimate.into_matrix(),
            bonus: None,
            beta,
            g: 0.0,
            timed_ns,
        })
    }

    fn input(&mut self, k: &DMatrix<f64>, x: &DVector<f64>, t: u64) -> DVector<f64> {
        let std = self.schedule.std_at(t, self.sigma_w);
        let eta = self.probe.draw(k.nrows(), std);
        k * x + eta
    }
}

/// Certainty equivalence with persistent excitation: refits on the same
/// information-gain trigger as the learner, deploys the plain
/// certainty-equivalent gain, and adds scheduled probing noise at the
/// actuation channel.
pub fn run_cec_pe(sys: &LinearSystem, cfg: &RunConfig, seed: u64) -> Result<RegretTrace, RunError> {
    let mut strategy = CecPeStrategy {
        q: sys.q().clone(),
        r: sys.r().clone(),
        schedule: ProbingSchedule { scale: cfg.pe_scale, exponent: cfg.pe_exponent },
        probe: NoiseStream::with_channel(seed, 1),
        sigma_w: sys.sigma_w(),
    };
    run_online(sys, cfg, seed, "cec_pe", &mut strategy)
}

/// How many posterior draws Thompson sampling attempts before falling back
/// to the point estimate.
const TS_MAX_REDRAWS: usize = 10;

struct TsStrategy {
    q: SymMatrix,
    r: SymMatrix,
    theta0: DMatrix<f64>,
    lambda: f64,
    inflation: f64,
    sigma_w: f64,
    sampler: NoiseStream,
}

/// One posterior perturbation: rows are independent `N(0, infl·σ_w²·V⁻¹)`,
/// realized as `√infl·σ_w·G·L⁻¹` for `V = LLᵀ` and `G` standard normal.
pub(crate) fn sample_row_perturbation(
    v: &SymMatrix,
    rows: usize,
    inflation: f64,
    sigma_w: f64,
    sampler: &mut NoiseStream,
) -> Result<DMatrix<f64>, NumError> {
    let d = v.order();
    let g = sampler.draw_matrix(rows, d, 1.0);
    let chol = v.cholesky()?;
    let l = chol.l();
    // Solve Lᵀ X = Gᵀ, so each row of Xᵀ has covariance V⁻¹.
    let x = l
        .transpose()
        .solve_upper_triangular(&g.transpose())
        .ok_or(NumError::IllConditioned)?;
    Ok(x.transpose().scale(inflation.sqrt() * sigma_w))
}

impl GainStrategy for TsStrategy {
    fn resynthesize(
        &mut self,
        conf: &ConfidenceState,
        _t: u64,
        _m: u64,
    ) -> Result<SynthOutcome, NumError> {
        let estimate = conf.point_estimate()?;
        let beta = conf.beta();
        let start = Instant::now();
        let dx = conf.dx();
        let du = conf.du();
        let mut chosen: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
        for _ in 0..TS_MAX_REDRAWS {
            let pert =
                sample_row_perturbation(conf.v(), dx, self.inflation, self.sigma_w, &mut self.sampler)?;
            let candidate = project_frobenius_ball(
                &(estimate.matrix() + pert),
                &self.theta0,
                1.0 / self.lambda,
            );
            let (a, b) = split_theta(&candidate, dx);
            match lqr_gain(&a, &b, &self.q, &self.r, &DMatrix::zeros(dx, du)) {
                Ok(k) => {
                    chosen = Some((k, candidate));
                    break;
                }
                Err(NumError::NonStabilizable) | Err(NumError::IllConditioned) => continue,
                Err(e) => return Err(e),
            }
        }
        let (k, model) = match chosen {
            Some(pair) => pair,
            None => {
                // Every draw was unstabilizable; play certainty equivalence.
                let (a, b) = split_theta(estimate.matrix(), dx);
                let k = lqr_gain(&a, &b, &self.q, &self.r, &DMatrix::zeros(dx, du))?;
                (k, estimate.matrix().clone())
            }
        };
        let timed_ns = start.elapsed().as_nanos() as u64;
        Ok(SynthOutcome { k, model, bonus: None, beta, g: 0.0, timed_ns })
    }
}

/// Thompson sampling: at each update draws a model from a Gaussian centered
/// at the point estimate with row covariance `ts_inflation·σ_w²·V_t⁻¹`,
/// projects it onto the prior ball, and deploys its certainty-equivalent
/// gain. Unstabilizable draws are retried up to ten times before falling
/// back to the point estimate.
pub fn run_ts(sys: &LinearSystem, cfg: &RunConfig, seed: u64) -> Result<RegretTrace, RunError> {
    let mut strategy = TsStrategy {
        q: sys.q().clone(),
        r: sys.r().clone(),
        theta0: cfg.theta0.clone(),
        lambda: cfg.lambda,
        inflation: cfg.ts_inflation,
        sigma_w: sys.sigma_w(),
        sampler: NoiseStream::with_channel(seed, 2),
    };
    run_online(sys, cfg, seed, "ts", &mut strategy)
}

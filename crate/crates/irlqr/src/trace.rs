//! Per-run records shared by the learner, the baselines, and the harness.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::algorithm::ExplorationBonus;
use crate::numkern::NumError;

/// One simulated step. `cum_regret` at index `t` is `Σ_{k≤t} ℓ_k − (t+1)·J⋆`
/// with `J⋆` the optimal ergodic cost of the ground-truth plant. The raw
/// state, input, and disturbance are kept so that invariants (noise pairing,
/// input decomposition, regret recomputation) can be audited from the trace.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: u64,
    pub stage_cost: f64,
    pub cum_regret: f64,
    pub update: bool,
    /// Wall-clock nanoseconds spent in controller synthesis at this step;
    /// zero on non-update steps.
    pub update_wallclock_ns: u64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
}

/// Diagnostics captured at each controller update.
#[derive(Debug, Clone)]
pub struct UpdateEvent {
    pub t: u64,
    /// Epoch index after this update (first update has `m = 1`).
    pub m: u64,
    /// Gain deployed from this step on.
    pub gain: DMatrix<f64>,
    /// Model the gain was synthesized from (point estimate, or the posterior
    /// sample for Thompson sampling).
    pub model: DMatrix<f64>,
    /// Exploration bonus used, when the method has one.
    pub bonus: Option<ExplorationBonus>,
    pub beta: f64,
    pub g: f64,
    pub synth_ns: u64,
    /// `logdet V_t` at the update instant.
    pub logdet_v: f64,
    /// `‖K_t − K₀‖_F`, for gain-containment diagnostics.
    pub gain_dist: f64,
}

/// Full record of one online run.
#[derive(Debug, Clone)]
pub struct RegretTrace {
    pub method: String,
    pub seed: u64,
    /// Optimal ergodic cost of the ground-truth plant.
    pub jstar: f64,
    pub steps: Vec<StepRecord>,
    pub updates: Vec<UpdateEvent>,
    /// `logdet(λI)` at the start of the run.
    pub logdet_v0: f64,
    /// `logdet V_T` after the final observation.
    pub final_logdet_v: f64,
    /// Number of updates whose gain left the ball `‖K − K₀‖_F ≤ r_K`;
    /// a diagnostic, not an error.
    pub gain_violations: usize,
    /// Populated by batch execution when the run failed; such traces carry
    /// no steps.
    pub error: Option<String>,
}

impl RegretTrace {
    pub fn update_count(&self) -> usize {
        self.updates.len()
    }

    /// Cumulative regret at step index `t`, if the run reached it.
    pub fn cum_regret_at(&self, t: u64) -> Option<f64> {
        self.steps.get(t as usize).map(|s| {
            debug_assert_eq!(s.t, t);
            s.cum_regret
        })
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.steps.last().map(|s| s.cum_regret)
    }
}

/// Failure of a single online run.
#[derive(Debug)]
pub enum RunError {
    /// The state norm crossed the configured blow-up bound — a diagnostic
    /// guard converting runaway trajectories into a reportable error.
    Unstable { t: u64, norm: f64 },
    /// Controller synthesis failed at an update step.
    Synthesis { t: u64, source: NumError },
    /// The run could not be initialized (e.g. the prior center is not
    /// stabilizable).
    Setup(NumError),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Unstable { t, norm } => {
                write!(f, "state blow-up at step {t}: |x| = {norm:e}")
            }
            RunError::Synthesis { t, source } => {
                write!(f, "controller synthesis failed at step {t}: {source}")
            }
            RunError::Setup(source) => write!(f, "run setup failed: {source}"),
        }
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            RunError::Synthesis { source, .. } | RunError::Setup(source) => Some(source),
            RunError::Unstable { .. } => None,
        }
    }
}

//! Self-learning measurement subsystem: the observation window, the admitted-rate to
//! response-time curve, and the admitted-rate variability tracker used by change detection.

pub mod curve;
pub mod window;

pub use curve::{CurveEstimate, Interpolant, Knot, SliceStats, TierCurve};
pub use window::{window_size, ObservationWindow, WindowStats};

use crate::stats::RunningStats;

/// Spread of the admitted rate, sampled only in control periods where demand exceeded the limit.
#[derive(Debug, Clone, Default)]
pub struct RateVariance {
    samples: RunningStats,
}

impl RateVariance {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `lambda_adm` if `lambda_in > lambda_star`; returns whether it was kept.
    pub fn observe(&mut self, lambda_in: f64, lambda_adm: f64, lambda_star: f64) -> bool {
        let qualifies = lambda_in > lambda_star;
        if qualifies {
            self.samples.push(lambda_adm);
        }
        qualifies
    }

    pub fn push(&mut self, lambda_adm: f64) {
        self.samples.push(lambda_adm);
    }

    pub fn count(&self) -> u64 {
        self.samples.count()
    }

    /// Sample standard deviation; zero with fewer than two samples.
    pub fn sigma(&self) -> f64 {
        self.samples.std_dev()
    }
}

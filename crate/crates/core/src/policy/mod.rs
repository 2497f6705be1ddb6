//! Admission-control strategies behind one decision interface.
//!
//! The engine consults the controller on every new session, forwards the response-time samples
//! users actually received, and fires the controller's periodic tick. Requests of sessions
//! that were already admitted are never filtered.

pub mod baseline;
pub mod soc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::monitor::Knot;
use crate::types::SimTime;

pub use baseline::{
    pac_probability, pac_tier_probability, tbac_decision, AlwaysAdmit, PacConfig, PacPolicy, PeriodSamples,
    TbacConfig, TbacDecision, TbacPolicy,
};
pub use soc::{
    admission_probability, change_detection, update_admission_probability, RateLimitUpdate, SocConfig,
    SocPolicy, SocState,
};

/// Which controller runs at the dispatcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Self-configuring control with change detection and flash-crowd mode.
    Soc,
    /// The same controller with change detection switched off.
    SocBase,
    Tbac,
    Pac,
    Always,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Soc,
        PolicyKind::SocBase,
        PolicyKind::Tbac,
        PolicyKind::Pac,
        PolicyKind::Always,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Soc => "soc",
            PolicyKind::SocBase => "soc-base",
            PolicyKind::Tbac => "tbac",
            PolicyKind::Pac => "pac",
            PolicyKind::Always => "always",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected one of soc, soc-base, tbac, pac, always)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Normal,
    FlashCrowd,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::Normal => "normal",
            ControlMode::FlashCrowd => "flash_crowd",
        }
    }
}

/// Externally visible controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSnapshot {
    /// Probability that the next new session is admitted.
    pub p: f64,
    /// Current admitted-rate limit, for controllers that maintain one.
    pub lambda_star: Option<f64>,
    pub mode: ControlMode,
}

/// Common interface of all admission controllers.
pub trait AdmissionController: Send {
    fn kind(&self) -> PolicyKind;

    /// Decides on a new session. `coin` is a uniform draw on (0, 1] from the admission stream.
    fn on_arrival(&mut self, now: SimTime, coin: f64) -> bool;

    /// A response delivered to a client that was still waiting for it.
    fn on_response(&mut self, tier: usize, now: SimTime, rt: f64);

    /// A response whose client had already given up.
    fn on_dropped_response(&mut self) {}

    fn on_control_tick(&mut self, now: SimTime);

    /// When the next control tick is due, if one is pending.
    fn next_control_tick(&self) -> Option<SimTime>;

    fn snapshot(&self) -> ControlSnapshot;

    /// Learned curves per tier, for controllers that build them.
    fn curves(&self) -> Option<Vec<Vec<Knot>>> {
        None
    }

    /// Diagnostics raised since the last call.
    fn take_warnings(&mut self) -> Vec<String> {
        Vec::new()
    }
}

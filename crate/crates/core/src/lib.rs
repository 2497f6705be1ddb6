//! Discrete-event simulator of a session-based multi-tier web cluster with pluggable admission
//! control.
//!
//! The [`engine`] drives sessions from the [`traffic`] model through the [`cluster`] while an
//! [`policy::AdmissionController`] decides, per new session, whether it gets in. The
//! self-configuring controller learns each tier's admitted-rate/response-time curve online
//! with the tools in [`monitor`]. [`experiment`] runs whole [`scenario`] files.
//!
//! ```
//! use soc_sim::{experiment, scenario::reference_file};
//!
//! let mut file = reference_file(2.0);
//! file.horizon = 800.0;
//! let result = experiment::run(&file.build()?)?;
//! assert!(result.report.sessions.conserved());
//! # Ok::<(), soc_sim::Error>(())
//! ```

pub mod cluster;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod monitor;
pub mod policy;
pub mod scenario;
pub mod sla;
pub mod stats;
pub mod traffic;
pub mod types;

pub use error::{Error, Result};
pub use types::SimTime;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    pub struct Model;
    #[doc = include_str!("../../../book/src/learning.md")]
    pub struct Learning;
    #[doc = include_str!("../../../book/src/controller.md")]
    pub struct Controller;
    #[doc = include_str!("../../../book/src/baselines.md")]
    pub struct Baselines;
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub struct Scenarios;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    pub struct Reproducibility;
}

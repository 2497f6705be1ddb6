//! Scenario files.
//!
//! A scenario is a TOML document with `schema_version = 1`. Tiers are declared once under
//! `cluster.tiers` and referenced by name everywhere else. Optional settings have the defaults
//! documented on each field; [`ScenarioFile::resolve`] fills them in so the effective
//! configuration can be echoed verbatim next to the results.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::cluster::{ClusterSpec, TierSpec};
use crate::engine::{Model, RunOptions};
use crate::error::{Error, Result};
use crate::policy::{
    AdmissionController, AlwaysAdmit, PacConfig, PacPolicy, PolicyKind, SocConfig, SocPolicy, TbacConfig,
    TbacPolicy,
};
use crate::sla::SlaSpec;
use crate::traffic::{CountDistribution, Phase, Segment, SessionTemplate, TrafficProfile};

pub const SCHEMA_VERSION: u32 = 1;

/// Scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    /// Simulated seconds.
    pub horizon: f64,
    /// Default: ten SOC control periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    /// Time-series spacing. Default: 5 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    pub cluster: ClusterSpec,
    pub sla: SlaFile,
    pub traffic: TrafficProfile,
    pub session: SessionFile,
    pub policy: PolicyFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaFile {
    /// Response-time cap per tier name.
    pub rt_limit: BTreeMap<String, f64>,
    pub lambda_min: f64,
    pub check_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFile {
    pub tier: Spanned<String>,
    pub count: CountDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub phases: Vec<PhaseFile>,
    pub think_mean: f64,
    pub think_floor: f64,
    pub client_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocFile {
    /// Default: 40 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_period: Option<f64>,
    /// Regressogram slice width. Default: a tenth of `sla.lambda_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_width: Option<f64>,
    /// Default: 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_sigma: Option<f64>,
    /// Default: 0.2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_relative_se: Option<f64>,
    /// Default: ten control periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TbacFile {
    /// Default: 40 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Per tier name. Default: the SLA limits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacFile {
    /// Default: 40 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Per tier name. Default: 0.6 times the SLA limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rt_low: Option<BTreeMap<String, f64>>,
    /// Per tier name. Default: the SLA limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rt_high: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub kind: PolicyKind,
    #[serde(default)]
    pub soc: SocFile,
    #[serde(default)]
    pub tbac: TbacFile,
    #[serde(default)]
    pub pac: PacFile,
}

/// Parameters that `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Replaces the traffic profile with a constant rate.
    ArrivalRate,
    /// Control period of every policy.
    ControlPeriod,
    SliceWidth,
    KSigma,
    Seed,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::ArrivalRate => "arrival_rate",
            SweepParam::ControlPeriod => "T_AC",
            SweepParam::SliceWidth => "l_lambda",
            SweepParam::KSigma => "k_sigma",
            SweepParam::Seed => "seed",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arrival_rate" | "lambda_in" => Ok(SweepParam::ArrivalRate),
            "T_AC" | "t_ac" | "control_period" => Ok(SweepParam::ControlPeriod),
            "l_lambda" | "slice_width" => Ok(SweepParam::SliceWidth),
            "k_sigma" => Ok(SweepParam::KSigma),
            "seed" => Ok(SweepParam::Seed),
            other => Err(Error::config(format!(
                "unknown sweep parameter '{other}' (expected arrival_rate, T_AC, l_lambda, k_sigma or seed)"
            ))),
        }
    }
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub policy: Option<PolicyKind>,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub params: Vec<(SweepParam, f64)>,
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ScenarioFile {
    pub fn parse(source: &str, origin: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(source).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                path: origin.to_string(),
                message: format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    file.schema_version
                ),
            });
        }
        for (i, phase) in file.session.phases.iter().enumerate() {
            if file.cluster.tier_index(phase.tier.get_ref()).is_none() {
                let (line, col) = line_col(source, phase.tier.span().start);
                return Err(Error::Parse {
                    path: origin.to_string(),
                    message: format!(
                        "line {line}, column {col}: session.phases[{i}].tier '{}' is not a declared cluster tier",
                        phase.tier.get_ref()
                    ),
                });
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)?;
        Self::parse(&source, &path.display().to_string())
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(kind) = overrides.policy {
            self.policy.kind = kind;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(horizon) = overrides.horizon {
            self.horizon = horizon;
        }
        for (param, value) in &overrides.params {
            self.set(*param, *value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, param: SweepParam, value: f64) -> Result<()> {
        match param {
            SweepParam::ArrivalRate => self.traffic = TrafficProfile::constant(value),
            SweepParam::ControlPeriod => {
                self.policy.soc.control_period = Some(value);
                self.policy.tbac.period = Some(value);
                self.policy.pac.period = Some(value);
            }
            SweepParam::SliceWidth => self.policy.soc.slice_width = Some(value),
            SweepParam::KSigma => self.policy.soc.k_sigma = Some(value),
            SweepParam::Seed => {
                if !(value >= 0.0 && value.fract() == 0.0 && value <= u64::MAX as f64) {
                    return Err(Error::config(format!(
                        "seed {value} is not a non-negative integer"
                    )));
                }
                self.seed = value as u64;
            }
        }
        Ok(())
    }

    fn per_tier(&self, what: &str, map: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        if let Some(unknown) = map.keys().find(|k| self.cluster.tier_index(k).is_none()) {
            return Err(Error::config(format!(
                "{what}: '{unknown}' is not a declared cluster tier"
            )));
        }
        self.cluster
            .tiers
            .iter()
            .map(|t| {
                map.get(&t.name)
                    .copied()
                    .ok_or_else(|| Error::config(format!("{what}: missing a value for tier '{}'", t.name)))
            })
            .collect()
    }

    fn tier_map(&self, values: impl IntoIterator<Item = f64>) -> BTreeMap<String, f64> {
        self.cluster
            .tiers
            .iter()
            .map(|t| t.name.clone())
            .zip(values)
            .collect()
    }

    /// Copy with every optional setting filled in.
    pub fn resolve(&self) -> Result<ScenarioFile> {
        let mut f = self.clone();
        let limits = self.per_tier("sla.rt_limit", &self.sla.rt_limit)?;
        let soc = &mut f.policy.soc;
        let period = *soc.control_period.get_or_insert(40.0);
        soc.slice_width.get_or_insert(self.sla.lambda_min / 10.0);
        soc.k_sigma.get_or_insert(3.0);
        soc.max_relative_se.get_or_insert(0.2);
        soc.retention.get_or_insert(10.0 * period);
        f.warmup.get_or_insert(10.0 * period);
        f.sample_interval.get_or_insert(5.0);
        let tbac_default = self.tier_map(limits.iter().copied());
        let pac_low = self.tier_map(limits.iter().map(|l| 0.6 * l));
        let pac_high = self.tier_map(limits.iter().copied());
        f.policy.tbac.period.get_or_insert(40.0);
        f.policy.tbac.thresholds.get_or_insert(tbac_default);
        f.policy.pac.period.get_or_insert(40.0);
        f.policy.pac.rt_low.get_or_insert(pac_low);
        f.policy.pac.rt_high.get_or_insert(pac_high);
        Ok(f)
    }

    /// Validated, ready-to-run scenario.
    pub fn build(&self) -> Result<Scenario> {
        let f = self.resolve()?;
        let tiers = f.cluster.tiers.len();
        let sla = SlaSpec::new(
            f.per_tier("sla.rt_limit", &f.sla.rt_limit)?,
            f.sla.lambda_min,
            f.sla.check_interval,
        )?;
        let phases = f
            .session
            .phases
            .iter()
            .map(|p| Phase {
                tier: f.cluster.tier_index(p.tier.get_ref()).expect("checked on parse"),
                count: p.count,
            })
            .collect();
        let session = SessionTemplate {
            phases,
            think_mean: f.session.think_mean,
            think_floor: f.session.think_floor,
            client_timeout: f.session.client_timeout,
        };
        let model = Model {
            cluster: f.cluster.clone(),
            sla,
            traffic: f.traffic.clone(),
            session,
        };
        model.validate()?;
        let options = RunOptions {
            seed: f.seed,
            horizon: f.horizon,
            warmup: f.warmup.expect("resolved"),
            sample_interval: f.sample_interval.expect("resolved"),
        };
        options.validate()?;

        let s = &f.policy.soc;
        let soc = SocConfig {
            control_period: s.control_period.expect("resolved"),
            slice_width: s.slice_width.expect("resolved"),
            k_sigma: s.k_sigma.expect("resolved"),
            change_detection: f.policy.kind != PolicyKind::SocBase,
            max_relative_se: s.max_relative_se.expect("resolved"),
            retention: s.retention.expect("resolved"),
        };
        let tbac = TbacConfig {
            thresholds: f.per_tier(
                "policy.tbac.thresholds",
                f.policy.tbac.thresholds.as_ref().expect("resolved"),
            )?,
            period: f.policy.tbac.period.expect("resolved"),
        };
        let pac = PacConfig {
            rt_low: f.per_tier(
                "policy.pac.rt_low",
                f.policy.pac.rt_low.as_ref().expect("resolved"),
            )?,
            rt_high: f.per_tier(
                "policy.pac.rt_high",
                f.policy.pac.rt_high.as_ref().expect("resolved"),
            )?,
            period: f.policy.pac.period.expect("resolved"),
        };
        let policy = PolicySpec {
            kind: f.policy.kind,
            soc,
            tbac,
            pac,
        };
        policy.validate(tiers)?;
        Ok(Scenario {
            name: f.name.clone().unwrap_or_else(|| "scenario".into()),
            model,
            options,
            policy,
            effective: f,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Controller choice and the parameters of every controller.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub soc: SocConfig,
    pub tbac: TbacConfig,
    pub pac: PacConfig,
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be > 0, got {v}")))
    }
}

impl PolicySpec {
    pub fn validate(&self, tiers: usize) -> Result<()> {
        let s = &self.soc;
        positive("policy.soc.control_period", s.control_period)?;
        positive("policy.soc.slice_width", s.slice_width)?;
        positive("policy.soc.max_relative_se", s.max_relative_se)?;
        positive("policy.soc.retention", s.retention)?;
        if !(s.k_sigma.is_finite() && s.k_sigma >= 0.0) {
            return Err(Error::config("policy.soc.k_sigma must be >= 0"));
        }
        positive("policy.tbac.period", self.tbac.period)?;
        positive("policy.pac.period", self.pac.period)?;
        debug_assert_eq!(self.tbac.thresholds.len(), tiers);
        for (i, t) in self.tbac.thresholds.iter().enumerate() {
            positive(&format!("policy.tbac.thresholds[{i}]"), *t)?;
        }
        for (i, (lo, hi)) in self.pac.rt_low.iter().zip(&self.pac.rt_high).enumerate() {
            if !(*lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::config(format!(
                    "policy.pac: tier {i} needs 0 < rt_low < rt_high, got {lo} and {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Fresh controller; `bench_rt` is the idle benchmark used to seed SOC's curves.
    pub fn make(&self, sla: &SlaSpec, bench_rt: &[f64]) -> Box<dyn AdmissionController> {
        match self.kind {
            PolicyKind::Soc | PolicyKind::SocBase => {
                Box::new(SocPolicy::new(self.soc.clone(), sla.clone(), bench_rt))
            }
            PolicyKind::Tbac => Box::new(TbacPolicy::new(self.tbac.clone())),
            PolicyKind::Pac => Box::new(PacPolicy::new(self.pac.clone())),
            PolicyKind::Always => Box::new(AlwaysAdmit),
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub options: RunOptions,
    pub policy: PolicySpec,
    /// The resolved file, echoed into run outputs.
    pub effective: ScenarioFile,
}

impl Scenario {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut file = ScenarioFile::load(path)?;
        file.apply(overrides)?;
        file.build()
    }

    pub fn from_toml(source: &str, overrides: &Overrides) -> Result<Self> {
        let mut file = ScenarioFile::parse(source, "<inline>")?;
        file.apply(overrides)?;
        file.build()
    }

    pub fn tier_names(&self) -> Vec<String> {
        self.model.cluster.tiers.iter().map(|t| t.name.clone()).collect()
    }
}

/// The reference three-tier setup used by the bundled scenarios, at `rate` sessions/second.
pub fn reference_file(rate: f64) -> ScenarioFile {
    let tier = |name: &str, mean_service: f64| TierSpec {
        name: name.into(),
        servers: 20,
        mean_service,
    };
    let phase = |tier: &str| PhaseFile {
        tier: Spanned::new(0..0, tier.to_string()),
        count: CountDistribution::Geometric(5.0),
    };
    ScenarioFile {
        schema_version: SCHEMA_VERSION,
        name: Some("reference".into()),
        seed: 1,
        horizon: 4000.0,
        warmup: None,
        sample_interval: None,
        cluster: ClusterSpec {
            tiers: vec![tier("http", 0.001), tier("servlet", 0.01), tier("db", 1.0)],
            transit_delay: 0.0,
        },
        sla: SlaFile {
            rt_limit: [("http", 1.0), ("servlet", 1.0), ("db", 5.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            lambda_min: 1.0,
            check_interval: 40.0,
        },
        traffic: TrafficProfile {
            segments: vec![Segment { start: 0.0, rate }],
        },
        session: SessionFile {
            phases: vec![phase("http"), phase("servlet"), phase("db")],
            think_mean: 10.0,
            think_floor: 1.0,
            client_timeout: 8.0,
        },
        policy: PolicyFile {
            kind: PolicyKind::Soc,
            soc: SocFile::default(),
            tbac: TbacFile::default(),
            pac: PacFile::default(),
        },
    }
}

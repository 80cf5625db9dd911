use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{validate_image_id, DomainError};
use crate::synthetic::SceneParams;

/// Probability bounds applied before taking log-odds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitClamp {
    pub low: f64,
    pub high: f64,
}

impl Default for LogitClamp {
    fn default() -> Self {
        LogitClamp {
            low: 1e-6,
            high: 1.0 - 1e-6,
        }
    }
}

impl LogitClamp {
    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskDimPolicy {
    #[default]
    Error,
    NearestResize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Fixture,
    Synthetic,
    Subprocess,
    Http,
}

/// Where one operator is served from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorEndpoint {
    pub kind: EndpointKind,
    pub locator: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Cap on concurrent requests to this endpoint; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl OperatorEndpoint {
    pub fn new(kind: EndpointKind, locator: impl Into<String>) -> Self {
        OperatorEndpoint {
            kind,
            locator: locator.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_in_flight: None,
        }
    }

    pub fn synthetic() -> Self {
        Self::new(EndpointKind::Synthetic, "world")
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.locator.trim().is_empty() {
            return Err(DomainError::InvalidConfig("endpoint locator is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(DomainError::InvalidConfig(format!(
                "endpoint timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.max_in_flight == Some(0) {
            return Err(DomainError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Accepts `synthetic`, `fixture:<dir>`, `subprocess:<command line>`,
/// `http://...`/`https://...` or `http:<url>`.
impl FromStr for OperatorEndpoint {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let ep = if s == "synthetic" {
            Self::synthetic()
        } else if let Some(rest) = s.strip_prefix("synthetic:") {
            Self::new(EndpointKind::Synthetic, rest)
        } else if let Some(rest) = s.strip_prefix("fixture:") {
            Self::new(EndpointKind::Fixture, rest)
        } else if let Some(rest) = s.strip_prefix("subprocess:") {
            Self::new(EndpointKind::Subprocess, rest)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Self::new(EndpointKind::Http, s)
        } else if let Some(rest) = s.strip_prefix("http:") {
            Self::new(EndpointKind::Http, rest)
        } else {
            return Err(DomainError::InvalidConfig(format!(
                "unrecognized backend {s:?}; expected synthetic, fixture:<dir>, subprocess:<cmd> or http://<url>"
            )));
        };
        ep.validate()?;
        Ok(ep)
    }
}

impl fmt::Display for OperatorEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EndpointKind::Http => f.write_str(&self.locator),
            EndpointKind::Fixture => write!(f, "fixture:{}", self.locator),
            EndpointKind::Synthetic => write!(f, "synthetic:{}", self.locator),
            EndpointKind::Subprocess => write!(f, "subprocess:{}", self.locator),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Propose,
    Ground,
    Edit,
    Classify,
    Embed,
}

impl Operator {
    pub const ALL: [Operator; 5] = [
        Operator::Propose,
        Operator::Ground,
        Operator::Edit,
        Operator::Classify,
        Operator::Embed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Propose => "propose",
            Operator::Ground => "ground",
            Operator::Edit => "edit",
            Operator::Classify => "classify",
            Operator::Embed => "embed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propose: Option<OperatorEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground: Option<OperatorEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit: Option<OperatorEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classify: Option<OperatorEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed: Option<OperatorEndpoint>,
}

impl Endpoints {
    pub fn all(ep: OperatorEndpoint) -> Self {
        Endpoints {
            propose: Some(ep.clone()),
            ground: Some(ep.clone()),
            edit: Some(ep.clone()),
            classify: Some(ep.clone()),
            embed: Some(ep),
        }
    }

    pub fn get(&self, op: Operator) -> Option<&OperatorEndpoint> {
        match op {
            Operator::Propose => self.propose.as_ref(),
            Operator::Ground => self.ground.as_ref(),
            Operator::Edit => self.edit.as_ref(),
            Operator::Classify => self.classify.as_ref(),
            Operator::Embed => self.embed.as_ref(),
        }
    }

    pub fn require(&self, op: Operator) -> Result<&OperatorEndpoint, DomainError> {
        self.get(op).ok_or_else(|| {
            DomainError::InvalidConfig(format!(
                "no backend endpoint configured for operator '{0}'; pass --backends or set endpoints.{0} in the config file",
                op.name()
            ))
        })
    }
}

/// Resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub epsilon: f64,
    pub logit_clamp: LogitClamp,
    pub area_exclusion_pct: f64,
    /// Floor on mask area (percent) in the size-normalized importance.
    pub area_floor_pct: f64,
    pub mask_dim_mismatch_policy: MaskDimPolicy,
    pub rng_seed: u64,
    pub endpoints: Endpoints,
    pub synthetic: SceneParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            epsilon: 1e-8,
            logit_clamp: LogitClamp::default(),
            area_exclusion_pct: 99.0,
            area_floor_pct: 0.5,
            mask_dim_mismatch_policy: MaskDimPolicy::Error,
            rng_seed: 0,
            endpoints: Endpoints::default(),
            synthetic: SceneParams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        validate_image_id(&self.run_id)
            .map_err(|_| DomainError::InvalidConfig(format!("run_id {:?} is not path-safe", self.run_id)))?;
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(DomainError::InvalidConfig(format!(
                "epsilon must lie in (0, 1e-3), got {}",
                self.epsilon
            )));
        }
        if !(self.area_exclusion_pct > 0.0 && self.area_exclusion_pct <= 100.0) {
            return Err(DomainError::InvalidConfig(format!(
                "area_exclusion_pct must lie in (0, 100], got {}",
                self.area_exclusion_pct
            )));
        }
        if !(self.area_floor_pct > 0.0 && self.area_floor_pct.is_finite()) {
            return Err(DomainError::InvalidConfig("area_floor_pct must be positive".into()));
        }
        let c = self.logit_clamp;
        if !(c.low > 0.0 && c.low < c.high && c.high < 1.0) {
            return Err(DomainError::InvalidConfig(format!(
                "logit_clamp must satisfy 0 < low < high < 1, got [{}, {}]",
                c.low, c.high
            )));
        }
        for op in Operator::ALL {
            if let Some(ep) = self.endpoints.get(op) {
                ep.validate()?;
            }
        }
        self.synthetic.validate()?;
        Ok(())
    }
}

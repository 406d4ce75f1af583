//! Experiment configuration: the JSON schema the command-line front
//! end consumes, plus canonical hashing so results can be traced back
//! to the exact inputs that produced them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::greens::BallDomain;
use crate::pde::{log_grid, FieldSample};
use crate::rates::Potential;

/// One experiment: a dimension plus whatever sections the requested
/// command needs. Unknown fields are rejected so typos surface as
/// schema errors instead of silently ignored settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Potential>,
    /// Candidate concentration points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Sampled field for peak selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<Vec<FieldSample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<EpsGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceOverrides>,
}

/// Domain section. Only balls have built-in Green data; other shapes
/// come in through the library's evaluator plug-in, not the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
}

impl DomainSpec {
    pub fn build(&self, dim: usize) -> Result<BallDomain> {
        match self {
            DomainSpec::Ball { center, radius } => {
                if center.len() != dim {
                    return Err(Error::config(format!(
                        "domain center has {} coordinates, config says dim = {dim}",
                        center.len()
                    )));
                }
                BallDomain::new(center.clone(), *radius)
            }
        }
    }
}

/// Coupling grid: either an explicit decreasing list or a log-spaced
/// description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsGrid {
    Log { hi: f64, lo: f64, count: usize },
    List(Vec<f64>),
}

impl EpsGrid {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            EpsGrid::Log { hi, lo, count } => log_grid(*hi, *lo, *count),
            EpsGrid::List(values) => Ok(values.clone()),
        }
    }
}

/// Parses the `--eps-grid hi:lo:n` flag into a log-spaced grid spec.
pub fn parse_eps_flag(text: &str) -> Result<EpsGrid> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "eps grid flag must look like hi:lo:count, got {text:?}"
        )));
    }
    let hi: f64 = parts[0]
        .parse()
        .map_err(|_| Error::config(format!("bad grid endpoint {:?}", parts[0])))?;
    let lo: f64 = parts[1]
        .parse()
        .map_err(|_| Error::config(format!("bad grid endpoint {:?}", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::config(format!("bad grid count {:?}", parts[2])))?;
    // Validate eagerly so the flag fails at parse time, not mid-run.
    log_grid(hi, lo, count)?;
    Ok(EpsGrid::Log { hi, lo, count })
}

/// Profile-table settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

/// Pass/fail thresholds of the validation pipeline. The defaults are
/// the published ones; overrides exist for exploration, and the
/// envelope records whatever was in force.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ValidateTolerances {
    /// Relative band around the extrapolated rate limit.
    pub rate_limit_rel: f64,
    /// Relative band around the log-law constant at the smallest
    /// coupling (dimension four).
    pub trend_band_rel: f64,
    /// Band around 1 for the speed-identity ratio.
    pub speed_ratio_tol: f64,
    /// Band around 1/2 for the doubled-coefficient control.
    pub control_tol: f64,
    /// Ceiling on the Pohozaev identity residuals.
    pub pohozaev_residual: f64,
    /// Floor on the quadrature refinement order.
    pub refinement_order_min: f64,
    /// Two-sided band around the predicted remainder exponents.
    pub slope_band: f64,
}

impl Default for ValidateTolerances {
    fn default() -> Self {
        ValidateTolerances {
            rate_limit_rel: 0.10,
            trend_band_rel: 0.25,
            speed_ratio_tol: 0.10,
            control_tol: 0.05,
            pohozaev_residual: 1e-6,
            refinement_order_min: 2.0,
            slope_band: 0.3,
        }
    }
}

/// Partial tolerance settings; anything absent keeps its default.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend_band_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_ratio_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pohozaev_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement_order_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_band: Option<f64>,
}

impl ValidateTolerances {
    pub fn apply(mut self, o: &ToleranceOverrides) -> Self {
        if let Some(v) = o.rate_limit_rel {
            self.rate_limit_rel = v;
        }
        if let Some(v) = o.trend_band_rel {
            self.trend_band_rel = v;
        }
        if let Some(v) = o.speed_ratio_tol {
            self.speed_ratio_tol = v;
        }
        if let Some(v) = o.control_tol {
            self.control_tol = v;
        }
        if let Some(v) = o.pohozaev_residual {
            self.pohozaev_residual = v;
        }
        if let Some(v) = o.refinement_order_min {
            self.refinement_order_min = v;
        }
        if let Some(v) = o.slope_band {
            self.slope_band = v;
        }
        self
    }
}

impl ExperimentConfig {
    /// Parses and structurally validates a config document. Schema
    /// errors keep serde's line and column diagnostics.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::config(format!(
                "dimension {} not supported, need at least 4",
                self.dim
            )));
        }
        if let Some(points) = &self.points {
            for (i, p) in points.iter().enumerate() {
                if p.len() != self.dim {
                    return Err(Error::config(format!(
                        "point {i} has {} coordinates, config says dim = {}",
                        p.len(),
                        self.dim
                    )));
                }
                if p.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config(format!("point {i} has a non-finite coordinate")));
                }
            }
        }
        if let Some(DomainSpec::Ball { center, .. }) = &self.domain {
            if center.len() != self.dim {
                return Err(Error::config(format!(
                    "domain center has {} coordinates, config says dim = {}",
                    center.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Serialization goes through
    /// a value tree whose object keys are sorted, so formatting and
    /// field order in the source file cannot change the hash; the
    /// semantic content can.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canon = value.to_string();
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }
}

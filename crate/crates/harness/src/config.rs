//! Experiment configuration: TOML (or JSON) schema, validation and CLI overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Consensus on posteriors.
    Cp,
    /// Consensus on likelihoods and priors.
    Clcp,
    Dgpb1,
    Dimm,
    CgmCphd,
    #[serde(rename = "cmdglmb")]
    CmdGlmb,
    Clmb,
    /// Centralized UKF/EKF correcting with every sensor in turn.
    Centralized,
    Cgpb1,
    Cimm,
    GmCphd,
    #[serde(rename = "mdglmb")]
    MdGlmb,
    Lmb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 13] = [
        Algorithm::Cp,
        Algorithm::Clcp,
        Algorithm::Dgpb1,
        Algorithm::Dimm,
        Algorithm::CgmCphd,
        Algorithm::CmdGlmb,
        Algorithm::Clmb,
        Algorithm::Centralized,
        Algorithm::Cgpb1,
        Algorithm::Cimm,
        Algorithm::GmCphd,
        Algorithm::MdGlmb,
        Algorithm::Lmb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cp => "cp",
            Algorithm::Clcp => "clcp",
            Algorithm::Dgpb1 => "dgpb1",
            Algorithm::Dimm => "dimm",
            Algorithm::CgmCphd => "cgm-cphd",
            Algorithm::CmdGlmb => "cmdglmb",
            Algorithm::Clmb => "clmb",
            Algorithm::Centralized => "centralized",
            Algorithm::Cgpb1 => "cgpb1",
            Algorithm::Cimm => "cimm",
            Algorithm::GmCphd => "gm-cphd",
            Algorithm::MdGlmb => "mdglmb",
            Algorithm::Lmb => "lmb",
        }
    }

    pub fn is_multi_object(self) -> bool {
        matches!(self, Algorithm::CgmCphd | Algorithm::CmdGlmb | Algorithm::Clmb | Algorithm::GmCphd | Algorithm::MdGlmb | Algorithm::Lmb)
    }

    pub fn is_multi_model(self) -> bool {
        matches!(self, Algorithm::Dgpb1 | Algorithm::Dimm | Algorithm::Cgpb1 | Algorithm::Cimm)
    }

    pub fn is_centralized(self) -> bool {
        matches!(self, Algorithm::Centralized | Algorithm::Cgpb1 | Algorithm::Cimm | Algorithm::GmCphd | Algorithm::MdGlmb | Algorithm::Lmb)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_lowercase().replace('_', "-").replace('δ', "d");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| format!("unknown algorithm `{s}`; expected one of {}", Algorithm::ALL.map(|a| a.name()).join(", ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterChoice {
    Ekf,
    #[default]
    Ukf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoChoice {
    MinInverseWeight,
    NetworkSize,
    #[default]
    SensorFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaConfig {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MotionConfig {
    Ncv { sigma_w: f64 },
    Dwna { sigma_w: f64 },
    /// Turn rate in degrees per second.
    Ct { omega_deg: f64, sigma_w: f64 },
}

impl MotionConfig {
    pub fn sigma_w(&self) -> f64 {
        match *self {
            MotionConfig::Ncv { sigma_w } | MotionConfig::Dwna { sigma_w } | MotionConfig::Ct { sigma_w, .. } => sigma_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub start: usize,
    #[serde(flatten)]
    pub motion: MotionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub birth: usize,
    /// Exclusive; defaults to the end of the run.
    #[serde(default)]
    pub death: Option<usize>,
    /// `[x, vx, y, vy]`.
    pub initial: [f64; 4],
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Toa,
    Doa,
    Radar,
    /// Communication-only node.
    Comm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub kind: NodeKind,
    #[serde(default)]
    pub position: [f64; 2],
    /// Meters for range, degrees for bearing; radar is `[bearing, range]`.
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default = "one")]
    pub p_d: f64,
    #[serde(default)]
    pub clutter_rate: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_ts")]
    pub ts: f64,
    pub steps: usize,
    pub area: AreaConfig,
    pub objects: Vec<ObjectConfig>,
    pub nodes: Vec<NodeConfig>,
    /// Undirected links between node indices.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

fn default_ts() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    pub models: Vec<MotionConfig>,
    /// Row-major, `jump[j][t] = P(mode j | previous mode t)`.
    pub jump: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleConfig {
    /// Defaults to the area centre at rest.
    #[serde(default)]
    pub init_mean: Option<[f64; 4]>,
    #[serde(default = "default_init_cov")]
    pub init_cov: [f64; 4],
    #[serde(default)]
    pub rho: RhoChoice,
}

fn default_init_cov() -> [f64; 4] {
    [1e8, 1e4, 1e8, 1e4]
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self { init_mean: None, init_cov: default_init_cov(), rho: RhoChoice::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthConfig {
    /// Explicit component positions `[x, y]`.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    /// Extra components evenly spaced along the area border.
    #[serde(default)]
    pub border: usize,
    /// PHD weight (CPHD) or existence probability (labeled trackers) per component.
    pub weight: f64,
    #[serde(default = "default_birth_cov")]
    pub cov: [f64; 4],
}

fn default_birth_cov() -> [f64; 4] {
    [1e6, 1e4, 1e6, 1e4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct MultiConfig {
    pub p_s: f64,
    pub n_max: usize,
    pub gamma_m: f64,
    pub gamma_t: f64,
    pub gamma_e: f64,
    pub max_components: usize,
    pub hypothesis_cap: usize,
    pub maps_per_hypothesis: usize,
    /// Hypotheses below this weight are dropped.
    pub min_weight: f64,
    pub label_components: usize,
}

impl Default for MultiConfig {
    fn default() -> Self {
        Self {
            p_s: 0.99,
            n_max: 20,
            gamma_m: 4.0,
            gamma_t: 1e-4,
            gamma_e: 0.5,
            max_components: 25,
            hypothesis_cap: 1000,
            maps_per_hypothesis: 100,
            min_weight: 1e-12,
            label_components: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OspaConfig {
    pub p: f64,
    pub c: f64,
}

impl Default for OspaConfig {
    fn default() -> Self {
        Self { p: 2.0, c: 600.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "one_usize")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub consensus_steps: usize,
    #[serde(default)]
    pub filter: FilterChoice,
    #[serde(default = "default_out")]
    pub out: String,
    pub scenario: ScenarioConfig,
    /// Filter motion model for the single-model and multi-object algorithms.
    pub motion: MotionConfig,
    #[serde(default)]
    pub modes: Option<ModesConfig>,
    #[serde(default)]
    pub single: SingleConfig,
    #[serde(default)]
    pub birth: Option<BirthConfig>,
    #[serde(default)]
    pub multi: MultiConfig,
    #[serde(default)]
    pub ospa: OspaConfig,
}

fn one_usize() -> usize {
    1
}

fn default_out() -> String {
    "out".into()
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub algorithm: Option<Algorithm>,
    pub consensus_steps: Option<usize>,
}

fn invalid(field: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { field: field.into(), message: msg.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let c: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let c: Self = serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// `.json` files are read as JSON, everything else as TOML.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(t) = o.trials {
            self.trials = t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(a) = o.algorithm {
            self.algorithm = a;
        }
        if let Some(l) = o.consensus_steps {
            self.consensus_steps = l;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        let sc = &self.scenario;
        if !(sc.ts > 0.0) {
            return Err(invalid("scenario.ts", "must be positive"));
        }
        if sc.steps == 0 {
            return Err(invalid("scenario.steps", "must be at least 1"));
        }
        if !(sc.area.x[1] > sc.area.x[0]) || !(sc.area.y[1] > sc.area.y[0]) {
            return Err(invalid("scenario.area", "bounds must be increasing"));
        }
        if sc.nodes.is_empty() {
            return Err(invalid("scenario.nodes", "at least one node is required"));
        }
        if !sc.nodes.iter().any(|n| n.kind != NodeKind::Comm) {
            return Err(invalid("scenario.nodes", "at least one sensor node is required"));
        }
        for (i, n) in sc.nodes.iter().enumerate() {
            let want = match n.kind {
                NodeKind::Toa | NodeKind::Doa => 1,
                NodeKind::Radar => 2,
                NodeKind::Comm => 0,
            };
            if n.sigma.len() != want || n.sigma.iter().any(|s| !(*s > 0.0)) {
                return Err(invalid(&format!("scenario.nodes[{i}].sigma"), format!("expected {want} positive value(s)")));
            }
            if !(0.0..=1.0).contains(&n.p_d) {
                return Err(invalid(&format!("scenario.nodes[{i}].p_d"), "must lie in [0, 1]"));
            }
            if !(n.clutter_rate >= 0.0) {
                return Err(invalid(&format!("scenario.nodes[{i}].clutter_rate"), "must be non-negative"));
            }
            if !self.algorithm.is_multi_object() && n.kind != NodeKind::Comm && n.clutter_rate > 0.0 {
                return Err(invalid(&format!("scenario.nodes[{i}].clutter_rate"), "single-object algorithms need clutter_rate = 0"));
            }
        }
        for (e, [a, b]) in sc.edges.iter().enumerate() {
            if *a >= sc.nodes.len() || *b >= sc.nodes.len() {
                return Err(invalid(&format!("scenario.edges[{e}]"), format!("node index out of range (have {} nodes)", sc.nodes.len())));
            }
        }
        for (i, o) in sc.objects.iter().enumerate() {
            if o.segments.is_empty() || o.segments[0].start > o.birth {
                return Err(invalid(&format!("scenario.objects[{i}].segments"), "first segment must start at or before birth"));
            }
            if o.segments.windows(2).any(|w| w[0].start > w[1].start) {
                return Err(invalid(&format!("scenario.objects[{i}].segments"), "segments must be sorted by start"));
            }
            if o.death.is_some_and(|d| d < o.birth) {
                return Err(invalid(&format!("scenario.objects[{i}].death"), "before birth"));
            }
        }
        if !self.algorithm.is_multi_object() {
            let ok = sc.objects.len() == 1 && sc.objects[0].birth == 0 && sc.objects[0].death.is_none_or(|d| d >= sc.steps);
            if !ok {
                return Err(invalid("scenario.objects", "single-object algorithms need exactly one object alive for the whole run"));
            }
        }
        if self.algorithm.is_multi_model() {
            let Some(m) = &self.modes else {
                return Err(invalid("modes", format!("required by {}", self.algorithm)));
            };
            let r = m.models.len();
            if r == 0 || m.jump.len() != r || m.jump.iter().any(|row| row.len() != r) {
                return Err(invalid("modes.jump", format!("must be {r}x{r}")));
            }
            for t in 0..r {
                let s: f64 = m.jump.iter().map(|row| row[t]).sum();
                if (s - 1.0).abs() > 1e-9 || m.jump.iter().any(|row| !(row[t] >= 0.0)) {
                    return Err(invalid("modes.jump", format!("column {t} is not a probability vector")));
                }
            }
        }
        if self.algorithm.is_multi_object() {
            let Some(b) = &self.birth else {
                return Err(invalid("birth", format!("required by {}", self.algorithm)));
            };
            if b.points.is_empty() && b.border == 0 {
                return Err(invalid("birth", "needs points or border components"));
            }
            if !(b.weight > 0.0) || (!matches!(self.algorithm, Algorithm::CgmCphd | Algorithm::GmCphd) && b.weight > 1.0) {
                return Err(invalid("birth.weight", "must be positive (and at most 1 for labeled trackers)"));
            }
            let m = &self.multi;
            if !(0.0..=1.0).contains(&m.p_s) {
                return Err(invalid("multi.p_s", "must lie in [0, 1]"));
            }
            if !(0.0..1.0).contains(&m.min_weight) {
                return Err(invalid("multi.min_weight", "must lie in [0, 1)"));
            }
            if m.n_max == 0 || m.max_components == 0 || m.hypothesis_cap == 0 || m.maps_per_hypothesis == 0 || m.label_components == 0 {
                return Err(invalid("multi", "caps must be at least 1"));
            }
        }
        if !(self.ospa.p >= 1.0) || !(self.ospa.c > 0.0) {
            return Err(invalid("ospa", "needs p >= 1 and c > 0"));
        }
        Ok(())
    }
}

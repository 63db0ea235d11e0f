//! TOML tool configuration.
//!
//! ```toml
//! version = 1
//! output_dir = "results"
//! formats = ["csv", "json"]
//!
//! [case]
//! elements = [8, 8, 8]
//! degree = 8
//! steps = 4
//! cg_iters_per_step = 3278
//!
//! [machines.xeon]
//! preset = "pleiades2"      # optional base, the keys below override it
//! latency_s = 60e-6
//!
//! [campaigns.strong]
//! kind = "strong"
//! machine = "xeon"          # a [machines] key or a preset name
//! ranks = [1, 2, 4, 8]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use semperf::gamma::{machine_preset, MachineProfile, PRESET_NAMES};
use semperf::harness::{fixed_size_reference, CampaignKind, CampaignSpec, Mode, ScalePoint};
use semperf::sem::{Boundary, CaseConfig, IterationMode, WorkUnitOptions};

pub const CONFIG_VERSION: u32 = 1;
/// Name under which the strong-scaling reference profile resolves.
pub const REFERENCE_MACHINE: &str = "pleiades2-fixed-size";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// A scalar applied to all three axes, or one value per axis.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum PerAxis {
    Same(usize),
    Each([usize; 3]),
}

impl PerAxis {
    pub fn expand(self) -> [usize; 3] {
        match self {
            PerAxis::Same(v) => [v; 3],
            PerAxis::Each(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub elements: Option<PerAxis>,
    pub degree: Option<PerAxis>,
    pub fields: Option<usize>,
    pub steps: Option<usize>,
    pub cg_iters_per_step: Option<usize>,
}

impl CaseSection {
    fn apply(&self, mut case: CaseConfig) -> CaseConfig {
        if let Some(e) = self.elements {
            case.elements = e.expand();
        }
        if let Some(n) = self.degree {
            case.degree = n.expand();
        }
        if let Some(v) = self.fields {
            case.fields = v;
        }
        if let Some(v) = self.steps {
            case.steps = v;
        }
        if let Some(v) = self.cg_iters_per_step {
            case.cg_iters_per_step = v;
        }
        case
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSection {
    pub preset: Option<String>,
    pub core_rate_mflops: Option<f64>,
    pub link_bandwidth_mbs: Option<f64>,
    pub latency_s: Option<f64>,
    pub cores_per_node: Option<usize>,
    pub link_sharing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryName {
    Dirichlet,
    Neumann,
    NeumannProjected,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkSection {
    #[serde(default = "dirichlet")]
    pub boundary: BoundaryName,
    #[serde(default)]
    pub lambda: f64,
    /// Iterate to this relative residual instead of a fixed budget.
    pub tolerance: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn dirichlet() -> BoundaryName {
    BoundaryName::Dirichlet
}

fn default_max_iterations() -> usize {
    10_000
}

impl WorkSection {
    fn options(&self) -> WorkUnitOptions {
        WorkUnitOptions {
            boundary: match self.boundary {
                BoundaryName::Dirichlet => Boundary::Dirichlet,
                BoundaryName::Neumann => Boundary::Neumann { project_mean: false },
                BoundaryName::NeumannProjected => Boundary::Neumann { project_mean: true },
            },
            lambda: self.lambda,
            mode: match self.tolerance {
                Some(tolerance) => IterationMode::ToTolerance {
                    tolerance,
                    max_iterations: self.max_iterations,
                },
                None => IterationMode::FixedBudget,
            },
            collect_solution: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[serde(alias = "sim")]
    Simulated,
    #[serde(alias = "exec")]
    Executed,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Simulated => Mode::Simulated,
            ModeName::Executed => Mode::Executed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub kind: CampaignKind,
    pub machine: String,
    pub mode: Option<ModeName>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub scale: Vec<ScalePoint>,
    #[serde(default)]
    pub degrees: Vec<usize>,
    pub budget_seconds: Option<f64>,
    pub jitter: Option<f64>,
    pub window_seconds: Option<f64>,
    #[serde(default)]
    pub case: CaseSection,
    pub work: Option<WorkSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default = "default_formats")]
    formats: Vec<Format>,
    #[serde(default)]
    case: CaseSection,
    #[serde(default)]
    machines: BTreeMap<String, MachineSection>,
    #[serde(default)]
    campaigns: BTreeMap<String, CampaignSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// A loaded and resolved configuration.
#[derive(Debug, Clone)]
pub struct ToolConfig {
    /// Relative to the config file's directory when not absolute.
    pub output_dir: PathBuf,
    pub formats: Vec<Format>,
    pub case: CaseConfig,
    pub machines: BTreeMap<String, MachineProfile>,
    pub campaigns: BTreeMap<String, CampaignSection>,
}

/// Built-in profile by name: the cluster presets and the strong-scaling
/// reference profile.
pub fn builtin_machine(name: &str) -> Option<MachineProfile> {
    if name == REFERENCE_MACHINE {
        return Some(fixed_size_reference().1);
    }
    machine_preset(name).ok()
}

pub fn builtin_names() -> Vec<&'static str> {
    let mut v = PRESET_NAMES.to_vec();
    v.push(REFERENCE_MACHINE);
    v
}

fn resolve_machine(name: &str, section: &MachineSection) -> Result<MachineProfile, ConfigError> {
    let mut m = match &section.preset {
        Some(p) => match builtin_machine(p) {
            Some(m) => MachineProfile { name: name.to_string(), ..m },
            None => return err(format!("machine {name:?}: unknown preset {p:?}")),
        },
        None => {
            let (Some(rate), Some(bw)) = (section.core_rate_mflops, section.link_bandwidth_mbs) else {
                return err(format!(
                    "machine {name:?}: needs a preset or both core_rate_mflops and link_bandwidth_mbs"
                ));
            };
            MachineProfile::new(name, rate, bw, section.latency_s.unwrap_or(0.0))
        }
    };
    if let Some(v) = section.core_rate_mflops {
        m.core_rate_mflops = v;
        // an explicit rate replaces any degree model of the preset
        m.degree_rate = None;
    }
    if let Some(v) = section.link_bandwidth_mbs {
        m.link_bandwidth_mbs = v;
    }
    if let Some(v) = section.latency_s {
        m.latency_s = v;
    }
    if let Some(v) = section.cores_per_node {
        m.cores_per_node = v;
    }
    if let Some(v) = section.link_sharing {
        m.link_sharing = v;
    }
    m.validate().map_err(|e| ConfigError(format!("machine {name:?}: {e}")))?;
    Ok(m)
}

impl ToolConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        if raw.version != CONFIG_VERSION {
            return err(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                raw.version
            ));
        }
        if raw.formats.is_empty() {
            return err("formats must list at least one of csv, json");
        }
        let mut machines = BTreeMap::new();
        for (name, section) in &raw.machines {
            machines.insert(name.clone(), resolve_machine(name, section)?);
        }
        let config = Self {
            output_dir: raw.output_dir,
            formats: raw.formats,
            case: raw.case.apply(CaseConfig::cube(1, 2)),
            machines,
            campaigns: raw.campaigns,
        };
        for (name, c) in &config.campaigns {
            if config.machine(&c.machine).is_none() {
                return err(format!("campaign {name:?}: unknown machine {:?}", c.machine));
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if config.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                config.output_dir = dir.join(&config.output_dir);
            }
        }
        Ok(config)
    }

    /// A `[machines]` entry, else a built-in profile.
    pub fn machine(&self, name: &str) -> Option<MachineProfile> {
        self.machines.get(name).cloned().or_else(|| builtin_machine(name))
    }

    pub fn campaign(&self, name: &str) -> Result<CampaignSpec, ConfigError> {
        let Some(c) = self.campaigns.get(name) else {
            let known: Vec<&str> = self.campaigns.keys().map(String::as_str).collect();
            return err(format!("no campaign {name:?}; defined: {}", known.join(", ")));
        };
        let machine = self
            .machine(&c.machine)
            .ok_or_else(|| ConfigError(format!("campaign {name:?}: unknown machine {:?}", c.machine)))?;
        let case = c.case.apply(self.case);
        let mut spec = CampaignSpec::new(name, c.kind, case, machine)
            .with_scale(c.scale.clone())
            .with_degrees(c.degrees.clone());
        if !c.ranks.is_empty() {
            spec = spec.with_ranks(c.ranks.clone());
        }
        if let Some(m) = c.mode {
            spec = spec.with_mode(m.into());
        }
        if let Some(s) = c.seed {
            spec = spec.with_seed(s);
        }
        if let Some(b) = c.budget_seconds {
            spec = spec.with_budget(b);
        }
        if let Some(j) = c.jitter {
            spec = spec.with_jitter(j);
        }
        if let Some(w) = c.window_seconds {
            spec.window_seconds = w;
        }
        if let Some(w) = &c.work {
            spec.work = w.options();
        }
        Ok(spec)
    }
}

/// Creates `dir` if needed and checks that files can be written there.
pub fn ensure_writable(dir: &Path) -> Result<(), ConfigError> {
    fs::create_dir_all(dir).map_err(|e| ConfigError(format!("cannot create output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".semperf-write-probe");
    fs::write(&probe, b"").map_err(|e| ConfigError(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

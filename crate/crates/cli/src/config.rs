//! Experiment configuration files.
//!
//! Relative paths inside a config (the catalog, `output_dir`) resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use poolopt::adaptation::LoadMonitor;
use poolopt::catalog::{load_catalog, CatalogFile, DEFAULT_BOUND_CAP, DEFAULT_BOUND_EPSILON};
use poolopt::simulator::SimOptions;
use poolopt::workload::{generate_stream, BatchDist};
use poolopt::{BoOptions, Catalog, QoSTarget, WorkloadSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "POOLOPT_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Bayesian,
    Random,
    HillClimb,
    Rsm,
    Exhaustive,
}

impl SearchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchKind::Bayesian => "bayesian",
            SearchKind::Random => "random",
            SearchKind::HillClimb => "hill_climb",
            SearchKind::Rsm => "rsm",
            SearchKind::Exhaustive => "exhaustive",
        }
    }
}

/// A catalog file path or the catalog itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CatalogSource {
    Path(PathBuf),
    Inline(CatalogFile),
}

/// The workload without its QoS target, which sits at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub arrival_rate: f64,
    #[serde(default)]
    pub batch_dist: Option<BatchDist>,
    #[serde(default)]
    pub batch_min: Option<u32>,
    #[serde(default)]
    pub batch_max: Option<u32>,
    #[serde(default)]
    pub num_queries: Option<usize>,
}

impl WorkloadConfig {
    pub fn to_spec(&self, qos: QoSTarget) -> WorkloadSpec {
        let mut spec = WorkloadSpec::new(self.arrival_rate, qos);
        if let Some(d) = self.batch_dist {
            spec.batch_dist = d;
        }
        if let Some(v) = self.batch_min {
            spec.batch_min = v;
        }
        if let Some(v) = self.batch_max {
            spec.batch_max = v;
        }
        if let Some(v) = self.num_queries {
            spec.num_queries = v;
        }
        spec
    }
}

/// Load multiplied by `factor` from query `at_query_index` onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleEvent {
    pub factor: f64,
    pub at_query_index: usize,
    #[serde(default)]
    pub monitor: MonitorConfig,
}

/// Load-change detector settings; the QoS quantile comes from `qos`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub window: usize,
    pub queue_growth_threshold: f64,
    pub qos_drop_threshold: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        let m = LoadMonitor::new(0.0);
        MonitorConfig {
            window: m.window,
            queue_growth_threshold: m.queue_growth_threshold,
            qos_drop_threshold: m.qos_drop_threshold,
        }
    }
}

impl MonitorConfig {
    pub fn monitor(&self, t_qos: f64) -> LoadMonitor {
        LoadMonitor {
            window: self.window,
            queue_growth_threshold: self.queue_growth_threshold,
            qos_drop_threshold: self.qos_drop_threshold,
            t_qos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub catalog: CatalogSource,
    pub workload: WorkloadConfig,
    pub qos: QoSTarget,
    pub search: SearchKind,
    /// Required for every search but `exhaustive`.
    #[serde(default)]
    pub budget: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scale_event: Option<ScaleEvent>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: BoOptions,
    #[serde(default)]
    pub simulation: SimOptions,
    /// Also compute the exhaustive landscape per seed, for ground-truth
    /// metrics.
    #[serde(default)]
    pub oracle: bool,
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn spec(&self) -> WorkloadSpec {
        self.config.workload.to_spec(self.config.qos)
    }

    /// Builds the catalog. Missing upper bounds are computed once, against
    /// the first seed's trace, so every seed searches the same grid.
    pub fn catalog(&self) -> anyhow::Result<Catalog> {
        let file = match &self.config.catalog {
            CatalogSource::Inline(f) => {
                f.validate()?;
                f.clone()
            }
            CatalogSource::Path(p) => {
                let path = self.base_dir.join(p);
                load_catalog(&path).with_context(|| format!("loading catalog {}", path.display()))?
            }
        };
        if file.upper_bounds.is_some() {
            return Ok(file.into_catalog()?);
        }
        let trace = generate_stream(&self.spec(), self.config.seeds[0])?;
        Ok(file.resolve(&trace, &self.config.qos, DEFAULT_BOUND_EPSILON, DEFAULT_BOUND_CAP)?)
    }

    /// `--output`, else the config's `output_dir`, else `$POOLOPT_OUTPUT_DIR/<name>`,
    /// else `runs/<name>`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = &self.config.output_dir {
            return self.base_dir.join(p);
        }
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.config.name),
            _ => PathBuf::from("runs").join(&self.config.name),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bail!("name: must be a non-empty plain file name, got {:?}", self.name);
        }
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            bail!("seeds: duplicate seed");
        }
        match (self.search, self.budget) {
            (SearchKind::Exhaustive, _) => {}
            (_, None) => bail!("budget: required for search {:?}", self.search.as_str()),
            (_, Some(0)) => bail!("budget: must be >= 1"),
            _ => {}
        }
        if let Some(ev) = self.scale_event {
            if self.search != SearchKind::Bayesian {
                bail!("scale_event: only supported with search \"bayesian\"");
            }
            if !(ev.factor > 0.0) || !ev.factor.is_finite() {
                bail!("scale_event.factor: must be > 0, got {}", ev.factor);
            }
            ev.monitor
                .monitor(self.qos.satisfaction_quantile)
                .validate()
                .context("scale_event.monitor")?;
            let n = self.workload.to_spec(self.qos).num_queries;
            if ev.at_query_index >= n {
                bail!("scale_event.at_query_index: must be below num_queries ({n})");
            }
        }
        self.qos.validate().context("qos")?;
        self.workload.to_spec(self.qos).validate().context("workload")?;
        Ok(())
    }
}

/// Sets `path` (dot-separated keys) in `root` to `value`, creating
/// intermediate objects. The value is read as JSON when it parses, as a bare
/// string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let Some((path, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not of the form key=value");
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {assignment:?} has an empty key");
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let Value::Object(map) = node else {
            bail!("override {path:?}: {key:?} is inside a non-object");
        };
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let Value::Object(map) = node else {
        bail!("override {path:?}: parent is not an object");
    };
    map.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses config JSON; errors name the offending field.
pub fn parse_config(value: Value) -> anyhow::Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String], seeds: Option<&[u64]>) -> anyhow::Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    if let Some(s) = seeds {
        value["seeds"] = serde_json::to_value(s)?;
    }
    let config = parse_config(value).with_context(|| format!("in {}", path.display()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

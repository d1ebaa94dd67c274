//! Run configuration: JSON file, dotted-key overrides, defaults and validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use entangle_core::cfn::CfnConfig;
use entangle_core::experiments::{FfnConfig, ForgettingConfig, TrainingConfig};
use entangle_core::optim::RmspropConfig;
use entangle_core::taskdata::PrimitiveId;
use entangle_core::vae::VaeConfig;

pub const DEFAULT_STEPS: u64 = 30_000;
pub const OUTPUT_DIR_ENV: &str = "ENTANGLE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TrainCfn,
    TrainCfnBaseline,
    TrainFfn,
    Forgetting,
    TrainVae,
    GradCheck,
    ParamsReport,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::TrainCfn,
        Experiment::TrainCfnBaseline,
        Experiment::TrainFfn,
        Experiment::Forgetting,
        Experiment::TrainVae,
        Experiment::GradCheck,
        Experiment::ParamsReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::TrainCfn => "train-cfn",
            Experiment::TrainCfnBaseline => "train-cfn-baseline",
            Experiment::TrainFfn => "train-ffn",
            Experiment::Forgetting => "forgetting",
            Experiment::TrainVae => "train-vae",
            Experiment::GradCheck => "grad-check",
            Experiment::ParamsReport => "params-report",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| anyhow!("unknown experiment `{s}`"))
    }
}

/// Everything a run needs. Every field has a default; see `entangle describe`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Must be non-negative; kept signed so `-1` is reported rather than misparsed.
    pub seed: i64,
    /// Training steps for the train-* experiments.
    pub steps: u64,
    /// Falls back to `$ENTANGLE_OUTPUT_DIR`, then `runs`.
    pub output_dir: Option<PathBuf>,
    /// Defaults to the warm-start schedule sized to `steps`.
    pub cfn: CfnConfig,
    pub ffn: FfnConfig,
    pub train: TrainingConfig,
    pub forgetting: ForgettingConfig,
    /// Tasks to retrain on, one after another, from the same pre-trained pair.
    pub retrain_tasks: Vec<PrimitiveId>,
    pub vae: VaeConfig,
    pub vae_opt: RmspropConfig,
}

impl RunConfig {
    /// Defaults for a run of `steps` steps.
    pub fn defaults(steps: u64) -> Self {
        RunConfig {
            experiment: Experiment::TrainCfn,
            seed: 0,
            steps,
            output_dir: None,
            cfn: CfnConfig::warm_start(steps),
            ffn: FfnConfig::default(),
            train: TrainingConfig::default(),
            forgetting: ForgettingConfig::default(),
            retrain_tasks: PrimitiveId::ALL.to_vec(),
            vae: VaeConfig {
                ratio: [1.0; 4],
                ..VaeConfig::default()
            },
            vae_opt: RmspropConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed < 0 {
            bail!("invalid configuration: seed: must be >= 0 (got {})", self.seed);
        }
        if self.steps == 0 {
            bail!("invalid configuration: steps: must be >= 1");
        }
        if self.retrain_tasks.is_empty() {
            bail!("invalid configuration: retrain_tasks: must name at least one task");
        }
        self.cfn.validate("cfn")?;
        self.train.validate("train")?;
        self.forgetting.validate("forgetting")?;
        self.vae.validate("vae")?;
        self.vae_opt.validate("vae_opt")?;
        if self.ffn.input_dim != self.cfn.input_dim || self.ffn.num_tasks != self.cfn.num_tasks {
            bail!("invalid configuration: ffn.input_dim: ffn and cfn must see the same inputs");
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed as u64
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::defaults(DEFAULT_STEPS)
    }
}

/// Sets `path` (dotted) inside `root`, creating objects on the way.
pub fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{path}`");
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| anyhow!("key `{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!()
}

/// A flag value is JSON when it parses as JSON, otherwise a plain string.
pub fn parse_flag_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Fills defaults under `user`, rejects unknown keys and validates.
pub fn from_json(user: Value) -> Result<RunConfig> {
    if !user.is_object() {
        bail!("configuration must be a JSON object");
    }
    let steps = user.get("steps").and_then(Value::as_u64).unwrap_or(DEFAULT_STEPS);
    let mut full = serde_json::to_value(RunConfig::defaults(steps))?;
    merge(&mut full, user);
    let cfg: RunConfig = serde_json::from_value(full).context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    from_json(read_json(path)?)
}

/// Loads `path` (or `{}`), applies `--key value` overrides in order, and validates.
pub fn load_with_overrides(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut user = match path {
        Some(p) => read_json(p)?,
        None => Value::Object(Map::new()),
    };
    if !user.is_object() {
        bail!("configuration must be a JSON object");
    }
    for (k, v) in overrides {
        set_dotted(&mut user, k, parse_flag_value(v))?;
    }
    from_json(user)
}

//! Plan files: TOML with a fixed set of dotted keys.
//!
//! ```toml
//! task.preset = "lb"            # required: bke_system1 | bke_system2 | lb | clb
//! task.system = "lb"            # label used in reports (default: preset)
//! scale = "desk"                # desk | full, selects size defaults
//! observers = ["scanning_ho", "cnn_io"]   # required, nonempty
//! seed = 7
//! data.train_backgrounds = 20000
//! data.val_per_class = 200
//! data.test_per_class = 200
//! hotelling.backgrounds = 0     # 0 = all training backgrounds
//! training.depth = 11           # or "select"
//! training.filters = 32
//! training.per_class = 80
//! training.minibatches = 100000
//! training.validation_period = 1000
//! training.learning_rate = 1e-4
//! training.beta1 = 0.9
//! training.beta2 = 0.999
//! training.epsilon = 1e-8
//! mcmc.iterations = 200000
//! mcmc.burn_in = 10000
//! evaluation.bootstrap = 1000
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use toml::Value;

use crate::error::{Error, Result};
use crate::neuralnet::{AdamHyper, TrainSchedule, ALLOWED_DEPTHS};
use crate::observers::McmcConfig;
use crate::rng::derive_seed;
use crate::task::{ObjectModel, TaskConfig, PRESET_NAMES};

const KNOWN_KEYS: &[&str] = &[
    "task.preset",
    "task.system",
    "scale",
    "observers",
    "seed",
    "data.train_backgrounds",
    "data.val_per_class",
    "data.test_per_class",
    "hotelling.backgrounds",
    "training.depth",
    "training.filters",
    "training.per_class",
    "training.minibatches",
    "training.validation_period",
    "training.learning_rate",
    "training.beta1",
    "training.beta2",
    "training.epsilon",
    "mcmc.iterations",
    "mcmc.burn_in",
    "evaluation.bootstrap",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObserverKind {
    AnalyticIo,
    ScanningHo,
    McmcIo,
    CnnIo,
}

impl ObserverKind {
    pub const ALL: [ObserverKind; 4] = [
        ObserverKind::AnalyticIo,
        ObserverKind::ScanningHo,
        ObserverKind::McmcIo,
        ObserverKind::CnnIo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObserverKind::AnalyticIo => "analytic_io",
            ObserverKind::ScanningHo => "scanning_ho",
            ObserverKind::McmcIo => "mcmc_io",
            ObserverKind::CnnIo => "cnn_io",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for ObserverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthChoice {
    Fixed(usize),
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSizes {
    pub train_backgrounds: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub task: TaskConfig,
    pub system: String,
    pub observers: Vec<ObserverKind>,
    pub seed: u64,
    pub sizes: DatasetSizes,
    /// Training backgrounds used for the Hotelling covariance; 0 means all.
    pub hotelling_backgrounds: usize,
    pub depth: DepthChoice,
    pub filters: usize,
    pub schedule: TrainSchedule,
    pub mcmc: McmcConfig,
    pub bootstrap: usize,
}

impl ExperimentPlan {
    /// Defaults for a preset at the given scale, before any overrides.
    pub fn defaults(preset: &str, scale: Scale, seed: u64) -> Result<Self> {
        let task = TaskConfig::preset(preset)?;
        let (train_backgrounds, minibatches, per_class, depth) = match (&task.object, scale) {
            (ObjectModel::None, Scale::Desk) => (1, 50_000, 80, 5),
            (ObjectModel::None, Scale::Full) => (1, 500_000, 80, 5),
            (ObjectModel::Lumpy(_), Scale::Desk) => (20_000, 100_000, 80, 11),
            (ObjectModel::Lumpy(_), Scale::Full) => (100_000, 500_000, 80, 11),
            (ObjectModel::Clb(_), Scale::Desk) => (5_000, 100_000, 20, 7),
            (ObjectModel::Clb(_), Scale::Full) => (400_000, 500_000, 20, 7),
        };
        let mut schedule = TrainSchedule::new(per_class, minibatches, derive_seed(seed, "training"));
        schedule.validation_period = 1000;
        Ok(Self {
            system: task.name.clone(),
            task,
            observers: Vec::new(),
            seed,
            sizes: DatasetSizes {
                train_backgrounds,
                val_per_class: 200,
                test_per_class: 200,
            },
            hotelling_backgrounds: 0,
            depth: DepthChoice::Fixed(depth),
            filters: 32,
            schedule,
            mcmc: McmcConfig::default(),
            bootstrap: crate::evaluation::DEFAULT_BOOTSTRAP,
        })
    }

    /// Replaces the master seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.schedule.seed = derive_seed(seed, "training");
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, reason: &str| Error::Config {
            key: key.into(),
            reason: reason.into(),
        };
        self.task.validate()?;
        if self.observers.is_empty() {
            return Err(cfg("observers", "at least one observer is required"));
        }
        if self.sizes.train_backgrounds == 0 {
            return Err(cfg("data.train_backgrounds", "must be positive"));
        }
        if self.sizes.val_per_class == 0 {
            return Err(cfg("data.val_per_class", "must be positive"));
        }
        if self.sizes.test_per_class == 0 {
            return Err(cfg("data.test_per_class", "must be positive"));
        }
        if let DepthChoice::Fixed(d) = self.depth {
            if !ALLOWED_DEPTHS.contains(&d) {
                return Err(cfg("training.depth", "must be 1, 3, 5, 7, 9, 11 or \"select\""));
            }
        }
        if self.filters == 0 {
            return Err(cfg("training.filters", "must be positive"));
        }
        self.schedule.validate().map_err(|e| cfg("training", &e.to_string()))?;
        self.mcmc.validate().map_err(|e| cfg("mcmc", &e.to_string()))?;
        if self.system.is_empty() || self.system.contains([',', '\n', '=']) {
            return Err(cfg("task.system", "must be nonempty without ',', '=' or newlines"));
        }
        Ok(())
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Keys(BTreeMap<String, Value>);

impl Keys {
    fn err(key: &str, reason: impl Into<String>) -> Error {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(Self::err(key, format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(Value::Integer(_)) => Err(Self::err(key, "must be non-negative")),
            Some(v) => Err(Self::err(key, format!("expected an integer, found {}", v.type_str()))),
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(Self::err(key, format!("expected a number, found {}", v.type_str()))),
        }
    }
}

pub fn parse_plan(text: &str) -> Result<ExperimentPlan> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
        key: "<file>".into(),
        reason: e.message().to_string(),
    })?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    if let Some(unknown) = flat.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Keys::err(unknown, "unknown key"));
    }
    let keys = Keys(flat);

    let preset = keys
        .string("task.preset")?
        .ok_or_else(|| Keys::err("task.preset", "required key missing"))?;
    if !PRESET_NAMES.contains(&preset.as_str()) {
        return Err(Keys::err(
            "task.preset",
            format!("unknown preset {preset:?}; expected one of {PRESET_NAMES:?}"),
        ));
    }
    let scale = match keys.string("scale")?.as_deref() {
        None | Some("desk") => Scale::Desk,
        Some("full") => Scale::Full,
        Some(other) => return Err(Keys::err("scale", format!("expected desk or full, got {other:?}"))),
    };
    let seed = keys.uint("seed")?.unwrap_or(0);
    let mut plan = ExperimentPlan::defaults(&preset, scale, seed)?;
    if let Some(s) = keys.string("task.system")? {
        plan.system = s;
    }

    match keys.0.get("observers") {
        None => return Err(Keys::err("observers", "required key missing")),
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let key = format!("observers[{i}]");
                let name = item
                    .as_str()
                    .ok_or_else(|| Keys::err(&key, "expected a string"))?;
                let kind = ObserverKind::parse(name).ok_or_else(|| {
                    Keys::err(&key, format!("unknown observer {name:?}"))
                })?;
                if !plan.observers.contains(&kind) {
                    plan.observers.push(kind);
                }
            }
        }
        Some(v) => return Err(Keys::err("observers", format!("expected an array, found {}", v.type_str()))),
    }

    let usize_key = |key: &str, slot: &mut usize| -> Result<()> {
        if let Some(v) = keys.uint(key)? {
            *slot = usize::try_from(v).map_err(|_| Keys::err(key, "too large"))?;
        }
        Ok(())
    };
    usize_key("data.train_backgrounds", &mut plan.sizes.train_backgrounds)?;
    usize_key("data.val_per_class", &mut plan.sizes.val_per_class)?;
    usize_key("data.test_per_class", &mut plan.sizes.test_per_class)?;
    usize_key("hotelling.backgrounds", &mut plan.hotelling_backgrounds)?;
    usize_key("training.filters", &mut plan.filters)?;
    usize_key("training.per_class", &mut plan.schedule.per_class)?;
    usize_key("evaluation.bootstrap", &mut plan.bootstrap)?;
    if let Some(v) = keys.uint("training.minibatches")? {
        plan.schedule.total_minibatches = v;
    }
    if let Some(v) = keys.uint("training.validation_period")? {
        plan.schedule.validation_period = v;
    }
    match keys.0.get("training.depth") {
        None => {}
        Some(Value::String(s)) if s == "select" => plan.depth = DepthChoice::Select,
        Some(Value::Integer(d)) if *d > 0 => plan.depth = DepthChoice::Fixed(*d as usize),
        Some(_) => return Err(Keys::err("training.depth", "expected a depth or \"select\"")),
    }
    let defaults = AdamHyper::default();
    plan.schedule.hyper = AdamHyper {
        learning_rate: keys.float("training.learning_rate")?.unwrap_or(defaults.learning_rate),
        beta1: keys.float("training.beta1")?.unwrap_or(defaults.beta1),
        beta2: keys.float("training.beta2")?.unwrap_or(defaults.beta2),
        epsilon: keys.float("training.epsilon")?.unwrap_or(defaults.epsilon),
    };
    if let Some(n) = keys.uint("mcmc.iterations")? {
        plan.mcmc = McmcConfig::with_iterations(n as usize);
    }
    if let Some(b) = keys.uint("mcmc.burn_in")? {
        plan.mcmc.burn_in = b as usize;
    }
    plan.validate()?;
    Ok(plan)
}

pub fn load_config(path: &Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    parse_plan(&text)
}

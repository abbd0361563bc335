//! Line-oriented `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::drift::ShiftSchedule;
use crate::error::{Error, Result};
use crate::homeostat::{Controller, LrPolicy, RealizedEffect, StepRule};
use crate::nn::DEFAULT_HIDDEN;

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "HOMEOSTAT_DATA_DIR";

/// Whether a run uses fixed swap rates or seasonal schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftModeKind {
    Constant,
    Seasonal,
}

/// The seasonal schedule families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScheduleId {
    /// Alternating calm and stormy seasons.
    A,
    /// Stepped ramp up and back down.
    B,
}

impl ScheduleId {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleId::A => "a",
            ScheduleId::B => "b",
        }
    }
}

/// One shift condition of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftSetting {
    Rate(f64),
    Schedule(ScheduleId),
}

impl ShiftSetting {
    /// File-name friendly label.
    pub fn label(&self) -> String {
        match self {
            ShiftSetting::Rate(r) => format!("rate_{}", super::metrics::fmt_float(*r)),
            ShiftSetting::Schedule(id) => format!("schedule_{}", id.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
    /// 0 keeps the whole split.
    pub train_subset: usize,
    pub val_subset: usize,
    pub epochs: u32,
    pub epoch_length: u64,
    pub eval_interval: u64,
    pub learners: Vec<Controller>,
    pub shift_mode: ShiftModeKind,
    pub shift_rates: Vec<f64>,
    pub schedules: Vec<ScheduleId>,
    pub storm_rate: f64,
    pub season_span: u32,
    pub ramp_rates: Vec<f64>,
    pub ramp_span: u32,
    pub hidden: Vec<usize>,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub delta: f64,
    pub step_rule: StepRule,
    pub store_capacity: usize,
    pub store_passes: usize,
    pub realized_effect: RealizedEffect,
    pub replicates: u32,
    pub seed: u64,
    /// 0 lets the worker pool pick.
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults with the given dataset directory.
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        let p = LrPolicy::default();
        ExperimentConfig {
            data_dir: data_dir.into(),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            val_images: "t10k-images-idx3-ubyte".into(),
            val_labels: "t10k-labels-idx1-ubyte".into(),
            train_subset: 5000,
            val_subset: 1000,
            epochs: 20,
            epoch_length: 5000,
            eval_interval: 1000,
            learners: Controller::ALL.to_vec(),
            shift_mode: ShiftModeKind::Constant,
            shift_rates: vec![0.0, 1.0, 5.0, 10.0, 50.0],
            schedules: vec![ScheduleId::A, ScheduleId::B],
            storm_rate: 50.0,
            season_span: 10,
            ramp_rates: vec![0.0, 5.0, 50.0, 5.0, 0.0],
            ramp_span: 8,
            hidden: DEFAULT_HIDDEN.to_vec(),
            lr_init: p.lr_init,
            lr_min: p.lr_min,
            lr_max: p.lr_max,
            delta: p.delta,
            step_rule: p.rule,
            store_capacity: 100,
            store_passes: 1,
            realized_effect: RealizedEffect::TrueLabel,
            replicates: 5,
            seed: 0,
            threads: 0,
            out_dir: "out".into(),
        }
    }

    pub fn policy(&self) -> LrPolicy {
        LrPolicy {
            lr_init: self.lr_init,
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            delta: self.delta,
            rule: self.step_rule,
        }
    }

    /// Resolves a dataset file against `data_dir`, falling back to a `.gz`
    /// sibling when the plain file is absent.
    pub fn resolve(&self, file: &Path) -> PathBuf {
        let p = if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.data_dir.join(file)
        };
        if !p.exists() {
            let mut gz = p.clone().into_os_string();
            gz.push(".gz");
            let gz = PathBuf::from(gz);
            if gz.exists() {
                return gz;
            }
        }
        p
    }

    /// The shift conditions this config runs, in output order.
    pub fn settings(&self) -> Vec<ShiftSetting> {
        match self.shift_mode {
            ShiftModeKind::Constant => self.shift_rates.iter().map(|&r| ShiftSetting::Rate(r)).collect(),
            ShiftModeKind::Seasonal => self.schedules.iter().map(|&s| ShiftSetting::Schedule(s)).collect(),
        }
    }

    pub fn schedule(&self, setting: ShiftSetting) -> Result<ShiftSchedule> {
        match setting {
            ShiftSetting::Rate(r) => ShiftSchedule::constant(r, self.epoch_length),
            ShiftSetting::Schedule(ScheduleId::A) => {
                ShiftSchedule::schedule_a(self.storm_rate, self.season_span, self.epochs, self.epoch_length)
            }
            ShiftSetting::Schedule(ScheduleId::B) => {
                ShiftSchedule::schedule_b(&self.ramp_rates, self.ramp_span, self.epoch_length)
            }
        }
    }

    /// Checks cross-field invariants. Does not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                line: 0,
                key: key.into(),
                message,
            })
        };
        if self.replicates == 0 {
            return bad("replicates", "must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.epoch_length == 0 {
            return bad("epoch_length", "must be at least 1".into());
        }
        if self.eval_interval == 0 || self.eval_interval > self.epoch_length {
            return bad(
                "eval_interval",
                format!("must be in 1..={} (epoch_length)", self.epoch_length),
            );
        }
        if self.learners.is_empty() {
            return bad("learners", "need at least one learner".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "need at least one nonzero hidden layer".into());
        }
        if self.store_passes == 0 {
            return bad("store_passes", "must be at least 1".into());
        }
        if self.season_span == 0 {
            return bad("season_span", "must be at least 1".into());
        }
        if self.ramp_span == 0 {
            return bad("ramp_span", "must be at least 1".into());
        }
        match self.shift_mode {
            ShiftModeKind::Constant if self.shift_rates.is_empty() => {
                return bad("shift_rates", "need at least one rate".into())
            }
            ShiftModeKind::Seasonal if self.schedules.is_empty() => {
                return bad("schedules", "need at least one schedule".into())
            }
            _ => {}
        }
        self.policy().validate()?;
        for s in self.settings() {
            self.schedule(s).map_err(|e| Error::Config {
                line: 0,
                key: match s {
                    ShiftSetting::Rate(_) => "shift_rates".into(),
                    ShiftSetting::Schedule(_) => "schedules".into(),
                },
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Renders every key, in the order [`parse_config`] documents them.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data_dir", self.data_dir.display().to_string());
        kv("train_images", self.train_images.display().to_string());
        kv("train_labels", self.train_labels.display().to_string());
        kv("val_images", self.val_images.display().to_string());
        kv("val_labels", self.val_labels.display().to_string());
        kv("train_subset", self.train_subset.to_string());
        kv("val_subset", self.val_subset.to_string());
        kv("epochs", self.epochs.to_string());
        kv("epoch_length", self.epoch_length.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("learners", join(self.learners.iter().map(|c| c.name().to_string())));
        kv(
            "shift_mode",
            match self.shift_mode {
                ShiftModeKind::Constant => "constant",
                ShiftModeKind::Seasonal => "seasonal",
            }
            .into(),
        );
        kv("shift_rates", join(self.shift_rates.iter().map(f64::to_string)));
        kv("schedules", join(self.schedules.iter().map(|s| s.name().to_string())));
        kv("storm_rate", self.storm_rate.to_string());
        kv("season_span", self.season_span.to_string());
        kv("ramp_rates", join(self.ramp_rates.iter().map(f64::to_string)));
        kv("ramp_span", self.ramp_span.to_string());
        kv("hidden", join(self.hidden.iter().map(usize::to_string)));
        kv("lr_init", self.lr_init.to_string());
        kv("lr_min", self.lr_min.to_string());
        kv("lr_max", self.lr_max.to_string());
        kv("delta", self.delta.to_string());
        kv(
            "step_rule",
            match self.step_rule {
                StepRule::Additive => "additive",
                StepRule::Multiplicative => "multiplicative",
            }
            .into(),
        );
        kv("store_capacity", self.store_capacity.to_string());
        kv("store_passes", self.store_passes.to_string());
        kv(
            "realized_effect",
            match self.realized_effect {
                RealizedEffect::TrueLabel => "true_label",
                RealizedEffect::PredictedLabel => "predicted_label",
            }
            .into(),
        );
        kv("replicates", self.replicates.to_string());
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(", ")
}

fn list<T>(v: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn number<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid {}", std::any::type_name::<T>()))
}

/// Parses a config document.
///
/// `data_dir` is required unless `HOMEOSTAT_DATA_DIR` is set. Every other
/// key is optional. Unknown keys, repeated keys and malformed values are
/// errors naming the line and key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_env(text, std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// [`parse_config`] with an explicit fallback for `data_dir`.
pub fn parse_config_with_env(text: &str, env_data_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::with_data_dir(env_data_dir.clone().unwrap_or_default());
    let mut seen: Vec<String> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                key: content.into(),
                message: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let err = |message: String| Error::Config {
            line,
            key: key.into(),
            message,
        };
        if seen.iter().any(|k| k == key) {
            return Err(err("key given twice".into()));
        }
        seen.push(key.to_string());
        set_key(&mut cfg, key, value).map_err(err)?;
    }
    if !seen.iter().any(|k| k == "data_dir") && env_data_dir.is_none() {
        return Err(Error::Config {
            line: 0,
            key: "data_dir".into(),
            message: format!("missing required key (or set {DATA_DIR_ENV})"),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_key(cfg: &mut ExperimentConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    match key {
        "data_dir" => cfg.data_dir = v.into(),
        "train_images" => cfg.train_images = v.into(),
        "train_labels" => cfg.train_labels = v.into(),
        "val_images" => cfg.val_images = v.into(),
        "val_labels" => cfg.val_labels = v.into(),
        "train_subset" => cfg.train_subset = number(v)?,
        "val_subset" => cfg.val_subset = number(v)?,
        "epochs" => cfg.epochs = number(v)?,
        "epoch_length" => cfg.epoch_length = number(v)?,
        "eval_interval" => cfg.eval_interval = number(v)?,
        "learners" => {
            cfg.learners = list(v, |s| Controller::parse(s).ok_or_else(|| format!("unknown learner `{s}`")))?
        }
        "shift_mode" => {
            cfg.shift_mode = match v {
                "constant" => ShiftModeKind::Constant,
                "seasonal" => ShiftModeKind::Seasonal,
                _ => return Err(format!("`{v}` is not `constant` or `seasonal`")),
            }
        }
        "shift_rates" => cfg.shift_rates = list(v, number)?,
        "schedules" => {
            cfg.schedules = list(v, |s| match s.to_ascii_lowercase().as_str() {
                "a" => Ok(ScheduleId::A),
                "b" => Ok(ScheduleId::B),
                _ => Err(format!("unknown schedule `{s}`")),
            })?
        }
        "storm_rate" => cfg.storm_rate = number(v)?,
        "season_span" => cfg.season_span = number(v)?,
        "ramp_rates" => cfg.ramp_rates = list(v, number)?,
        "ramp_span" => cfg.ramp_span = number(v)?,
        "hidden" => cfg.hidden = list(v, number)?,
        "lr_init" => cfg.lr_init = number(v)?,
        "lr_min" => cfg.lr_min = number(v)?,
        "lr_max" => cfg.lr_max = number(v)?,
        "delta" => cfg.delta = number(v)?,
        "step_rule" => {
            cfg.step_rule = match v {
                "additive" => StepRule::Additive,
                "multiplicative" => StepRule::Multiplicative,
                _ => return Err(format!("`{v}` is not `additive` or `multiplicative`")),
            }
        }
        "store_capacity" => cfg.store_capacity = number(v)?,
        "store_passes" => cfg.store_passes = number(v)?,
        "realized_effect" => {
            cfg.realized_effect = match v {
                "true_label" => RealizedEffect::TrueLabel,
                "predicted_label" => RealizedEffect::PredictedLabel,
                _ => return Err(format!("`{v}` is not `true_label` or `predicted_label`")),
            }
        }
        "replicates" => cfg.replicates = number(v)?,
        "seed" => cfg.seed = number(v)?,
        "threads" => cfg.threads = number(v)?,
        "out_dir" => cfg.out_dir = v.into(),
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

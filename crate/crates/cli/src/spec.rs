//! Experiment-spec files: flat `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::PathBuf;

use wassalign::data::{AugmentPolicy, FewShotBudget, SyntheticSpec};
use wassalign::nn::{Branch, NormKind};
use wassalign::training::{ExperimentConfig, Method, OptimizerKind, TrainConfig};
use wassalign::DType;

use crate::error::CliError;

/// Everything a command needs; every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub synthetic: SyntheticSpec,
    /// Directory written by `synth`; when absent the data are generated from
    /// the synthetic fields.
    pub data_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub budgets: Vec<FewShotBudget>,
    pub methods: Vec<Method>,
    pub baseline: Method,
    pub seeds: Vec<u64>,
    pub checkpoint: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub eval_branch: Branch,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            synthetic: SyntheticSpec::default(),
            data_dir: None,
            train: TrainConfig::default(),
            budgets: vec![FewShotBudget::count(32)],
            methods: Method::ALL.to_vec(),
            baseline: Method::TargetOnly,
            seeds: vec![1, 2, 3, 4, 5],
            checkpoint: None,
            eval_data: None,
            eval_branch: Branch::Target,
        }
    }
}

fn list<T>(value: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn e<T>(r: wassalign::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse '{v}'"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".to_string(), |p| p.display().to_string())
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut spec = ExperimentSpec::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Spec(format!("spec line {}: {msg}", no + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            spec.set(key, value).map_err(|m| err(format!("{key}: {m}")))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let s = &mut self.synthetic;
        let t = &mut self.train;
        match key {
            "classes" => s.classes = num(v)?,
            "per_class" => s.per_class = num(v)?,
            "channels" => s.channels = num(v)?,
            "size" => s.size = num(v)?,
            "latent_dim" => s.latent_dim = num(v)?,
            "separation" => s.separation = num(v)?,
            "jitter" => s.jitter = num(v)?,
            "a_gain" => s.a_gain = num(v)?,
            "b_gain_min" => s.b_gain_min = num(v)?,
            "b_gain_max" => s.b_gain_max = num(v)?,
            "b_speckle" => s.b_speckle = num(v)?,
            "noise" => s.noise = num(v)?,
            "data_seed" => s.seed = num(v)?,
            "data_dir" => self.data_dir = path(v),
            "alpha" => t.alpha = num(v)?,
            "cond_weight" => t.cond_weight = num(v)?,
            "projections" => t.projections = num(v)?,
            "temperature" => t.temperature = num(v)?,
            "supcon_weight" => t.supcon_weight = num(v)?,
            "augment" => t.augment = e(AugmentPolicy::parse(v))?,
            "lr" => t.lr = num(v)?,
            "optimizer" => t.optimizer = e(OptimizerKind::parse(v))?,
            "momentum" => t.momentum = num(v)?,
            "batch_source" => t.batch_source = num(v)?,
            "batch_target" => t.batch_target = num(v)?,
            "batch_unlabeled" => t.batch_unlabeled = num(v)?,
            "pretrain_epochs" => t.pretrain_epochs = num(v)?,
            "transfer_epochs" => t.transfer_epochs = num(v)?,
            "confidence" => t.confidence = num(v)?,
            "normalize_target_ce" => t.normalize_target_ce = boolean(v)?,
            "norm" => t.norm = e(NormKind::parse(v))?,
            "embed_dim" => t.embed_dim = num(v)?,
            "dtype" => t.dtype = e(DType::parse(v))?,
            "tied_init" => t.tied_init = boolean(v)?,
            "transfer_from_source" => t.transfer_from_source = boolean(v)?,
            "seed" => t.seed = num(v)?,
            "budget" => self.budgets = list(v, |b| FewShotBudget::parse(b).map_err(|e| e.to_string()))?,
            "methods" => self.methods = list(v, |m| Method::parse(m).map_err(|e| e.to_string()))?,
            "baseline" => {
                self.baseline = Method::parse(v).map_err(|e| e.to_string())?;
                if self.baseline == Method::Transfer {
                    return Err("baseline must be target-only or finetune".into());
                }
            }
            "seeds" => self.seeds = list(v, num)?,
            "checkpoint" => self.checkpoint = path(v),
            "eval_data" => self.eval_data = path(v),
            "eval_branch" => self.eval_branch = Branch::parse(v).map_err(|e| e.to_string())?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synthetic.validate().map_err(CliError::from)?;
        self.train.validate().map_err(CliError::from)?;
        self.experiment().validate().map_err(CliError::from)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            synthetic: self.synthetic.clone(),
            train: self.train.clone(),
            budgets: self.budgets.clone(),
            methods: self.methods.clone(),
        }
    }

    /// Every key with its value, defaults included; parses back to `self`.
    pub fn resolved_text(&self) -> String {
        let s = &self.synthetic;
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("data_dir", show_path(&self.data_dir));
        kv("classes", s.classes.to_string());
        kv("per_class", s.per_class.to_string());
        kv("channels", s.channels.to_string());
        kv("size", s.size.to_string());
        kv("latent_dim", s.latent_dim.to_string());
        kv("separation", format!("{:?}", s.separation));
        kv("jitter", format!("{:?}", s.jitter));
        kv("a_gain", format!("{:?}", s.a_gain));
        kv("b_gain_min", format!("{:?}", s.b_gain_min));
        kv("b_gain_max", format!("{:?}", s.b_gain_max));
        kv("b_speckle", format!("{:?}", s.b_speckle));
        kv("noise", format!("{:?}", s.noise));
        kv("data_seed", s.seed.to_string());
        kv("alpha", format!("{:?}", t.alpha));
        kv("cond_weight", format!("{:?}", t.cond_weight));
        kv("projections", t.projections.to_string());
        kv("temperature", format!("{:?}", t.temperature));
        kv("supcon_weight", format!("{:?}", t.supcon_weight));
        kv("augment", t.augment.to_string());
        kv("lr", format!("{:?}", t.lr));
        kv("optimizer", t.optimizer.to_string());
        kv("momentum", format!("{:?}", t.momentum));
        kv("batch_source", t.batch_source.to_string());
        kv("batch_target", t.batch_target.to_string());
        kv("batch_unlabeled", t.batch_unlabeled.to_string());
        kv("pretrain_epochs", t.pretrain_epochs.to_string());
        kv("transfer_epochs", t.transfer_epochs.to_string());
        kv("confidence", format!("{:?}", t.confidence));
        kv("normalize_target_ce", t.normalize_target_ce.to_string());
        kv("norm", t.norm.to_string());
        kv("embed_dim", t.embed_dim.to_string());
        kv("dtype", t.dtype.to_string());
        kv("tied_init", t.tied_init.to_string());
        kv("transfer_from_source", t.transfer_from_source.to_string());
        kv("seed", t.seed.to_string());
        kv("budget", join(&self.budgets));
        kv("methods", join(&self.methods));
        kv("baseline", self.baseline.to_string());
        kv("seeds", join(&self.seeds));
        kv("checkpoint", show_path(&self.checkpoint));
        kv("eval_data", show_path(&self.eval_data));
        kv("eval_branch", self.eval_branch.as_str().to_string());
        out
    }
}

//! End-to-end runs of the three methods on paired synthetic data, and seed
//! sweeps over them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::loops::{baseline_finetune, baseline_target_only, pretrain_source, train_transfer, Method, TargetData};
use super::metrics::MetricsRecord;
use super::{derive_seed, streams};
use crate::data::{generate_synthetic, stratified_split, subsample_labeled, FewShotBudget, Splits, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::{Branch, EncoderConfig, YNetwork};
use crate::parallel;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub train: TrainConfig,
    pub budgets: Vec<FewShotBudget>,
    pub methods: Vec<Method>,
}

impl ExperimentConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        let s = &self.synthetic;
        let mut cfg = EncoderConfig::desk_scale(s.channels, s.size, self.train.norm);
        cfg.embed_dim = self.train.embed_dim;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.train.validate()?;
        self.encoder_config().validate()?;
        if self.budgets.is_empty() || self.methods.is_empty() {
            return Err(Error::invalid("experiment needs at least one budget and one method"));
        }
        Ok(())
    }
}

/// Source (modality A) and target (modality B) splits.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub source: Splits,
    pub target: Splits,
}

impl ExperimentData {
    /// Generates and splits the paired data; the split seed is the data seed.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let (a, b) = generate_synthetic(spec)?;
        Ok(ExperimentData {
            source: stratified_split(&a, spec.seed)?,
            target: stratified_split(&b, spec.seed)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub budget: String,
    pub labeled: usize,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Source-branch test accuracy after pretraining, when it ran.
    pub source_test_accuracy: Option<f64>,
    pub pretrain_records: Vec<MetricsRecord>,
    pub methods: Vec<MethodResult>,
}

impl SeedResult {
    pub fn accuracy(&self, method: Method, budget: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method && m.budget == budget)
            .map(|m| m.test_accuracy)
    }

    fn records_mut(&mut self) -> impl Iterator<Item = &mut MetricsRecord> {
        self.pretrain_records
            .iter_mut()
            .chain(self.methods.iter_mut().flat_map(|m| m.records.iter_mut()))
    }
}

/// Pretrains once (when any method needs it), then runs every method at every
/// budget from that starting point. `seed` drives initialization, batching
/// and the few-shot draw; the data are fixed by the synthetic spec.
pub fn run_experiment(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<SeedResult> {
    cfg.validate()?;
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let enc = cfg.encoder_config();
    let k = cfg.synthetic.classes;

    let mut pretrained = None;
    let mut pretrain_records = Vec::new();
    let mut source_test_accuracy = None;
    if cfg.methods.iter().any(|m| m.needs_pretraining()) {
        let mut net = YNetwork::init(enc.clone(), k, train.dtype, seed, train.tied_init)?;
        let out = pretrain_source(&mut net, &data.source.train, Some(&data.source.val), &train)?;
        source_test_accuracy = Some(evaluate(&mut net, &data.source.test, Branch::Source)?.accuracy);
        pretrain_records = out.records;
        pretrained = Some(net);
    }

    let mut methods = Vec::new();
    for budget in &cfg.budgets {
        let few = subsample_labeled(&data.target.train, *budget, derive_seed(seed, streams::BUDGET, 0))?;
        let target = TargetData {
            labeled: &few.labeled,
            unlabeled: few.unlabeled.as_ref(),
            val: Some(&data.target.val),
        };
        for &method in &cfg.methods {
            let (mut net, out) = match method {
                Method::Transfer => {
                    let mut net = pretrained.clone().expect("pretrained above");
                    let out = train_transfer(&mut net, &data.source.train, &target, &train)?;
                    (net, out)
                }
                Method::Finetune => {
                    let mut net = pretrained.clone().expect("pretrained above");
                    let out = baseline_finetune(&mut net, &target, &train)?;
                    (net, out)
                }
                Method::TargetOnly => {
                    let mut net = YNetwork::init(enc.clone(), k, train.dtype, seed, train.tied_init)?;
                    let out = baseline_target_only(&mut net, &target, &train)?;
                    (net, out)
                }
            };
            let e = evaluate(&mut net, &data.target.test, Branch::Target)?;
            methods.push(MethodResult {
                method,
                budget: budget.to_string(),
                labeled: few.labeled.len(),
                test_accuracy: e.accuracy,
                per_class_accuracy: e.per_class_accuracy,
                records: out.records,
            });
        }
    }
    Ok(SeedResult {
        seed,
        source_test_accuracy,
        pretrain_records,
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub budget: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub standard_error: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub per_seed: Vec<SeedResult>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepReport {
    pub fn find(&self, method: Method, budget: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method.as_str() && a.budget == budget && a.metric == metric)
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Test accuracy and per-class accuracies per (method, budget) over seeds.
pub fn aggregate(per_seed: &[SeedResult]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    let Some(first) = per_seed.first() else { return out };
    let mut push = |m: &MethodResult, metric: String, values: Vec<f64>| {
        let (mean, se) = mean_and_se(&values);
        out.push(Aggregate {
            method: m.method.as_str().to_string(),
            budget: m.budget.clone(),
            metric,
            mean,
            standard_error: se,
            n: values.len(),
            values,
        });
    };
    for (i, m) in first.methods.iter().enumerate() {
        push(m, "test_accuracy".into(), per_seed.iter().map(|s| s.methods[i].test_accuracy).collect());
        for c in 0..m.per_class_accuracy.len() {
            push(
                m,
                format!("class_{c}_accuracy"),
                per_seed.iter().map(|s| s.methods[i].per_class_accuracy[c]).collect(),
            );
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOptions {
    /// Writes `seed-<s>/result.json`, `seed-<s>/metrics.jsonl` and
    /// `aggregate.json` here.
    pub out_dir: Option<PathBuf>,
    /// Record wall-clock seconds as 0 so outputs are byte-reproducible.
    pub zero_timings: bool,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn persist_seed(dir: &Path, result: &SeedResult) -> Result<()> {
    let seed_dir = dir.join(format!("seed-{}", result.seed));
    let json = serde_json::to_string_pretty(result).map_err(|e| Error::invalid(e.to_string()))?;
    write(&seed_dir.join("result.json"), &json)?;
    let mut lines = String::new();
    for r in &result.pretrain_records {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    }
    for m in &result.methods {
        for r in &m.records {
            lines.push_str(&r.to_json_line());
            lines.push('\n');
        }
    }
    write(&seed_dir.join("metrics.jsonl"), &lines)
}

/// Runs the experiment once per seed (seeds in parallel when enabled) and
/// aggregates. Every successful seed is persisted before a failure aborts the
/// aggregate.
pub fn run_seed_sweep(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    seeds: &[u64],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if seeds.len() < 2 {
        return Err(Error::invalid("a seed sweep needs at least 2 seeds"));
    }
    cfg.validate()?;
    let results = parallel::map_indexed(seeds.len(), |i| run_experiment(cfg, data, seeds[i]));
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut failure = None;
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(mut r) => {
                if opts.zero_timings {
                    r.records_mut().for_each(|rec| rec.seconds = 0.0);
                }
                if let Some(dir) = &opts.out_dir {
                    persist_seed(dir, &r)?;
                }
                per_seed.push(r);
            }
            Err(e) => {
                if let Some(dir) = &opts.out_dir {
                    write(&dir.join(format!("seed-{seed}")).join("error.txt"), &format!("{e}\n"))?;
                }
                if failure.is_none() {
                    failure = Some((*seed, e));
                }
            }
        }
    }
    if let Some((seed, e)) = failure {
        return Err(match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("seed {seed}: {msg}")),
            Error::Io { context, source } => Error::Io {
                context: format!("seed {seed}: {context}"),
                source,
            },
            other => Error::invalid(format!("seed {seed} failed: {other}")),
        });
    }
    let report = SweepReport {
        aggregates: aggregate(&per_seed),
        per_seed,
    };
    if let Some(dir) = &opts.out_dir {
        let json = serde_json::to_string_pretty(&report.aggregates).map_err(|e| Error::invalid(e.to_string()))?;
        write(&dir.join("aggregate.json"), &json)?;
    }
    Ok(report)
}

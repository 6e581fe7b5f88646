use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wassalign::autodiff::Tape;
use wassalign::data::container::read_container;
use wassalign::data::{
    read_dataset_dir, stratified_split, generate_synthetic, subsample_labeled, write_dataset_dir, Dataset, Modality,
    Split, Splits,
};
use wassalign::losses::{sample_projections, swd_distance};
use wassalign::nn::{load_checkpoint, save_checkpoint, Branch, YNetwork};
use wassalign::training::{
    baseline_finetune, baseline_target_only, derive_seed, evaluate, pretrain_source, run_seed_sweep, train_transfer,
    streams, ExperimentData, Method, MetricsRecord, SweepOptions, TargetData, TrainOutcome,
};
use wassalign::DType;

use crate::error::{io_err, CliError};
use crate::spec::ExperimentSpec;

type Result<T> = std::result::Result<T, CliError>;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
    pub deterministic: bool,
}

pub fn load_spec(opts: &Options) -> Result<ExperimentSpec> {
    let mut spec = match &opts.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(format!("reading spec {}", p.display()), e))?;
            ExperimentSpec::parse(&text)?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = opts.seed {
        spec.train.seed = seed;
    }
    Ok(spec)
}

fn out_dir(opts: &Options) -> Result<&Path> {
    opts.out
        .as_deref()
        .ok_or_else(|| CliError::Spec("this command needs --out PATH".into()))
}

/// Creates `dir`, refusing to touch a non-empty one unless forced (in which
/// case it is cleared first).
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| io_err(format!("reading {}", dir.display()), e))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                return Err(CliError::Io(format!(
                    "output directory {} is not empty (use --force to overwrite)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| io_err(format!("clearing {}", dir.display()), e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(format!("writing {}", path.display()), e))
}

fn split_dir(root: &Path, modality: Modality, split: Split) -> PathBuf {
    root.join(modality.as_str()).join(split.as_str())
}

fn read_splits(root: &Path, modality: Modality) -> Result<Splits> {
    let read = |split: Split| -> Result<Dataset> {
        let (ds, manifest) = read_dataset_dir(split_dir(root, modality, split))?;
        if manifest.modality != modality || manifest.split != split {
            return Err(CliError::Spec(format!(
                "{}: manifest says modality {} split {}",
                split_dir(root, modality, split).display(),
                manifest.modality,
                manifest.split
            )));
        }
        Ok(ds)
    };
    Ok(Splits {
        train: read(Split::Train)?,
        val: read(Split::Val)?,
        test: read(Split::Test)?,
    })
}

/// Target splits only; the source modality is never read.
fn load_target(spec: &ExperimentSpec) -> Result<Splits> {
    match &spec.data_dir {
        Some(root) => read_splits(root, Modality::B),
        None => {
            let (_, b) = generate_synthetic(&spec.synthetic)?;
            Ok(stratified_split(&b, spec.synthetic.seed)?)
        }
    }
}

fn load_data(spec: &ExperimentSpec) -> Result<ExperimentData> {
    match &spec.data_dir {
        Some(root) => Ok(ExperimentData {
            source: read_splits(root, Modality::A)?,
            target: read_splits(root, Modality::B)?,
        }),
        None => Ok(ExperimentData::synthetic(&spec.synthetic)?),
    }
}

fn records_text(records: &[MetricsRecord], zero_timings: bool) -> String {
    let mut out = String::new();
    for r in records {
        let mut r = r.clone();
        if zero_timings {
            r.seconds = 0.0;
        }
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

fn test_record(phase: &str, epoch: usize, net: &mut YNetwork, ds: &Dataset, branch: Branch) -> Result<MetricsRecord> {
    let e = evaluate(net, ds, branch)?;
    let mut r = MetricsRecord::new(phase, epoch, "test");
    r.accuracy = Some(e.accuracy);
    r.per_class_accuracy = e.per_class_accuracy;
    Ok(r)
}

struct Run<'a> {
    dir: &'a Path,
    spec: &'a ExperimentSpec,
    derived: Vec<String>,
    deterministic: bool,
}

impl Run<'_> {
    fn finish(&self, net: &YNetwork, mut outcome: TrainOutcome, test: MetricsRecord) -> Result<String> {
        outcome.records.push(test.clone());
        write_file(&self.dir.join("metrics.jsonl"), &records_text(&outcome.records, self.deterministic))?;
        save_checkpoint(net, self.dir.join("checkpoint.tnsr"))?;
        let mut text = self.spec.resolved_text();
        if !self.derived.is_empty() {
            text.push_str("# derived\n");
            for d in &self.derived {
                let _ = writeln!(text, "# {d}");
            }
        }
        write_file(&self.dir.join("resolved_spec.txt"), &text)?;
        Ok(format!(
            "{} test accuracy {:.4}\nrun directory {}\n",
            test.phase,
            test.accuracy.unwrap_or(f64::NAN),
            self.dir.display()
        ))
    }
}

pub fn synth(opts: &Options) -> Result<String> {
    let mut spec = load_spec(opts)?;
    if let Some(seed) = opts.seed {
        spec.synthetic.seed = seed;
    }
    let dir = out_dir(opts)?;
    spec.synthetic.validate()?;
    prepare_out(dir, opts.force)?;
    let (a, b) = generate_synthetic(&spec.synthetic)?;
    let hash = spec.synthetic.hash();
    for ds in [a, b] {
        let splits = stratified_split(&ds, spec.synthetic.seed)?;
        for part in [&splits.train, &splits.val, &splits.test] {
            write_dataset_dir(split_dir(dir, part.modality, part.split), part, &hash)?;
        }
    }
    write_file(&dir.join("synthetic_spec.txt"), &spec.synthetic.canonical_text())?;
    Ok(format!("spec_hash {hash}\n"))
}

fn check_net(net: &YNetwork, spec: &ExperimentSpec, path: &Path) -> Result<()> {
    let want = spec.experiment().encoder_config();
    if net.config != want || (spec.data_dir.is_none() && net.classes != spec.synthetic.classes) {
        return Err(CliError::Spec(format!(
            "checkpoint {} does not match the spec's network (norm {}, embed_dim {}, {} classes)",
            path.display(),
            want.norm,
            want.embed_dim,
            spec.synthetic.classes
        )));
    }
    Ok(())
}

fn load_net(spec: &ExperimentSpec, what: &str) -> Result<(YNetwork, PathBuf)> {
    let path = spec
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Spec(format!("{what} needs 'checkpoint = PATH' pointing at a pretraining checkpoint")))?;
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint not found: expected {}", path.display())));
    }
    let net = load_checkpoint(&path)?;
    check_net(&net, spec, &path)?;
    Ok((net, path))
}

/// Same few-shot draw as a sweep uses for this seed.
fn budget_seed(seed: u64) -> u64 {
    derive_seed(seed, streams::BUDGET, 0)
}

fn one_budget(spec: &ExperimentSpec) -> Result<wassalign::data::FewShotBudget> {
    match spec.budgets.as_slice() {
        [b] => Ok(*b),
        _ => Err(CliError::Spec("this command takes a single budget".into())),
    }
}

pub fn pretrain(opts: &Options) -> Result<String> {
    let spec = load_spec(opts)?;
    let dir = out_dir(opts)?;
    prepare_out(dir, opts.force)?;
    let data = load_data(&spec)?;
    let t = &spec.train;
    let enc = spec.experiment().encoder_config();
    let mut net = YNetwork::init(enc, data.source.train.classes(), t.dtype, t.seed, t.tied_init)?;
    let outcome = pretrain_source(&mut net, &data.source.train, Some(&data.source.val), t)?;
    let test = test_record("pretrain", t.pretrain_epochs, &mut net, &data.source.test, Branch::Source)?;
    Run {
        dir,
        spec: &spec,
        derived: Vec::new(),
        deterministic: opts.deterministic,
    }
    .finish(&net, outcome, test)
}

pub fn transfer(opts: &Options) -> Result<String> {
    let spec = load_spec(opts)?;
    let dir = out_dir(opts)?;
    let budget = one_budget(&spec)?;
    let (mut net, ckpt) = load_net(&spec, "transfer")?;
    prepare_out(dir, opts.force)?;
    let data = load_data(&spec)?;
    let few = subsample_labeled(&data.target.train, budget, budget_seed(spec.train.seed))?;
    let target = TargetData {
        labeled: &few.labeled,
        unlabeled: few.unlabeled.as_ref(),
        val: Some(&data.target.val),
    };
    let outcome = train_transfer(&mut net, &data.source.train, &target, &spec.train)?;
    let test = test_record("transfer", spec.train.transfer_epochs, &mut net, &data.target.test, Branch::Target)?;
    Run {
        dir,
        spec: &spec,
        derived: vec![
            format!("labeled_target_count = {}", few.labeled.len()),
            format!("unlabeled_target_count = {}", few.unlabeled_indices.len()),
            format!("pretrained_from = {}", ckpt.display()),
        ],
        deterministic: opts.deterministic,
    }
    .finish(&net, outcome, test)
}

pub fn baseline(opts: &Options) -> Result<String> {
    let spec = load_spec(opts)?;
    let dir = out_dir(opts)?;
    let budget = one_budget(&spec)?;
    let t = &spec.train;
    let mut derived = Vec::new();
    let mut net = match spec.baseline {
        Method::Finetune => {
            let (net, ckpt) = load_net(&spec, "the finetune baseline")?;
            derived.push(format!("pretrained_from = {}", ckpt.display()));
            net
        }
        _ => {
            derived.push("source data: unused".to_string());
            derived.push("checkpoint: unused".to_string());
            YNetwork::init(spec.experiment().encoder_config(), spec_classes(&spec)?, t.dtype, t.seed, t.tied_init)?
        }
    };
    prepare_out(dir, opts.force)?;
    let data = load_target(&spec)?;
    let few = subsample_labeled(&data.train, budget, budget_seed(t.seed))?;
    derived.insert(0, format!("labeled_target_count = {}", few.labeled.len()));
    let target = TargetData {
        labeled: &few.labeled,
        unlabeled: few.unlabeled.as_ref(),
        val: Some(&data.val),
    };
    let outcome = match spec.baseline {
        Method::Finetune => baseline_finetune(&mut net, &target, t)?,
        _ => baseline_target_only(&mut net, &target, t)?,
    };
    let test = test_record(spec.baseline.as_str(), t.transfer_epochs, &mut net, &data.test, Branch::Target)?;
    Run {
        dir,
        spec: &spec,
        derived,
        deterministic: opts.deterministic,
    }
    .finish(&net, outcome, test)
}

fn spec_classes(spec: &ExperimentSpec) -> Result<usize> {
    match &spec.data_dir {
        Some(root) => Ok(read_dataset_dir(split_dir(root, Modality::B, Split::Train))?.0.classes()),
        None => Ok(spec.synthetic.classes),
    }
}

pub fn eval(opts: &Options) -> Result<String> {
    let spec = load_spec(opts)?;
    let path = spec
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Spec("eval needs 'checkpoint = PATH'".into()))?;
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint not found: expected {}", path.display())));
    }
    let data_dir = spec
        .eval_data
        .clone()
        .ok_or_else(|| CliError::Spec("eval needs 'eval_data = DATASET_DIR'".into()))?;
    let mut net = load_checkpoint(&path)?;
    let (ds, _) = read_dataset_dir(&data_dir)?;
    let e = evaluate(&mut net, &ds, spec.eval_branch)?;
    let json = serde_json::to_string_pretty(&e).map_err(|e| CliError::Spec(e.to_string()))?;
    if let Some(dir) = &opts.out {
        prepare_out(dir, opts.force)?;
        write_file(&dir.join("eval.json"), &json)?;
    }
    Ok(json + "\n")
}

fn read_matrix(path: &Path) -> Result<wassalign::Tensor> {
    let entries = read_container(path)?;
    let [entry] = entries.as_slice() else {
        return Err(CliError::Spec(format!(
            "{} holds {} tensors; expected exactly one [M, d] tensor",
            path.display(),
            entries.len()
        )));
    };
    let t = entry.to_tensor()?;
    if t.ndim() != 2 {
        return Err(CliError::Spec(format!(
            "{}: expected a 2-D [M, d] tensor, got shape {:?}",
            path.display(),
            t.shape()
        )));
    }
    Ok(t.to_dtype(DType::F64))
}

pub fn swd(a: &Path, b: &Path, projections: usize, opts: &Options) -> Result<String> {
    let (ta, tb) = (read_matrix(a)?, read_matrix(b)?);
    if ta.shape() != tb.shape() {
        return Err(CliError::Spec(format!(
            "shape mismatch: {:?} vs {:?} (both sets need equal M and d)",
            ta.shape(),
            tb.shape()
        )));
    }
    let proj = sample_projections(projections, ta.shape()[1], opts.seed.unwrap_or(0))?;
    let mut tape = Tape::new();
    let x = tape.constant(ta);
    let y = tape.constant(tb);
    let d = swd_distance(&mut tape, x, y, &proj)?;
    Ok(format!("{}\n", tape.item(d)?))
}

pub fn sweep(opts: &Options) -> Result<String> {
    let spec = load_spec(opts)?;
    let dir = out_dir(opts)?;
    if spec.seeds.len() < 2 {
        return Err(CliError::Spec("sweep needs at least 2 seeds".into()));
    }
    prepare_out(dir, opts.force)?;
    write_file(&dir.join("resolved_spec.txt"), &spec.resolved_text())?;
    let data = load_data(&spec)?;
    let report = run_seed_sweep(
        &spec.experiment(),
        &data,
        &spec.seeds,
        &SweepOptions {
            out_dir: Some(dir.to_path_buf()),
            zero_timings: opts.deterministic,
        },
    )?;
    let mut out = String::new();
    for a in report.aggregates.iter().filter(|a| a.metric == "test_accuracy") {
        let _ = writeln!(
            out,
            "{:<12} budget {:<5} test accuracy {:.4} +- {:.4} (n={})",
            a.method, a.budget, a.mean, a.standard_error, a.n
        );
    }
    Ok(out)
}

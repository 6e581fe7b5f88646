use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::eval::{evaluate, pseudo_labels};
use super::metrics::{EpochAccumulator, MetricsRecord, StepTerms, TermWeights};
use super::optimizer::Optimizer;
use super::{derive_seed, stream_rng, streams};
use crate::autodiff::{ParameterSet, Tape, Var};
use crate::data::{make_multiviewed_batch, shuffled_batches, ClassPairedSampler, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, sample_projections, supcon_loss, transfer_objective, SupConConfig, TransferBatch, TransferWeights,
};
use crate::nn::{Branch, Groups, Mode, YNetwork};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Pretrained network adapted with the full alignment objective.
    Transfer,
    /// Fresh network trained on the labeled target data only.
    TargetOnly,
    /// Pretrained source encoder copied to the target branch, then trained on
    /// the labeled target data.
    Finetune,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Transfer, Method::TargetOnly, Method::Finetune];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Transfer => "transfer",
            Method::TargetOnly => "target-only",
            Method::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transfer" => Ok(Method::Transfer),
            "target-only" => Ok(Method::TargetOnly),
            "finetune" => Ok(Method::Finetune),
            _ => Err(Error::invalid(format!(
                "unknown method '{s}' (expected transfer, target-only or finetune)"
            ))),
        }
    }

    pub fn needs_pretraining(self) -> bool {
        self != Method::TargetOnly
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Target-modality data for the second phase.
#[derive(Debug, Clone, Copy)]
pub struct TargetData<'a> {
    pub labeled: &'a Dataset,
    /// Pool whose labels are never read during training.
    pub unlabeled: Option<&'a Dataset>,
    pub val: Option<&'a Dataset>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    /// Total loss of every optimization step, in order.
    pub step_losses: Vec<f64>,
}

/// Endless stream of fixed-size index batches over `0..n`, reshuffled on
/// every pass.
#[derive(Debug, Clone)]
pub struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    /// Batches hold `min(batch, n)` indices.
    pub fn new(n: usize, batch: usize, rng: ChaCha8Rng) -> Self {
        BatchCycler {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn check_dataset(net: &YNetwork, ds: &Dataset, role: &str) -> Result<Dataset> {
    if ds.classes() != net.classes {
        return Err(Error::invalid(format!(
            "{role} data has {} classes, the network {}",
            ds.classes(),
            net.classes
        )));
    }
    let [c, h, w] = ds.image_shape();
    let cfg = &net.config;
    if [c, h, w] != [cfg.in_channels, cfg.height, cfg.width] {
        return Err(Error::shape(
            "training",
            format!(
                "{role} images are [{c},{h},{w}], the network expects [{},{},{}]",
                cfg.in_channels, cfg.height, cfg.width
            ),
        ));
    }
    Ok(ds.with_dtype(net.dtype))
}

fn correct(tape: &Tape, logits: Var, labels: &[usize]) -> usize {
    let v = tape.value(logits);
    let k = v.shape()[1];
    v.data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best == l
        })
        .count()
}

fn optimize(tape: &Tape, total: Var, net: &mut YNetwork, opt: &mut Optimizer, groups: Groups) -> Result<()> {
    net.zero_grad();
    tape.backward(total, net)?;
    opt.step(&mut net.groups_mut(groups))
}

fn val_record(net: &mut YNetwork, val: Option<&Dataset>, branch: Branch, phase: &str, epoch: usize) -> Result<Option<MetricsRecord>> {
    let Some(val) = val else { return Ok(None) };
    let e = evaluate(net, val, branch)?;
    let mut r = MetricsRecord::new(phase, epoch, "val");
    r.accuracy = Some(e.accuracy);
    r.per_class_accuracy = e.per_class_accuracy;
    Ok(Some(r))
}

/// Phase 1: trains the source encoder and the classifier on labeled source
/// data with cross-entropy, plus `supcon_weight` times the contrastive loss on
/// two augmented views of each batch.
pub fn pretrain_source(net: &mut YNetwork, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = check_dataset(net, train, "source")?;
    let val = val.map(|v| check_dataset(net, v, "source validation")).transpose()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.momentum);
    let mut rng = stream_rng(cfg.seed, streams::PRETRAIN_BATCHES);
    let use_supcon = cfg.supcon_weight > 0.0;
    let sampler = if use_supcon {
        Some(ClassPairedSampler::new(train.labels(), train.classes(), cfg.batch_source)?)
    } else {
        None
    };
    let supcon_cfg = SupConConfig {
        temperature: cfg.temperature,
        normalize: true,
    };
    let weights = TermWeights {
        supcon_weight: cfg.supcon_weight,
        ..TermWeights::default()
    };
    let mut out = TrainOutcome::default();
    let mut step = 0u64;
    for epoch in 1..=cfg.pretrain_epochs {
        let started = Instant::now();
        let batches = match &sampler {
            Some(s) => s.epoch(&mut rng),
            None => shuffled_batches(train.len(), cfg.batch_source, &mut rng),
        };
        let mut acc = EpochAccumulator::default();
        for idx in batches {
            let (x, y) = train.batch(&idx)?;
            let mut tape = Tape::new();
            let (total, terms, logits) = if use_supcon {
                let seed = derive_seed(cfg.seed, streams::PRETRAIN_AUGMENT, step);
                let views = make_multiviewed_batch(&x, &y, &cfg.augment, seed)?;
                let b = y.len();
                let input = tape.constant(Tensor::concat_rows(&[&x, &views.images])?);
                let z = net.encode(&mut tape, input, Branch::Source, Mode::Train)?;
                let z_orig = tape.index_select(z, &(0..b).collect::<Vec<_>>())?;
                let z_views = tape.index_select(z, &(b..3 * b).collect::<Vec<_>>())?;
                let logits = net.classify(&mut tape, z_orig)?;
                let ce = cross_entropy(&mut tape, logits, &y)?;
                let sc = supcon_loss(&mut tape, z_views, &views.labels, &supcon_cfg)?;
                let weighted = tape.scale(sc, cfg.supcon_weight)?;
                let total = tape.add(ce, weighted)?;
                let terms = StepTerms {
                    total: tape.item(total)?,
                    ce_src: Some(tape.item(ce)?),
                    ce_tgt: None,
                    swd: None,
                    cond_swd: None,
                    supcon: Some(tape.item(sc)?),
                    cond_skipped: false,
                };
                (total, terms, logits)
            } else {
                let input = tape.constant(x);
                let z = net.encode(&mut tape, input, Branch::Source, Mode::Train)?;
                let logits = net.classify(&mut tape, z)?;
                let ce = cross_entropy(&mut tape, logits, &y)?;
                let terms = StepTerms {
                    total: tape.item(ce)?,
                    ce_src: Some(tape.item(ce)?),
                    ce_tgt: None,
                    swd: None,
                    cond_swd: None,
                    supcon: None,
                    cond_skipped: false,
                };
                (ce, terms, logits)
            };
            terms.check_finite("pretrain")?;
            acc.add_predictions(correct(&tape, logits, &y), y.len());
            optimize(&tape, total, net, &mut opt, Groups::SOURCE_AND_HEAD)?;
            out.step_losses.push(terms.total);
            acc.add_step(&terms);
            step += 1;
        }
        let secs = started.elapsed().as_secs_f64();
        out.records.push(acc.finish("pretrain", epoch, weights, secs));
        if let Some(r) = val_record(net, val.as_ref(), Branch::Source, "pretrain", epoch)? {
            out.records.push(r);
        }
    }
    Ok(out)
}

/// Phase 2: optimizes cross-entropy on both domains plus the two alignment
/// terms over both encoders and the classifier.
pub fn train_transfer(net: &mut YNetwork, source: &Dataset, target: &TargetData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.transfer_from_source {
        net.copy_source_to_target();
    }
    phase_two(net, Some(source), target, cfg, Method::Transfer)
}

/// Cross-entropy on the labeled target data only, through the target branch.
/// Pass a freshly initialized network.
pub fn baseline_target_only(net: &mut YNetwork, target: &TargetData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    phase_two(net, None, target, cfg, Method::TargetOnly)
}

/// Copies the pretrained source encoder into the target branch, then trains
/// it and the classifier on the labeled target data.
pub fn baseline_finetune(net: &mut YNetwork, target: &TargetData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    net.copy_source_to_target();
    phase_two(net, None, target, cfg, Method::Finetune)
}

/// Every second-phase method runs `ceil(|labeled| + |unlabeled|) /
/// batch_unlabeled)` steps per epoch so methods see equal step counts.
fn phase_two(
    net: &mut YNetwork,
    source: Option<&Dataset>,
    target: &TargetData<'_>,
    cfg: &TrainConfig,
    method: Method,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled = check_dataset(net, target.labeled, "labeled target")?;
    let unlabeled = target
        .unlabeled
        .map(|u| check_dataset(net, u, "unlabeled target"))
        .transpose()?;
    let val = target.val.map(|v| check_dataset(net, v, "target validation")).transpose()?;
    let source = match (method, source) {
        (Method::Transfer, Some(s)) => Some(check_dataset(net, s, "source")?),
        (Method::Transfer, None) => return Err(Error::invalid("transfer needs labeled source data")),
        _ => None,
    };

    let pool = labeled.len() + unlabeled.as_ref().map_or(0, |u| u.len());
    let steps_per_epoch = pool.div_ceil(cfg.batch_unlabeled);
    let phase = method.as_str();
    let transfer = method == Method::Transfer;
    let use_unlabeled = transfer && (cfg.alpha > 0.0 || cfg.cond_weight > 0.0) && unlabeled.is_some();
    let groups = if transfer { Groups::ALL } else { Groups::TARGET_AND_HEAD };
    let weights = TransferWeights {
        alpha: cfg.alpha,
        cond_weight: cfg.cond_weight,
        normalize_target_ce: cfg.normalize_target_ce,
    };
    let record_weights = if transfer {
        TermWeights {
            alpha: cfg.alpha,
            cond_weight: cfg.cond_weight,
            supcon_weight: 0.0,
        }
    } else {
        TermWeights::default()
    };

    let mut src_batches = source
        .as_ref()
        .map(|s| BatchCycler::new(s.len(), cfg.batch_source, stream_rng(cfg.seed, streams::SOURCE_BATCHES)));
    let mut tgt_batches = BatchCycler::new(labeled.len(), cfg.batch_target, stream_rng(cfg.seed, streams::TARGET_BATCHES));
    let mut unl_batches = unlabeled
        .as_ref()
        .filter(|_| use_unlabeled)
        .map(|u| BatchCycler::new(u.len(), cfg.batch_unlabeled, stream_rng(cfg.seed, streams::UNLABELED_BATCHES)));
    let mut pairing_rng = stream_rng(cfg.seed, streams::PAIRING);

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.momentum);
    let mut out = TrainOutcome::default();
    let mut step = 0u64;
    for epoch in 1..=cfg.transfer_epochs {
        let started = Instant::now();
        let pseudo = match &unlabeled {
            Some(u) if use_unlabeled && cfg.cond_weight > 0.0 => pseudo_labels(net, u, cfg.confidence)?,
            _ => Vec::new(),
        };
        let mut acc = EpochAccumulator::default();
        for _ in 0..steps_per_epoch {
            let (tx, ty) = labeled.batch(&tgt_batches.next_batch())?;
            let mut tape = Tape::new();
            let (total, terms, logits_t) = if transfer {
                let src = source.as_ref().expect("checked above");
                let (sx, sy) = src.batch(&src_batches.as_mut().expect("source present").next_batch())?;
                let (ux, upseudo) = match (&mut unl_batches, &unlabeled) {
                    (Some(cycler), Some(u)) => {
                        let idx = cycler.next_batch();
                        let p: Vec<Option<usize>> = if pseudo.is_empty() {
                            vec![None; idx.len()]
                        } else {
                            idx.iter().map(|&i| pseudo[i]).collect()
                        };
                        (Some(u.batch(&idx)?.0), p)
                    }
                    _ => (None, Vec::new()),
                };
                let proj = if use_unlabeled {
                    sample_projections(
                        cfg.projections,
                        net.config.embed_dim,
                        derive_seed(cfg.seed, streams::PROJECTIONS, step),
                    )?
                } else {
                    sample_projections(1, net.config.embed_dim, 0)?
                };
                let batch = TransferBatch {
                    source_x: &sx,
                    source_y: &sy,
                    target_x: &tx,
                    target_y: &ty,
                    unlabeled_x: ux.as_ref(),
                    pseudo_labels: &upseudo,
                };
                let loss = transfer_objective(&mut tape, net, &batch, &proj, &weights, Mode::Train, &mut pairing_rng)?;
                let t = loss.terms;
                let terms = StepTerms {
                    total: t.total,
                    ce_src: Some(t.ce_src),
                    ce_tgt: Some(t.ce_tgt),
                    swd: t.swd,
                    cond_swd: t.cond_swd,
                    supcon: None,
                    cond_skipped: t.cond_skipped && use_unlabeled,
                };
                (loss.total, terms, loss.target_logits)
            } else {
                let x = tape.constant(tx);
                let z = net.encode(&mut tape, x, Branch::Target, Mode::Train)?;
                let logits = net.classify(&mut tape, z)?;
                let ce = cross_entropy(&mut tape, logits, &ty)?;
                let terms = StepTerms {
                    total: tape.item(ce)?,
                    ce_src: None,
                    ce_tgt: Some(tape.item(ce)?),
                    swd: None,
                    cond_swd: None,
                    supcon: None,
                    cond_skipped: false,
                };
                (ce, terms, logits)
            };
            terms.check_finite(phase)?;
            acc.add_predictions(correct(&tape, logits_t, &ty), ty.len());
            optimize(&tape, total, net, &mut opt, groups)?;
            out.step_losses.push(terms.total);
            acc.add_step(&terms);
            step += 1;
        }
        let secs = started.elapsed().as_secs_f64();
        out.records.push(acc.finish(phase, epoch, record_weights, secs));
        if let Some(r) = val_record(net, val.as_ref(), Branch::Target, phase, epoch)? {
            out.records.push(r);
        }
    }
    Ok(out)
}

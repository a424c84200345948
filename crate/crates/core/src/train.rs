//! Training loop and evaluation runs.

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, RunConfig};
use crate::error::{ensure, Error, Result};
use crate::eval::{compute_report, partition_groups, EvalMode, GroupPartition, ImagePrediction, MetricsReport, DEFAULT_GROUP_CUTS};
use crate::model::{ground_truth, ImageInput, LossBreakdown, Model, Targets};
use crate::numeric::Tape;
use crate::optim::Optimizer;
use crate::proposals::{DatasetManifest, Split};
use crate::sampling::Sampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// 1-based.
    pub epoch: u64,
    pub total: f64,
    pub l_p: f64,
    pub l_e: f64,
    pub l_rce: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub steps: u64,
    /// Epochs started, counting a final partial one.
    pub epochs: u64,
    pub log: Vec<LogEntry>,
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    for b in items {
        out.total += b.total / n;
        out.l_p += b.l_p / n;
        out.l_e += b.l_e / n;
        out.l_rce += b.l_rce / n;
    }
    out
}

/// Trains from scratch. `on_checkpoint` is called every
/// `train.checkpoint_every` steps with the current model and step.
pub fn train<F>(cfg: &RunConfig, manifest: &DatasetManifest, mut on_checkpoint: F) -> Result<TrainOutcome>
where
    F: FnMut(&Model, u64) -> Result<()>,
{
    cfg.validate()?;
    let mut model = Model::from_manifest(&cfg.model, manifest, cfg.seed)?;
    let sampler = Sampler::from_manifest(manifest, cfg.sampler.clone())?;
    let mode = cfg.train.mode;
    let mut inputs = Vec::with_capacity(manifest.images.len());
    for record in &manifest.images {
        inputs.push(if record.split == Split::Train {
            Some(ImageInput::build(record, mode, model.num_entity_classes, cfg.model.max_pairs)?)
        } else {
            None
        });
    }
    let trainable = model.trainable();
    let mut opt = Optimizer::new(&cfg.train, &model.store, trainable);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_b155);
    let accumulate = cfg.train.accumulate;
    let mut log = Vec::new();
    let mut pending: Vec<LossBreakdown> = Vec::new();
    let mut window: Vec<LossBreakdown> = Vec::new();
    let (mut step, mut epoch) = (0u64, 0u64);
    let started = Instant::now();
    model.store.zero_grads();
    'outer: while (step as usize) < cfg.train.steps {
        epoch += 1;
        let plan = sampler.build_epoch(master.gen());
        let mut order: Vec<usize> = (0..plan.entries.len()).collect();
        order.shuffle(&mut master);
        let mut progressed = false;
        for idx in order {
            let entry = &plan.entries[idx];
            let Some(input) = inputs[entry.image].as_ref() else { continue };
            if input.pairs.is_empty() {
                continue;
            }
            let targets = Targets::build(&manifest.images[entry.image], input, Some(&entry.keep))?;
            let mut tape = Tape::with_precision(cfg.train.precision);
            let fwd = model.forward(&mut tape, &model.store, input)?;
            let (loss, parts) = model.loss(&mut tape, &fwd, &targets, &cfg.loss)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {step}")));
            }
            tape.backward(loss, &mut model.store)?;
            pending.push(parts);
            progressed = true;
            if pending.len() == accumulate {
                opt.step(&mut model.store, 1.0 / accumulate as f64)?;
                model.store.zero_grads();
                step += 1;
                window.push(mean_breakdown(&pending));
                pending.clear();
                if cfg.train.log_every > 0 && step % cfg.train.log_every as u64 == 0 {
                    let m = mean_breakdown(&window);
                    window.clear();
                    info!(
                        "step {step} epoch {epoch} loss {:.4} (L_p {:.4} L_e {:.4} L_rce {:.4}) {:.1}s",
                        m.total,
                        m.l_p,
                        m.l_e,
                        m.l_rce,
                        started.elapsed().as_secs_f64()
                    );
                    log.push(LogEntry { step, epoch, total: m.total, l_p: m.l_p, l_e: m.l_e, l_rce: m.l_rce });
                }
                if cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every as u64 == 0 {
                    on_checkpoint(&model, step)?;
                }
                if step as usize >= cfg.train.steps {
                    break 'outer;
                }
            }
        }
        ensure!(progressed, Contract, "the training split has no image with an entity pair");
    }
    Ok(TrainOutcome { model, steps: step, epochs: epoch, log })
}

/// Head/body/tail assignment: explicit cuts from the config win, then the
/// manifest's own groups, then the default cuts on training counts.
pub fn group_partition(manifest: &DatasetManifest, eval: &EvalConfig) -> GroupPartition {
    let train_counts = || {
        let mut counts = vec![0u64; manifest.num_predicate_classes()];
        for im in manifest.split(Split::Train) {
            for t in &im.gt_triplets {
                counts[t[1]] += 1;
            }
        }
        counts
    };
    if let Some([h, t]) = eval.group_cuts {
        return partition_groups(&train_counts(), (h, t));
    }
    if let Some(meta) = &manifest.meta {
        if meta.predicate_groups.len() == manifest.num_predicate_classes() {
            return GroupPartition { groups: meta.predicate_groups.clone(), head_above: meta.group_cuts[0], tail_below: meta.group_cuts[1] };
        }
    }
    partition_groups(&train_counts(), DEFAULT_GROUP_CUTS)
}

/// Number of evaluation workers: `BGNN_THREADS` when set, else the
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var("BGNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Predicts every image of `split` and scores the predictions. Images are
/// sharded across `threads` workers and merged in manifest order.
pub fn evaluate(
    model: &Model,
    manifest: &DatasetManifest,
    split: Split,
    mode: EvalMode,
    eval: &EvalConfig,
    threads: usize,
) -> Result<(MetricsReport, Vec<ImagePrediction>)> {
    ensure!(manifest.num_entity_classes() == model.num_entity_classes, Config, "manifest entity vocabulary differs from the model");
    ensure!(manifest.num_predicate_classes() == model.num_predicate_classes, Config, "manifest predicate vocabulary differs from the model");
    let records: Vec<_> = manifest.split(split).collect();
    ensure!(!records.is_empty(), Config, "manifest has no {split:?} images");
    let top_k = eval.ks.iter().copied().max();
    let predict = |r: &crate::proposals::ImageRecord| -> Result<ImagePrediction> {
        let input = ImageInput::build(r, mode, model.num_entity_classes, model.config.max_pairs)?;
        model.predict(&input, eval.decode, top_k)
    };
    let threads = threads.clamp(1, records.len());
    let chunk = records.len().div_ceil(threads);
    let predictions: Vec<ImagePrediction> = if threads == 1 {
        records.iter().map(|r| predict(r)).collect::<Result<_>>()?
    } else {
        let parts: Vec<Result<Vec<ImagePrediction>>> = std::thread::scope(|s| {
            let handles: Vec<_> = records
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|r| predict(r)).collect::<Result<Vec<_>>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(records.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let pairs: Vec<_> = predictions.iter().cloned().zip(records.iter().map(|r| ground_truth(r))).collect();
    let partition = group_partition(manifest, eval);
    let report = compute_report(&pairs, mode, model.num_predicate_classes, &partition, &eval.ks, eval.iou_threshold)?;
    Ok((report, predictions))
}

//! Training loop with per-epoch spectrum and sensitivity diagnostics.
//!
//! The loss per sample is cross-entropy on the pooled logits, plus the
//! weighted singular-value tail of the attention scores, plus an optional
//! frequency block: the L1 mass of the low-band component of the output
//! features and the smoothed L2 drift of the high-band component away from
//! the layer input. The frequency block is normalized by the feature count
//! so its scale does not swamp the cross-entropy term when the grid grows.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autograd::{AdamW, NodeId, ParamStore, Tape, TrainConfig};
use crate::cap::{self, AttentionMode};
use crate::causal::invariance_check;
use crate::error::{Error, Result};
use crate::numerics::filter_columns;
use crate::rng::{stream_rng, STREAM_INIT, STREAM_PROBES, STREAM_SHUFFLE};

use super::data::{Dataset, Split, SyntheticSample, LABEL_BUS, LABEL_TRUCK};
use super::model::{BiasModel, ModelKind, NetConfig};

/// Any parameter magnitude past this counts as divergence. Products of
/// three such factors still sit far below f64 overflow, so the guard fires
/// before a kernel can produce a non-finite value.
const PARAM_CAP: f64 = 1e50;

/// How many training samples feed the tail-energy probe.
const TAIL_PROBE_SAMPLES: usize = 32;
/// How many training samples feed the prompt-sensitivity probe.
const JACOBIAN_PROBE_SAMPLES: usize = 4;
/// Random directions per sample in the prompt-sensitivity probe.
const JACOBIAN_PROBES: usize = 4;
/// Step length for the probe's central differences.
const JACOBIAN_EPS: f64 = 1e-4;

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    /// 0 is the untrained measurement; row e describes the state after the
    /// e-th pass over the training split.
    pub epoch: usize,
    /// Mean training loss: at epoch 0 an evaluation pass in dataset order,
    /// afterwards the mean over the epoch's optimization batches.
    pub loss: f64,
    /// Mean fraction of attention-score energy past the causal cut, over a
    /// fixed probe subset of the training split. 0 for models without the
    /// attention layer.
    pub tail_energy_ratio: f64,
    /// Mean directional sensitivity of the high-band output features to the
    /// prompts. 0 for models without the attention layer.
    pub jacobian_norm: f64,
}

/// A trained model with its parameter store and per-epoch history.
#[derive(Debug)]
pub struct TrainedModel {
    pub store: ParamStore,
    pub model: BiasModel,
    pub history: Vec<EpochStats>,
}

/// Accuracy summary of one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub split: Split,
    pub accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    /// Biased-test accuracy minus unbiased-test accuracy, repeated on both
    /// rows so either one carries the headline number.
    pub gap: f64,
}

fn class_name(label: usize) -> String {
    match label {
        LABEL_BUS => "bus".to_string(),
        LABEL_TRUCK => "truck".to_string(),
        other => format!("class_{other}"),
    }
}

/// Builds the per-sample loss on the tape and returns its node.
fn sample_loss(
    tape: &mut Tape,
    store: &ParamStore,
    model: &BiasModel,
    sample: &SyntheticSample,
    cfg: &TrainConfig,
) -> Result<NodeId> {
    let taped = model.forward_tape(tape, store, &sample.pixels)?;
    let mut loss = tape.cross_entropy(taped.logits, sample.label)?;
    if let Some(layer_fwd) = &taped.layer {
        if cfg.lambda_tail > 0.0 {
            let tail = tape.scale(layer_fwd.tail, cfg.lambda_tail);
            loss = tape.add(loss, tail)?;
        }
        if cfg.lambda_inv > 0.0 && cfg.invariance_weight > 0.0 {
            let layer = model
                .layer
                .as_ref()
                .expect("a taped layer forward implies the model holds the layer");
            let low = model
                .low_mask
                .as_ref()
                .expect("a model with the layer also holds the low-band mask");
            let (h, w) = (model.net.adapter.h, model.net.adapter.w);
            let low_part = tape.spectral_filter(taped.x_next, Arc::clone(low), h, w)?;
            let l1 = tape.l1_norm(low_part)?;
            let hi_out = tape.spectral_filter(taped.x_next, Arc::clone(&layer.mask), h, w)?;
            let hi_in = tape.spectral_filter(taped.x_node, Arc::clone(&layer.mask), h, w)?;
            let drift = tape.l2_diff(hi_out, hi_in)?;
            let drift_w = tape.scale(drift, cfg.lambda_inv);
            let block = tape.add(l1, drift_w)?;
            let features = (model.net.adapter.tokens() * model.net.adapter.embed_dim) as f64;
            let block_w = tape.scale(block, cfg.invariance_weight / features);
            loss = tape.add(loss, block_w)?;
        }
    }
    Ok(loss)
}

/// Mean loss node over one batch. The sum is scaled by a reciprocal so the
/// value matches a hand accumulation bitwise.
fn batch_loss_node(
    tape: &mut Tape,
    store: &ParamStore,
    model: &BiasModel,
    samples: &[&SyntheticSample],
    cfg: &TrainConfig,
) -> Result<NodeId> {
    let mut sum: Option<NodeId> = None;
    for sample in samples {
        let loss = sample_loss(tape, store, model, sample, cfg)?;
        sum = Some(match sum {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let sum = sum.ok_or_else(|| Error::config("cannot compute the loss of an empty batch"))?;
    Ok(tape.scale(sum, 1.0 / samples.len() as f64))
}

/// Mean loss over the whole training split in dataset order, no updates.
fn eval_mean_loss(
    store: &ParamStore,
    model: &BiasModel,
    train: &[&SyntheticSample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in train.chunks(cfg.batch_size) {
        let mut tape = Tape::new();
        let node = batch_loss_node(&mut tape, store, model, chunk, cfg)?;
        total += tape.value(node).get(0, 0) * chunk.len() as f64;
    }
    Ok(total * (1.0 / train.len() as f64))
}

/// Mean tail-energy ratio of the attention scores over the probe subset.
fn tail_energy_probe(
    store: &ParamStore,
    model: &BiasModel,
    train: &[&SyntheticSample],
) -> Result<f64> {
    let Some(layer) = &model.layer else {
        return Ok(0.0);
    };
    let count = train.len().min(TAIL_PROBE_SAMPLES);
    let mut acc = 0.0;
    for sample in &train[..count] {
        let x = model.embed_pure(store, &sample.pixels)?;
        let fwd = layer.forward_pure(store, &x, AttentionMode::Full)?;
        let dec = &fwd.attention.decomposition;
        acc += cap::tail_energy_ratio(&dec.factors.sigma, dec.k);
    }
    Ok(acc / count as f64)
}

/// Mean prompt sensitivity of the high-band output features over the probe
/// subset. Perturbs the prompts in place and restores them bitwise.
fn jacobian_probe(
    store: &mut ParamStore,
    model: &BiasModel,
    train: &[&SyntheticSample],
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    let Some(layer) = &model.layer else {
        return Ok(0.0);
    };
    let prompts = layer.prompts;
    let original = store.value(prompts).clone();
    let (h, w) = (model.net.adapter.h, model.net.adapter.w);
    let count = train.len().min(JACOBIAN_PROBE_SAMPLES);
    let mut acc = 0.0;
    for sample in &train[..count] {
        let outcome = invariance_check(
            |p| {
                store.set_value(prompts, p.clone())?;
                let features = model.features_pure(store, &sample.pixels)?;
                filter_columns(&features, &layer.mask, h, w)
            },
            &original,
            JACOBIAN_PROBES,
            JACOBIAN_EPS,
            rng,
        );
        match outcome {
            Ok(norm) => acc += norm,
            Err(err) => {
                store.set_value(prompts, original)?;
                return Err(err);
            }
        }
    }
    store.set_value(prompts, original)?;
    Ok(acc / count as f64)
}

fn probe_stats(
    store: &mut ParamStore,
    model: &BiasModel,
    train: &[&SyntheticSample],
    rng: &mut impl rand::Rng,
) -> Result<(f64, f64)> {
    let tail = tail_energy_probe(store, model, train)?;
    let jac = jacobian_probe(store, model, train, rng)?;
    Ok((tail, jac))
}

fn check_divergence(store: &ParamStore, epoch: usize, batch_loss: f64) -> Result<()> {
    if !batch_loss.is_finite() {
        return Err(Error::Training {
            epoch,
            message: format!("batch loss became non-finite ({batch_loss})"),
        });
    }
    for id in store.trainable_ids() {
        let magnitude = store.value(id).max_abs();
        if magnitude > PARAM_CAP {
            return Err(Error::Training {
                epoch,
                message: format!("parameter magnitude {magnitude:.3e} exceeds the divergence cap"),
            });
        }
    }
    Ok(())
}

/// Trains a model on the dataset's training split.
///
/// The history starts with an untrained measurement at epoch 0 and gains one
/// row after each pass over the data. Zero epochs leave the parameters at
/// initialization with only that first row. Non-finite losses or runaway
/// parameter magnitudes stop the run with a training error carrying the
/// 1-based epoch in which they appeared.
pub fn train_model(
    dataset: &Dataset,
    kind: ModelKind,
    net: &NetConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let spec = &dataset.spec;
    net.validate(spec.grid_h, spec.grid_w)?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::config("the training split is empty"));
    }

    let mut store = ParamStore::new();
    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let model = BiasModel::init(
        &mut store,
        kind,
        net,
        spec.grid_h,
        spec.grid_w,
        &mut init_rng,
        cfg.proj_lr_mult,
    )?;

    let mut optimizer = AdamW::new(cfg);
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut probes_rng = stream_rng(cfg.seed, STREAM_PROBES);

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let init_loss = eval_mean_loss(&store, &model, &train, cfg)?;
    let (tail, jac) = probe_stats(&mut store, &model, &train, &mut probes_rng)?;
    history.push(EpochStats {
        epoch: 0,
        loss: init_loss,
        tail_energy_ratio: tail,
        jacobian_norm: jac,
    });

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SyntheticSample> = chunk.iter().map(|&i| train[i]).collect();
            let mut tape = Tape::new();
            let node = batch_loss_node(&mut tape, &store, &model, &batch, cfg)
                .map_err(|e| e.into_training(epoch))?;
            let loss = tape.value(node).get(0, 0);
            let grads = tape.backward(node).map_err(|e| e.into_training(epoch))?;
            optimizer
                .step(&mut store, &grads)
                .map_err(|e| e.into_training(epoch))?;
            check_divergence(&store, epoch, loss)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let (tail, jac) = probe_stats(&mut store, &model, &train, &mut probes_rng)
            .map_err(|e| e.into_training(epoch))?;
        history.push(EpochStats {
            epoch,
            loss: epoch_loss * (1.0 / train.len() as f64),
            tail_energy_ratio: tail,
            jacobian_norm: jac,
        });
    }

    Ok(TrainedModel { store, model, history })
}

fn split_metrics(
    store: &ParamStore,
    model: &BiasModel,
    samples: &[&SyntheticSample],
) -> Result<(f64, BTreeMap<String, f64>)> {
    if samples.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let classes = model.net.classes;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for sample in samples {
        let logits = model.forward_pure(store, &sample.pixels)?;
        let mut best = 0;
        for j in 1..logits.cols() {
            if logits.get(0, j) > logits.get(0, best) {
                best = j;
            }
        }
        let label = sample.label;
        total[label] += 1;
        if best == label {
            correct[label] += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    for label in 0..classes {
        if total[label] > 0 {
            per_class.insert(class_name(label), correct[label] as f64 / total[label] as f64);
        }
    }
    let accuracy =
        correct.iter().sum::<usize>() as f64 / total.iter().sum::<usize>() as f64;
    Ok((accuracy, per_class))
}

/// Evaluates a model on both test splits.
///
/// Returns one record per split, biased first, each carrying the shared
/// biased-minus-unbiased accuracy gap. An untrained model has an all-zero
/// head, ties resolve toward the first class, and accuracy sits near the
/// class balance of the split.
pub fn evaluate_checkpoint(
    store: &ParamStore,
    model: &BiasModel,
    dataset: &Dataset,
) -> Result<Vec<MetricsRecord>> {
    let (acc_biased, per_class_biased) =
        split_metrics(store, model, &dataset.split(Split::BiasedTest))?;
    let (acc_unbiased, per_class_unbiased) =
        split_metrics(store, model, &dataset.split(Split::UnbiasedTest))?;
    let gap = acc_biased - acc_unbiased;
    Ok(vec![
        MetricsRecord {
            split: Split::BiasedTest,
            accuracy: acc_biased,
            per_class_accuracy: per_class_biased,
            gap,
        },
        MetricsRecord {
            split: Split::UnbiasedTest,
            accuracy: acc_unbiased,
            per_class_accuracy: per_class_unbiased,
            gap,
        },
    ])
}

/// Writes the history as CSV with a fixed header. Floats use the shortest
/// round-trip form so reruns produce identical bytes.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,loss,tail_energy_ratio,jacobian_norm\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.loss, row.tail_energy_ratio, row.jacobian_norm
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

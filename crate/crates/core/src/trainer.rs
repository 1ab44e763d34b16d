//! Mini-batch training with early stopping, and held-out evaluation.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::{cross_entropy, hybrid_loss, HybridWeights, LossValue};
use crate::metrics::{
    accuracy_mcc, binarize, ClassificationSummary, ConfusionMatrix, HausdorffVariant, Mask, SegmentationReport,
};
use crate::network::{Network, Task};
use crate::optim::{Adam, AdamConfig, EarlyStopper, MonitorMode, StopDecision};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValLoss,
    /// Validation mDSC (segmentation) or accuracy (classification).
    ValMetric,
}

impl Monitor {
    fn mode(self) -> MonitorMode {
        match self {
            Monitor::ValLoss => MonitorMode::Min,
            Monitor::ValMetric => MonitorMode::Max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: HybridWeights,
    pub patience: usize,
    pub monitor: Monitor,
    /// Seeds the per-epoch shuffles; supplied by the run configuration.
    #[serde(skip)]
    pub seed: u64,
    /// Sigmoid threshold for binarizing segmentation logits.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 16,
            adam: AdamConfig::default(),
            loss: HybridWeights::default(),
            patience: 50,
            monitor: Monitor::ValLoss,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::config("train.adam.lr", "must be a positive number"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("train.adam", "betas must lie in [0, 1)"));
        }
        if !(self.adam.weight_decay >= 0.0) {
            return Err(Error::config("train.adam.weight_decay", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("train.threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were restored, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub steps: u64,
}

impl TrainOutcome {
    /// `epoch,train_loss,val_loss,val_metric` rows.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
        for r in &self.history {
            out.push_str(&format!("{},{:.17e},{:.17e},{:.17e}\n", r.epoch, r.train_loss, r.val_loss, r.val_metric));
        }
        out
    }
}

fn batch_loss(net: &Network, logits: &Tensor, targets: &crate::data::Batch, weights: HybridWeights) -> Result<LossValue> {
    match net.descriptor().task {
        Task::Segmentation => {
            let masks = targets.masks.as_ref().ok_or_else(|| Error::data("segmentation batch without masks"))?;
            hybrid_loss(logits, masks, weights)
        }
        Task::Classification => cross_entropy(logits, &targets.labels),
    }
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n.div_ceil(size)).map(move |b| b * size..((b + 1) * size).min(n))
}

/// Mean loss and primary metric over `data` in inference mode.
pub fn validate(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::data("validation set is empty"));
    }
    let mut loss_sum = 0.0;
    let mut seg = SegmentationReport::new(HausdorffVariant::Max);
    let mut conf = ConfusionMatrix::new(net.descriptor().classes.max(2));
    let order: Vec<usize> = (0..data.len()).collect();
    for range in batches(data.len(), cfg.batch_size) {
        let b = data.batch(&order[range.clone()])?;
        let logits = net.predict(&b.images)?;
        loss_sum += batch_loss(net, &logits, &b, cfg.loss)?.total * range.len() as f64;
        match net.descriptor().task {
            Task::Segmentation => {
                let masks = b.masks.as_ref().expect("checked by batch_loss");
                for i in 0..range.len() {
                    let pred = binarize(&logits.index_first(i)?, cfg.threshold)?;
                    let gt = Mask::from_tensor(&masks.index_first(i)?)?;
                    seg.images.push(overlap_only(&pred, &gt)?);
                }
            }
            Task::Classification => {
                for (i, &label) in b.labels.iter().enumerate() {
                    conf.record(label, argmax(&logits.index_first(i)?))?;
                }
            }
        }
    }
    let metric = match net.descriptor().task {
        Task::Segmentation => seg.summary().mdsc,
        Task::Classification => accuracy_mcc(&conf)?.0,
    };
    Ok((loss_sum / data.len() as f64, metric))
}

// Validation only needs dice; skip the distance transform.
fn overlap_only(pred: &Mask, gt: &Mask) -> Result<crate::metrics::ImageMetrics> {
    let o = crate::metrics::dice_iou_prf(pred, gt)?;
    Ok(crate::metrics::ImageMetrics {
        dsc: o.dsc,
        iou: o.iou,
        recall: o.recall,
        precision: o.precision,
        f2: o.f2,
        hd: f64::NAN,
    })
}

fn argmax(row: &Tensor) -> usize {
    row.data()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Train `net` in place, restoring the best-monitored parameters at the end.
///
/// `on_epoch` sees each record and whether it set a new best; returning an
/// error aborts training.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, bool, &Network) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let mut adam = Adam::new(cfg.adam);
    let mut stopper = EarlyStopper::new(cfg.patience, cfg.monitor.mode());
    let mut best: Option<(usize, Vec<Tensor>)> = None;
    let mut outcome = TrainOutcome { history: Vec::new(), best_epoch: None, stopped_early: false, steps: 0 };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        SplitMix64::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for range in batches(order.len(), cfg.batch_size) {
            let b = train_set.batch(&order[range.clone()])?;
            net.zero_grad();
            let logits = net.forward(&b.images, Mode::Train)?;
            let loss = batch_loss(net, &logits, &b, cfg.loss)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += loss.total * range.len() as f64;
            net.backward(&loss.grad)?;
            adam.step(&mut net.params_mut())?;
        }
        let (val_loss, val_metric) = validate(net, val_set, cfg)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / train_set.len() as f64, val_loss, val_metric };
        let monitored = match cfg.monitor {
            Monitor::ValLoss => val_loss,
            Monitor::ValMetric => val_metric,
        };
        let improved = stopper.improves(monitored);
        let decision = stopper.update(monitored)?;
        if improved {
            best = Some((epoch, net.params().iter().map(|p| p.value.clone()).collect()));
        }
        outcome.history.push(record);
        on_epoch(&record, improved, net)?;
        if decision == StopDecision::Stop {
            outcome.stopped_early = true;
            break;
        }
    }
    if let Some((epoch, values)) = best {
        for (p, v) in net.params_mut().into_iter().zip(values) {
            p.value = v;
        }
        outcome.best_epoch = Some(epoch);
    }
    outcome.steps = adam.steps();
    Ok(outcome)
}

/// Per-image segmentation metrics on `data`.
pub fn evaluate_segmentation(
    net: &mut Network,
    data: &Dataset,
    threshold: f64,
    variant: HausdorffVariant,
    batch_size: usize,
) -> Result<SegmentationReport> {
    let mut report = SegmentationReport::new(variant);
    let order: Vec<usize> = (0..data.len()).collect();
    for range in batches(data.len(), batch_size.max(1)) {
        let b = data.batch(&order[range.clone()])?;
        let masks = b.masks.as_ref().ok_or_else(|| Error::data("segmentation data without masks"))?;
        let logits = net.predict(&b.images)?;
        for i in 0..range.len() {
            report.push(&binarize(&logits.index_first(i)?, threshold)?, &Mask::from_tensor(&masks.index_first(i)?)?)?;
        }
    }
    Ok(report)
}

pub fn evaluate_classification(
    net: &mut Network,
    data: &Dataset,
    batch_size: usize,
) -> Result<(ConfusionMatrix, ClassificationSummary)> {
    let mut conf = ConfusionMatrix::new(net.descriptor().classes);
    let order: Vec<usize> = (0..data.len()).collect();
    for range in batches(data.len(), batch_size.max(1)) {
        let b = data.batch(&order[range.clone()])?;
        if b.labels.len() != range.len() {
            return Err(Error::data("classification data without labels"));
        }
        let logits = net.predict(&b.images)?;
        for (i, &label) in b.labels.iter().enumerate() {
            conf.record(label, argmax(&logits.index_first(i)?))?;
        }
    }
    let (accuracy, mcc) = accuracy_mcc(&conf)?;
    Ok((conf, ClassificationSummary { accuracy, mcc }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs_cls, gen_shapes_seg};
    use crate::momentum::BackpropMode;
    use crate::network::{NetworkDescriptor, StageDescriptor};

    fn tiny_seg() -> NetworkDescriptor {
        NetworkDescriptor::segmenter(
            [1, 16, 16],
            vec![
                StageDescriptor::new(3, 1, 0.9, BackpropMode::Reversible),
                StageDescriptor::new(4, 1, 0.9, BackpropMode::Reversible),
            ],
        )
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 4, patience: 5, adam: AdamConfig { lr: 1e-2, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn zero_epochs_leaves_weights() {
        let data = gen_shapes_seg(8, 16, 1).unwrap();
        let mut net = Network::build(&tiny_seg(), 3).unwrap();
        let before: Vec<Tensor> = net.params().iter().map(|p| p.value.clone()).collect();
        let cfg = TrainConfig { epochs: 0, ..quick_cfg() };
        let out = train(&mut net, &data, &data, &cfg, |_, _, _| Ok(())).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.steps, 0);
        let after: Vec<Tensor> = net.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let data = gen_shapes_seg(12, 16, 2).unwrap();
        let run = || {
            let mut net = Network::build(&tiny_seg(), 5).unwrap();
            let cfg = TrainConfig { epochs: 6, ..quick_cfg() };
            let out = train(&mut net, &data, &data, &cfg, |_, _, _| Ok(())).unwrap();
            (out, net.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.steps, 6 * 3);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    }

    #[test]
    fn best_parameters_are_restored() {
        let data = gen_blobs_cls(16, 2, 8, 4).unwrap();
        let desc = NetworkDescriptor::classifier([1, 8, 8], vec![StageDescriptor::new(2, 1, 0.5, BackpropMode::Stored)], 2);
        let mut net = Network::build(&desc, 1).unwrap();
        let cfg = TrainConfig { epochs: 8, patience: 1, ..quick_cfg() };
        let mut snapshots = Vec::new();
        let out = train(&mut net, &data, &data, &cfg, |r, improved, n| {
            if improved {
                snapshots.push((r.epoch, n.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>()));
            }
            Ok(())
        })
        .unwrap();
        let (epoch, values) = snapshots.pop().unwrap();
        assert_eq!(out.best_epoch, Some(epoch));
        let now: Vec<Tensor> = net.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(now, values);
        let log = out.log_csv();
        assert!(log.starts_with("epoch,train_loss,val_loss,val_metric\n"));
        assert_eq!(log.lines().count(), out.history.len() + 1);
    }

    #[test]
    fn ground_truth_logits_score_perfectly() {
        let data = gen_shapes_seg(3, 16, 8).unwrap();
        let mut report = SegmentationReport::new(HausdorffVariant::Max);
        for s in &data.samples {
            let m = Mask::from_tensor(s.mask().unwrap()).unwrap();
            report.push(&m, &m).unwrap();
        }
        let s = report.summary();
        assert_eq!((s.mdsc, s.miou, s.hd), (1.0, 1.0, Some(0.0)));
    }
}

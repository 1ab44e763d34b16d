//! Training objectives with analytic gradients with respect to the logits.

use crate::error::{Error, Result};
use crate::layers::sigmoid;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct LossValue {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
    pub grad: Tensor,
}

impl LossValue {
    fn single(name: &str, total: f64, grad: Tensor) -> Self {
        LossValue { total, components: BTreeMap::from([(name.to_string(), total)]), grad }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// Weights of the segmentation objective and the Dice smoothing constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridWeights {
    pub bce: f64,
    pub dice: f64,
    pub smooth: f64,
}

impl Default for HybridWeights {
    fn default() -> Self {
        HybridWeights { bce: 1.0, dice: 1.0, smooth: 1.0 }
    }
}

fn check_targets(logits: &Tensor, targets: &Tensor) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "logits {:?} and targets {:?} differ",
            logits.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = targets.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::data(format!("binary target expected, found {bad}")));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits, `max(z,0) - z t + ln(1 + e^{-|z|})`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<LossValue> {
    check_targets(logits, targets)?;
    let n = logits.len().max(1) as f64;
    let mut total = 0.0;
    for (&z, &t) in logits.data().iter().zip(targets.data()) {
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
    }
    let grad = logits.zip_map(targets, "bce", |z, t| (sigmoid(z) - t) / n)?;
    Ok(LossValue::single("bce", total / n, grad))
}

/// Leading axis is the batch for rank >= 2; a rank-1 tensor is one sample.
fn samples(t: &Tensor) -> usize {
    if t.rank() >= 2 {
        t.shape()[0]
    } else {
        1
    }
}

/// Soft Dice loss, computed per sample and averaged over the batch.
pub fn soft_dice_loss(logits: &Tensor, targets: &Tensor, smooth: f64) -> Result<LossValue> {
    check_targets(logits, targets)?;
    let batch = samples(logits);
    let per = if batch == 0 { 0 } else { logits.len() / batch };
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    if per > 0 {
        for ((z, t), g) in logits
            .data()
            .chunks(per)
            .zip(targets.data().chunks(per))
            .zip(grad.chunks_mut(per))
        {
            let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
            let inter: f64 = p.iter().zip(t).map(|(p, t)| p * t).sum();
            let denom = p.iter().sum::<f64>() + t.iter().sum::<f64>() + smooth;
            let num = 2.0 * inter + smooth;
            total += 1.0 - num / denom;
            for ((gi, &pi), &ti) in g.iter_mut().zip(&p).zip(t) {
                let d_coef = (2.0 * ti * denom - num) / (denom * denom);
                *gi = -d_coef * pi * (1.0 - pi) / batch as f64;
            }
        }
    }
    let grad = Tensor::new(logits.shape().to_vec(), grad)?.to_dtype(logits.dtype());
    Ok(LossValue::single("dice", total / batch.max(1) as f64, grad))
}

/// Weighted sum of [`bce_with_logits`] and [`soft_dice_loss`].
pub fn hybrid_loss(logits: &Tensor, targets: &Tensor, weights: HybridWeights) -> Result<LossValue> {
    let bce = bce_with_logits(logits, targets)?;
    let dice = soft_dice_loss(logits, targets, weights.smooth)?;
    let grad = bce.grad.scale(weights.bce).add(&dice.grad.scale(weights.dice))?;
    let mut components = BTreeMap::new();
    components.insert("bce".to_string(), weights.bce * bce.total);
    components.insert("dice".to_string(), weights.dice * dice.total);
    let total = components.values().sum();
    Ok(LossValue { total, components, grad })
}

/// Mean softmax cross-entropy over a `[B, K]` batch.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossValue> {
    let &[batch, k] = logits.shape() else {
        return Err(Error::shape(format!("cross entropy expects [B, K] logits, got {:?}", logits.shape())));
    };
    if labels.len() != batch {
        return Err(Error::shape(format!("{batch} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::data(format!("label {bad} out of range for {k} classes")));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; batch * k];
    for ((row, g), &label) in logits.data().chunks(k).zip(grad.chunks_mut(k)).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - m).exp()).sum();
        let lse = m + sum_exp.ln();
        total += lse - row[label];
        for (j, (gj, z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - lse).exp();
            *gj = (p - if j == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    let grad = Tensor::new(vec![batch, k], grad)?.to_dtype(logits.dtype());
    Ok(LossValue::single("ce", total / batch.max(1) as f64, grad))
}

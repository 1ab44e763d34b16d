//! Segmentation and classification metrics.

mod hausdorff;
mod report;

pub use hausdorff::{boundary, hausdorff, HausdorffVariant};
pub use report::{
    render_csv, render_markdown, ClassificationSummary, ImageMetrics, ReportRow, SegmentationReport, SegmentationSummary,
    CLASSIFICATION_COLUMNS, SEGMENTATION_COLUMNS,
};

use crate::error::{Error, Result};
use crate::layers::sigmoid;
use crate::tensor::Tensor;

/// A 2-D binary mask in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!("{} bits for a {height}x{width} mask", bits.len())));
        }
        Ok(Mask { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask { height, width, bits: vec![false; height * width] }
    }

    /// From a `{0,1}`-valued `[H, W]` or `[1, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = spatial(t)?;
        let bits = t
            .data()
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::data(format!("mask value {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mask { height: h, width: w, bits })
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("consistent mask")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

fn spatial(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(format!("expected an [H, W] or [1, H, W] map, got {s:?}"))),
    }
}

/// `mask = sigmoid(z) >= threshold`; ties go to foreground.
pub fn binarize(logits: &Tensor, threshold: f64) -> Result<Mask> {
    let (h, w) = spatial(logits)?;
    let bits = logits.data().iter().map(|&z| sigmoid(z) >= threshold).collect();
    Mask::new(h, w, bits)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self> {
        pred.check_same(gt)?;
        let mut c = BinaryCounts::default();
        for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub dsc: f64,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Overlap {
    /// Both masks empty scores 1.0 everywhere; a zero denominator otherwise scores 0.0.
    pub fn from_counts(c: BinaryCounts) -> Self {
        if c.tp + c.fp + c.fn_ == 0 {
            return Overlap { dsc: 1.0, iou: 1.0, recall: 1.0, precision: 1.0, f2: 1.0 };
        }
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f2 = if precision + recall == 0.0 {
            0.0
        } else {
            5.0 * precision * recall / (4.0 * precision + recall)
        };
        Overlap {
            dsc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            iou: ratio(c.tp, c.tp + c.fp + c.fn_),
            recall,
            precision,
            f2,
        }
    }
}

pub fn dice_iou_prf(pred: &Mask, gt: &Mask) -> Result<Overlap> {
    Ok(Overlap::from_counts(BinaryCounts::from_masks(pred, gt)?))
}

/// `k x k` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { k, counts: rows.concat() })
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape("truth and prediction lengths differ"));
        }
        let mut m = ConfusionMatrix::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::data(format!("class ({truth}, {pred}) outside 0..{}", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(|r| r.to_vec()).collect()
    }
}

/// Accuracy and the multiclass Matthews correlation coefficient.
///
/// MCC is `(c s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))`
/// with `c` the trace, `s` the total, `p_k` predicted and `t_k` true counts;
/// a zero denominator yields 0.
pub fn accuracy_mcc(m: &ConfusionMatrix) -> Result<(f64, f64)> {
    if m.k < 2 {
        return Err(Error::data("MCC needs at least two classes"));
    }
    let s = m.total();
    if s == 0 {
        return Err(Error::data("empty confusion matrix"));
    }
    let k = m.k;
    let c: u64 = (0..k).map(|i| m.get(i, i)).sum();
    let t: Vec<u128> = (0..k).map(|i| (0..k).map(|j| m.get(i, j) as u128).sum()).collect();
    let p: Vec<u128> = (0..k).map(|j| (0..k).map(|i| m.get(i, j) as u128).sum()).collect();
    let s = s as u128;
    let pt: u128 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let num = (c as u128 * s) as f64 - pt as f64;
    let dp = (s * s - p.iter().map(|x| x * x).sum::<u128>()) as f64;
    let dt = (s * s - t.iter().map(|x| x * x).sum::<u128>()) as f64;
    let mcc = if dp == 0.0 || dt == 0.0 { 0.0 } else { num / (dp.sqrt() * dt.sqrt()) };
    Ok((c as f64 / s as f64, mcc.clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, bits: &[u8]) -> Mask {
        Mask::new(h, w, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let z = Tensor::new(vec![1, 3], vec![0.0, -3.0, 2.0]).unwrap();
        assert_eq!(binarize(&z, 0.5).unwrap().bits(), &[true, false, true]);
        assert_eq!(binarize(&z, 0.0).unwrap().count(), 3);
    }

    #[test]
    fn overlap_examples() {
        let a = mask(2, 2, &[1, 1, 0, 1]);
        let o = dice_iou_prf(&a, &a).unwrap();
        assert_eq!(o, Overlap { dsc: 1.0, iou: 1.0, recall: 1.0, precision: 1.0, f2: 1.0 });

        let o = dice_iou_prf(&mask(1, 4, &[1, 1, 0, 0]), &mask(1, 4, &[1, 0, 1, 0])).unwrap();
        assert_eq!(o.dsc, 0.5);
        assert_eq!(o.iou, 1.0 / 3.0);
        assert_eq!((o.recall, o.precision, o.f2), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_conventions() {
        let e = Mask::empty(3, 3);
        assert_eq!(dice_iou_prf(&e, &e).unwrap().dsc, 1.0);
        let full = mask(1, 2, &[1, 1]);
        let none = Mask::empty(1, 2);
        for o in [dice_iou_prf(&none, &full).unwrap(), dice_iou_prf(&full, &none).unwrap()] {
            assert_eq!(o, Overlap { dsc: 0.0, iou: 0.0, recall: 0.0, precision: 0.0, f2: 0.0 });
        }
    }

    #[test]
    fn mask_from_tensor_validates() {
        assert!(Mask::from_tensor(&Tensor::new(vec![1, 2], vec![0.0, 0.5]).unwrap()).is_err());
        let m = Mask::from_tensor(&Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(m.to_tensor().data(), &[1.0, 0.0]);
    }

    #[test]
    fn mcc_examples() {
        let diag = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 9]]).unwrap();
        assert_eq!(accuracy_mcc(&diag).unwrap(), (1.0, 1.0));
        let flat = ConfusionMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(accuracy_mcc(&flat).unwrap(), (0.5, 0.0));
        let constant = ConfusionMatrix::from_rows(&[vec![4, 0], vec![6, 0]]).unwrap();
        assert_eq!(accuracy_mcc(&constant).unwrap().1, 0.0);
        assert!(matches!(accuracy_mcc(&ConfusionMatrix::new(3)), Err(Error::Data(_))));
        assert!(accuracy_mcc(&ConfusionMatrix::from_rows(&[vec![3]]).unwrap()).is_err());
    }

    #[test]
    fn confusion_from_labels() {
        let m = ConfusionMatrix::from_labels(&[0, 1, 2, 2], &[0, 2, 2, 1], 3).unwrap();
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.get(2, 2), 1);
        assert_eq!(m.total(), 4);
        assert!(ConfusionMatrix::from_labels(&[3], &[0], 3).is_err());
    }
}

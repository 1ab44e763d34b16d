use super::{dice_iou_prf, hausdorff, HausdorffVariant, Mask};
use crate::error::Result;
use serde::Serialize;

pub const SEGMENTATION_COLUMNS: [&str; 6] = ["mDSC", "mIoU", "Rec.", "Prec.", "F2", "HD"];
pub const CLASSIFICATION_COLUMNS: [&str; 2] = ["Accuracy", "MCC"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub dsc: f64,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
    /// `INFINITY` when exactly one of the masks is empty.
    pub hd: f64,
}

impl ImageMetrics {
    pub fn compute(pred: &Mask, gt: &Mask, variant: HausdorffVariant) -> Result<Self> {
        let o = dice_iou_prf(pred, gt)?;
        Ok(ImageMetrics {
            dsc: o.dsc,
            iou: o.iou,
            recall: o.recall,
            precision: o.precision,
            f2: o.f2,
            hd: hausdorff(pred, gt, variant)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SegmentationReport {
    pub variant: HausdorffVariant,
    pub images: Vec<ImageMetrics>,
}

/// Means over images. `hd` averages only images where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SegmentationSummary {
    pub mdsc: f64,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
    pub hd: Option<f64>,
    pub hd_undefined: usize,
    pub images: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl SegmentationReport {
    pub fn new(variant: HausdorffVariant) -> Self {
        SegmentationReport { variant, images: Vec::new() }
    }

    pub fn push(&mut self, pred: &Mask, gt: &Mask) -> Result<()> {
        self.images.push(ImageMetrics::compute(pred, gt, self.variant)?);
        Ok(())
    }

    pub fn summary(&self) -> SegmentationSummary {
        let im = &self.images;
        let finite: Vec<f64> = im.iter().map(|m| m.hd).filter(|h| h.is_finite()).collect();
        SegmentationSummary {
            mdsc: mean(im.iter().map(|m| m.dsc)),
            miou: mean(im.iter().map(|m| m.iou)),
            recall: mean(im.iter().map(|m| m.recall)),
            precision: mean(im.iter().map(|m| m.precision)),
            f2: mean(im.iter().map(|m| m.f2)),
            hd: (!finite.is_empty()).then(|| mean(finite.iter().copied())),
            hd_undefined: im.len() - finite.len(),
            images: im.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassificationSummary {
    pub accuracy: f64,
    pub mcc: f64,
}

/// One labelled line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ReportRow {
    Segmentation(String, SegmentationSummary),
    Classification(String, ClassificationSummary),
}

impl ReportRow {
    fn name(&self) -> &str {
        match self {
            ReportRow::Segmentation(n, _) | ReportRow::Classification(n, _) => n,
        }
    }

    fn cells(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.4}");
        match self {
            ReportRow::Segmentation(_, s) => vec![
                f(s.mdsc),
                f(s.miou),
                f(s.recall),
                f(s.precision),
                f(s.f2),
                s.hd.map_or_else(|| "undefined".to_string(), f),
            ],
            ReportRow::Classification(_, c) => vec![f(c.accuracy), f(c.mcc)],
        }
    }

    fn columns(&self) -> &'static [&'static str] {
        match self {
            ReportRow::Segmentation(..) => &SEGMENTATION_COLUMNS,
            ReportRow::Classification(..) => &CLASSIFICATION_COLUMNS,
        }
    }
}

/// CSV with a `model` column followed by the metric columns.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let Some(first) = rows.first() else { return String::new() };
    let mut out = format!("model,{}\n", first.columns().join(","));
    for r in rows {
        out.push_str(&format!("{},{}\n", r.name(), r.cells().join(",")));
    }
    out
}

/// Aligned Markdown table.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let Some(first) = rows.first() else { return String::new() };
    let mut header = vec!["Model".to_string()];
    header.extend(first.columns().iter().map(|c| c.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| std::iter::once(r.name().to_string()).chain(r.cells()).collect())
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|row| row[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(hd: Option<f64>) -> SegmentationSummary {
        SegmentationSummary { mdsc: 0.9, miou: 0.8, recall: 0.85, precision: 0.95, f2: 0.87, hd, hd_undefined: 0, images: 3 }
    }

    #[test]
    fn column_order() {
        let rows = vec![ReportRow::Segmentation("momentum".into(), summary(Some(2.25)))];
        let md = render_markdown(&rows);
        let header = md.lines().next().unwrap();
        let cols: Vec<&str> = header.split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
        assert_eq!(cols, ["Model", "mDSC", "mIoU", "Rec.", "Prec.", "F2", "HD"]);
        assert_eq!(
            render_csv(&rows),
            "model,mDSC,mIoU,Rec.,Prec.,F2,HD\nmomentum,0.9000,0.8000,0.8500,0.9500,0.8700,2.2500\n"
        );
    }

    #[test]
    fn undefined_hd_rendered() {
        let rows = vec![ReportRow::Segmentation("m".into(), summary(None))];
        assert!(render_csv(&rows).ends_with(",undefined\n"));
    }

    #[test]
    fn summary_skips_undefined_hd() {
        let mut r = SegmentationReport::new(HausdorffVariant::Max);
        let full = Mask::new(2, 2, vec![true; 4]).unwrap();
        let empty = Mask::empty(2, 2);
        r.push(&full, &full).unwrap();
        r.push(&empty, &full).unwrap();
        let s = r.summary();
        assert_eq!(s.mdsc, 0.5);
        assert_eq!(s.hd, Some(0.0));
        assert_eq!(s.hd_undefined, 1);
    }
}

//! Overlap, Hausdorff and MCC on hand-made masks and labels.

use momnet::metrics::{
    accuracy_mcc, dice_iou_prf, hausdorff, render_csv, render_markdown, ConfusionMatrix, HausdorffVariant, Mask,
    ReportRow, SegmentationReport,
};

fn square(size: usize, top: usize, left: usize, side: usize) -> Mask {
    let bits = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            (top..top + side).contains(&y) && (left..left + side).contains(&x)
        })
        .collect();
    Mask::new(size, size, bits).unwrap()
}

fn main() -> momnet::Result<()> {
    let gt = square(16, 4, 4, 6);
    let pred = square(16, 5, 6, 6);
    let o = dice_iou_prf(&pred, &gt)?;
    println!("dsc {:.4} iou {:.4} recall {:.4} precision {:.4} f2 {:.4}", o.dsc, o.iou, o.recall, o.precision, o.f2);
    println!(
        "hd {:.4} hd95 {:.4}",
        hausdorff(&pred, &gt, HausdorffVariant::Max)?,
        hausdorff(&pred, &gt, HausdorffVariant::Hd95)?
    );

    let mut report = SegmentationReport::new(HausdorffVariant::Max);
    report.push(&pred, &gt)?;
    report.push(&gt, &gt)?;
    report.push(&Mask::empty(16, 16), &gt)?;
    let rows = vec![ReportRow::Segmentation("example".into(), report.summary())];
    print!("{}", render_markdown(&rows));
    print!("{}", render_csv(&rows));

    let truth = [0, 0, 1, 1, 2, 2, 2, 3];
    let guess = [0, 1, 1, 1, 2, 2, 0, 3];
    let (acc, mcc) = accuracy_mcc(&ConfusionMatrix::from_labels(&truth, &guess, 4)?)?;
    println!("accuracy {acc:.4} mcc {mcc:.4}");
    Ok(())
}

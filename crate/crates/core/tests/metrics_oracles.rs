//! Metrics against brute-force oracles, plus algebraic invariances.

mod common;

use common::oracles::*;

use momnet::metrics::{accuracy_mcc, dice_iou_prf, hausdorff, ConfusionMatrix, HausdorffVariant, Mask};
use momnet::rng::SplitMix64;
use proptest::prelude::*;

#[test]
fn overlap_and_hausdorff_match_oracles() {
    let mut rng = SplitMix64::new(11);
    let mut hd95_interpolated = 0;
    for case in 0..1000 {
        let (p, g) = (random_mask(&mut rng), random_mask(&mut rng));
        let o = dice_iou_prf(&p, &g).unwrap();
        assert_eq!((o.dsc, o.iou, o.recall, o.precision, o.f2), oracle_overlap(&p, &g), "case {case}");
        assert!((o.dsc - 2.0 * o.iou / (1.0 + o.iou)).abs() <= 1e-12);
        assert_eq!(hausdorff(&p, &g, HausdorffVariant::Max).unwrap(), oracle_hd(&p, &g, None), "case {case}");
        let h95 = hausdorff(&p, &g, HausdorffVariant::Hd95).unwrap();
        assert_eq!(h95, oracle_hd(&p, &g, Some(0.95)), "case {case}");
        hd95_interpolated += (h95.fract() != 0.0) as usize;
    }
    println!("{hd95_interpolated} of 1000 HD95 values are non-integral distances");
}

#[test]
fn mcc_matches_covariance_definition() {
    let mut rng = SplitMix64::new(12);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let k = 2 + rng.below(4) as usize;
        let sparse = rng.below(4) == 0;
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| if sparse && rng.below(2) == 0 { 0 } else { rng.below(12) }).collect())
            .collect();
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        if m.total() == 0 {
            continue;
        }
        let (acc, mcc) = accuracy_mcc(&m).unwrap();
        let trace: u64 = (0..k).map(|i| rows[i][i]).sum();
        assert_eq!(acc, trace as f64 / m.total() as f64);
        worst = worst.max((mcc - covariance_mcc(&rows)).abs());
        checked += 1;
    }
    println!("MCC worst deviation {worst:e}");
    assert!(worst <= 1e-12, "{worst:e}");
}

fn mask_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (proptest::collection::vec(any::<bool>(), 36), proptest::collection::vec(any::<bool>(), 36))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn overlap_symmetry_and_duality((a, b) in mask_strategy()) {
        let (p, g) = (Mask::new(6, 6, a).unwrap(), Mask::new(6, 6, b).unwrap());
        let pg = dice_iou_prf(&p, &g).unwrap();
        let gp = dice_iou_prf(&g, &p).unwrap();
        prop_assert_eq!(pg.dsc, gp.dsc);
        prop_assert_eq!(pg.iou, gp.iou);
        prop_assert_eq!(pg.recall, gp.precision);
        prop_assert!((pg.dsc - 2.0 * pg.iou / (1.0 + pg.iou)).abs() <= 1e-12);
    }

    #[test]
    fn hausdorff_symmetry_and_order((a, b) in mask_strategy()) {
        let (p, g) = (Mask::new(6, 6, a).unwrap(), Mask::new(6, 6, b).unwrap());
        let max = hausdorff(&p, &g, HausdorffVariant::Max).unwrap();
        prop_assert_eq!(max, hausdorff(&g, &p, HausdorffVariant::Max).unwrap());
        let h95 = hausdorff(&p, &g, HausdorffVariant::Hd95).unwrap();
        prop_assert!(h95 <= max || (h95.is_infinite() && max.is_infinite()));
    }

    #[test]
    fn ratios_invariant_under_pixel_permutation((a, b) in mask_strategy(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..36).collect();
        SplitMix64::new(seed).shuffle(&mut order);
        let pa: Vec<bool> = order.iter().map(|&i| a[i]).collect();
        let pb: Vec<bool> = order.iter().map(|&i| b[i]).collect();
        let x = dice_iou_prf(&Mask::new(6, 6, a).unwrap(), &Mask::new(6, 6, b).unwrap()).unwrap();
        let y = dice_iou_prf(&Mask::new(6, 6, pa).unwrap(), &Mask::new(6, 6, pb).unwrap()).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn mcc_invariant_under_relabeling(k in 2usize..6, cells in proptest::collection::vec(0u64..15, 36), seed in any::<u64>()) {
        let rows: Vec<Vec<u64>> = (0..k).map(|i| cells[i * k..(i + 1) * k].to_vec()).collect();
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        let mut perm: Vec<usize> = (0..k).collect();
        SplitMix64::new(seed).shuffle(&mut perm);
        let relabeled: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let a = accuracy_mcc(&m).unwrap();
        let b = accuracy_mcc(&ConfusionMatrix::from_rows(&relabeled).unwrap()).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert!((a.1 - b.1).abs() <= 1e-12);
    }
}

//! Boundary Hausdorff distance via an exact Euclidean distance transform.

use super::Mask;
use crate::error::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HausdorffVariant {
    /// Classical symmetric Hausdorff distance.
    #[default]
    Max,
    /// 95th percentile of the pooled directed boundary distances.
    Hd95,
}

/// Foreground pixels with a background 4-neighbour or on the image edge.
pub fn boundary(mask: &Mask) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let mut bits = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            bits[y * w + x] = edge
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
        }
    }
    Mask { height: h, width: w, bits }
}

/// Squared distance from every pixel to the nearest set pixel of `features`
/// (Meijster et al. two-pass transform, integer arithmetic throughout).
fn squared_edt(features: &Mask) -> Vec<i64> {
    let (h, w) = (features.height(), features.width());
    let inf = (h + w) as i64;
    let mut g = vec![0i64; h * w];
    for x in 0..w {
        g[x] = if features.get(0, x) { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] = if features.get(y, x) { 0 } else { 1 + g[(y - 1) * w + x] };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            if g[(y + 1) * w + x] < g[y * w + x] {
                g[y * w + x] = 1 + g[(y + 1) * w + x];
            }
        }
    }
    let mut dt = vec![0i64; h * w];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + row[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + row[u].pow(2) - row[i].pow(2)).div_euclid(2 * (uu - ii))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let next = 1 + sep(s[q as usize], u);
                if next < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = next;
                }
            }
        }
        for u in (0..w).rev() {
            dt[y * w + u] = f(u as i64, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    dt
}

fn directed(from: &Mask, to: &Mask) -> Vec<f64> {
    let dt = squared_edt(to);
    from.bits()
        .iter()
        .zip(&dt)
        .filter(|(&b, _)| b)
        .map(|(_, &d2)| (d2 as f64).sqrt())
        .collect()
}

/// Percentile with linear interpolation between order statistics.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Euclidean boundary Hausdorff distance in pixels.
///
/// Both masks empty gives 0; exactly one empty gives `f64::INFINITY`.
pub fn hausdorff(pred: &Mask, gt: &Mask, variant: HausdorffVariant) -> Result<f64> {
    pred.check_same(gt)?;
    let (a, b) = (boundary(pred), boundary(gt));
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(f64::INFINITY),
        _ => {}
    }
    let mut d = directed(&a, &b);
    d.extend(directed(&b, &a));
    Ok(match variant {
        HausdorffVariant::Max => d.iter().cloned().fold(0.0, f64::max),
        HausdorffVariant::Hd95 => {
            d.sort_by(f64::total_cmp);
            percentile(&d, 0.95)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(h: usize, w: usize, y: usize, x: usize) -> Mask {
        let mut bits = vec![false; h * w];
        bits[y * w + x] = true;
        Mask::new(h, w, bits).unwrap()
    }

    #[test]
    fn identical_masks() {
        let m = Mask::new(3, 3, vec![true, true, false, true, true, false, false, false, false]).unwrap();
        assert_eq!(hausdorff(&m, &m, HausdorffVariant::Max).unwrap(), 0.0);
        assert_eq!(hausdorff(&m, &m, HausdorffVariant::Hd95).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five() {
        let a = single(6, 6, 0, 0);
        let b = single(6, 6, 3, 4);
        assert_eq!(hausdorff(&a, &b, HausdorffVariant::Max).unwrap(), 5.0);
        assert_eq!(hausdorff(&b, &a, HausdorffVariant::Hd95).unwrap(), 5.0);
    }

    #[test]
    fn empty_conventions() {
        let e = Mask::empty(4, 4);
        assert_eq!(hausdorff(&e, &e, HausdorffVariant::Max).unwrap(), 0.0);
        assert!(hausdorff(&e, &single(4, 4, 1, 1), HausdorffVariant::Max).unwrap().is_infinite());
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let m = Mask::new(5, 5, vec![true; 25]).unwrap();
        let b = boundary(&m);
        assert_eq!(b.count(), 16);
        assert!(!b.get(2, 2));
    }

    #[test]
    fn edt_matches_exhaustive_search() {
        let mut rng = crate::rng::SplitMix64::new(4);
        for _ in 0..50 {
            let (h, w) = (1 + rng.below(9) as usize, 1 + rng.below(9) as usize);
            let bits: Vec<bool> = (0..h * w).map(|_| rng.below(5) == 0).collect();
            let m = Mask::new(h, w, bits).unwrap();
            if m.is_empty() {
                continue;
            }
            let dt = squared_edt(&m);
            for y in 0..h {
                for x in 0..w {
                    let best = (0..h * w)
                        .filter(|&i| m.bits()[i])
                        .map(|i| ((i / w) as i64 - y as i64).pow(2) + ((i % w) as i64 - x as i64).pow(2))
                        .min()
                        .unwrap();
                    assert_eq!(dt[y * w + x], best);
                }
            }
        }
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 10.0], 0.95), 9.5);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }
}

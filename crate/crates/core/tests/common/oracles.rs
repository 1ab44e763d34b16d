//! Brute-force reference implementations of the evaluation metrics.

use momnet::metrics::Mask;
use momnet::rng::SplitMix64;

pub type Pixel = (usize, usize);

pub fn random_mask(rng: &mut SplitMix64) -> Mask {
    let density = [0.0, 0.05, 0.2, 0.5, 0.8, 1.0][rng.below(6) as usize];
    Mask::new(8, 8, (0..64).map(|_| rng.next_f64() < density).collect()).unwrap()
}

pub fn pixels(m: &Mask) -> Vec<Pixel> {
    (0..m.height()).flat_map(|y| (0..m.width()).map(move |x| (y, x))).filter(|&(y, x)| m.get(y, x)).collect()
}

/// Foreground pixels that touch the image edge or a background 4-neighbour.
pub fn oracle_boundary(m: &Mask) -> Vec<Pixel> {
    let set: std::collections::HashSet<Pixel> = pixels(m).into_iter().collect();
    let (h, w) = (m.height() as isize, m.width() as isize);
    set.iter()
        .copied()
        .filter(|&(y, x)| {
            [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                ny < 0 || nx < 0 || ny >= h || nx >= w || !set.contains(&(ny as usize, nx as usize))
            })
        })
        .collect()
}

pub fn oracle_directed(from: &[Pixel], to: &[Pixel]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    let (dy, dx) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn oracle_hd(a: &Mask, b: &Mask, q: Option<f64>) -> f64 {
    let (ba, bb) = (oracle_boundary(a), oracle_boundary(b));
    if ba.is_empty() && bb.is_empty() {
        return 0.0;
    }
    if ba.is_empty() || bb.is_empty() {
        return f64::INFINITY;
    }
    let mut d = oracle_directed(&ba, &bb);
    d.extend(oracle_directed(&bb, &ba));
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    match q {
        None => d[d.len() - 1],
        // linear interpolation at rank q (n - 1), written as a + (b - a) t
        Some(q) => {
            let rank = q * (d.len() - 1) as f64;
            let (i, frac) = (rank.floor() as usize, rank.fract());
            if frac == 0.0 {
                d[i]
            } else {
                d[i] + (d[i + 1] - d[i]) * frac
            }
        }
    }
}

pub struct SetCounts {
    pub inter: f64,
    pub union: f64,
    pub pred: f64,
    pub gt: f64,
}

pub fn set_counts(p: &Mask, g: &Mask) -> SetCounts {
    let (pp, gg): (std::collections::HashSet<Pixel>, std::collections::HashSet<Pixel>) =
        (pixels(p).into_iter().collect(), pixels(g).into_iter().collect());
    SetCounts {
        inter: pp.intersection(&gg).count() as f64,
        union: pp.union(&gg).count() as f64,
        pred: pp.len() as f64,
        gt: gg.len() as f64,
    }
}

pub fn ratio_or(num: f64, den: f64, both_empty: bool) -> f64 {
    if both_empty {
        1.0
    } else if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// (dsc, iou, recall, precision, f2) from set counts; both-empty scores 1.
pub fn oracle_overlap(p: &Mask, g: &Mask) -> (f64, f64, f64, f64, f64) {
    let c = set_counts(p, g);
    let empty = c.union == 0.0;
    let dsc = ratio_or(2.0 * c.inter, c.pred + c.gt, empty);
    let iou = ratio_or(c.inter, c.union, empty);
    let recall = ratio_or(c.inter, c.gt, empty);
    let precision = ratio_or(c.inter, c.pred, empty);
    let f2 = if empty {
        1.0
    } else if recall + precision == 0.0 {
        0.0
    } else {
        5.0 * precision * recall / (4.0 * precision + recall)
    };
    (dsc, iou, recall, precision, f2)
}

/// Pearson correlation of the flattened one-hot truth and prediction matrices.
pub fn covariance_mcc(rows: &[Vec<u64>]) -> f64 {
    let k = rows.len();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                xs.push((0..k).map(|c| (c == t) as u8 as f64).collect());
                ys.push((0..k).map(|c| (c == p) as u8 as f64).collect());
            }
        }
    }
    let n = xs.len() as f64;
    let mean = |m: &[Vec<f64>], c: usize| m.iter().map(|r| r[c]).sum::<f64>() / n;
    let cov = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        (0..k)
            .map(|c| {
                let (ma, mb) = (mean(a, c), mean(b, c));
                a.iter().zip(b).map(|(ra, rb)| (ra[c] - ma) * (rb[c] - mb)).sum::<f64>() / n
            })
            .sum()
    };
    let (cxy, cxx, cyy) = (cov(&xs, &ys), cov(&xs, &xs), cov(&ys, &ys));
    if cxx == 0.0 || cyy == 0.0 {
        0.0
    } else {
        cxy / (cxx * cyy).sqrt()
    }
}

//! Self-checks behind `momnet verify`: inversion, the ResNet endpoint,
//! reversible gradients, finite differences, metric and loss oracles.

use crate::error::{Error, Result};
use crate::layers::{build_residual_function, ResidualDescriptor, ResidualFunction};
use crate::loss::{bce_with_logits, cross_entropy, hybrid_loss, soft_dice_loss, HybridWeights, LossValue};
use crate::metrics::{accuracy_mcc, boundary, dice_iou_prf, hausdorff, ConfusionMatrix, HausdorffVariant, Mask};
use crate::momentum::{BackpropMode, MomentumBlock, MomentumChain, MomentumState};
use crate::rng::SplitMix64;
use crate::tensor::{DType, Tensor};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Restrict the inversion and gradient suites to one gamma.
    pub gamma: Option<f64>,
    pub mode: Option<BackpropMode>,
    pub depth: usize,
    pub dtype: DType,
    /// Random cases per property.
    pub cases: usize,
    /// Seeds for the stored-vs-reversible comparison.
    pub seeds: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { gamma: None, mode: None, depth: 10, dtype: DType::F64, cases: 100, seeds: 20, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub results: Vec<CaseResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.passed).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}/{}: {}\n", r.suite, r.name, r.detail));
        }
        out.push_str(&format!("{} checks, {} failed\n", self.results.len(), self.failures()));
        out
    }

    fn push(&mut self, suite: &'static str, name: impl Into<String>, outcome: Result<(bool, String)>) {
        let (passed, detail) = match outcome {
            Ok(r) => r,
            Err(Error::NotInvertible(msg)) => (false, format!("failed precondition: {msg}")),
            Err(e) => (false, format!("error: {e}")),
        };
        self.results.push(CaseResult { suite, name: name.into(), passed, detail });
    }
}

fn within(err: f64, tol: f64) -> (bool, String) {
    (err <= tol, format!("max error {err:.3e} (tolerance {tol:.0e})"))
}

/// Norm-wise relative difference `|a - b|_inf / max(|a|_inf, |b|_inf)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn random_tensor(shape: &[usize], scale: f64, dtype: DType, rng: &mut SplitMix64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.normal()).to_dtype(dtype)
}

fn conv_f(name: &str, channels: usize, dtype: DType, rng: &mut SplitMix64) -> Result<ResidualFunction> {
    let mut f = build_residual_function(&ResidualDescriptor::conv(channels), name, rng)?;
    f.cast(dtype);
    Ok(f)
}

const CONV_STATE: [usize; 4] = [1, 2, 4, 4];

fn chain_of(depth: usize, gamma: f64, mode: BackpropMode, dtype: DType, seed: u64) -> Result<MomentumChain> {
    let mut rng = SplitMix64::new(seed);
    let blocks = (0..depth)
        .map(|b| MomentumBlock::new(gamma, conv_f(&format!("block{b}.f"), CONV_STATE[1], dtype, &mut rng)?, mode))
        .collect::<Result<Vec<_>>>()?;
    MomentumChain::new(blocks)
}

fn default_gammas(opts: &VerifyOptions) -> Vec<f64> {
    opts.gamma.map_or_else(|| vec![0.1, 0.5, 0.9, 1.0], |g| vec![g])
}

fn inversion(opts: &VerifyOptions, report: &mut VerifyReport) {
    let mode = opts.mode.unwrap_or_default();
    let (block_tol, chain_tol): (f64, f64) = match opts.dtype {
        DType::F64 => (1e-10, 1e-8),
        DType::F32 => (1e-4, 1e-3),
    };
    for gamma in default_gammas(opts) {
        let mut rng = SplitMix64::derive(opts.seed, 1);
        let per_block = (|| {
            let mut worst: f64 = 0.0;
            for c in 0..opts.cases {
                let mut block = MomentumBlock::new(gamma, conv_f(&format!("case{c}"), 2, opts.dtype, &mut rng)?, mode)?;
                let s = MomentumState::new(
                    random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng),
                    random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng),
                )?;
                let next = block.forward(&s)?;
                let back = block.inverse(&next)?;
                worst = worst.max(back.max_abs_diff(&s)?);
            }
            Ok(within(worst, block_tol))
        })();
        report.push("inversion", format!("block gamma={gamma}"), per_block);
        // inversion amplifies rounding by about 1/gamma per block
        let growth_tol = chain_tol.max(block_tol * gamma.powi(-(opts.depth as i32)));
        let depth = (|| {
            let mut chain = chain_of(opts.depth, gamma, mode, opts.dtype, opts.seed ^ 0x1D)?;
            let s = MomentumState::new(
                random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng),
                random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng),
            )?;
            let end = chain.forward_state(s.clone(), false)?;
            Ok(within(chain.inverse(&end)?.max_abs_diff(&s)?, growth_tol))
        })();
        report.push("inversion", format!("depth {} gamma={gamma}", opts.depth), depth);
    }
}

fn resnet_endpoint(opts: &VerifyOptions, report: &mut VerifyReport) {
    let mut rng = SplitMix64::derive(opts.seed, 2);
    let outcome = (|| {
        let mut mismatches = 0;
        for c in 0..opts.cases {
            let mut block = MomentumBlock::new(0.0, conv_f(&format!("case{c}"), 2, DType::F64, &mut rng)?, BackpropMode::Stored)?;
            let x = random_tensor(&CONV_STATE, 1.0, DType::F64, &mut rng);
            let v = random_tensor(&CONV_STATE, 10.0, DType::F64, &mut rng);
            let out = block.forward(&MomentumState::new(x.clone(), v)?)?;
            let resnet = x.add(&block.f.eval(&x)?)?;
            mismatches += out.x.data().iter().zip(resnet.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        }
        Ok((mismatches == 0, format!("{mismatches} differing scalars over {} cases", opts.cases)))
    })();
    report.push("resnet_endpoint", "gamma=0 equals x + f(x)", outcome);
}

/// Parameter and input gradients of `<gx, x_N> + <gv, v_N>`.
fn chain_gradients(chain: &mut MomentumChain, x0: &Tensor, gx: &Tensor, gv: &Tensor) -> Result<Vec<f64>> {
    chain.params_mut().into_iter().for_each(|p| p.zero_grad());
    chain.forward(x0, true)?;
    let g = chain.backward(gx, gv)?;
    let mut out = g.x0.into_data();
    for p in chain.params() {
        out.extend_from_slice(p.grad.data());
    }
    Ok(out)
}

fn gradient_match(opts: &VerifyOptions, report: &mut VerifyReport) {
    let gamma = opts.gamma.unwrap_or(0.9);
    let tol = match opts.dtype {
        DType::F64 => 1e-8,
        DType::F32 => 1e-3,
    };
    let outcome = (|| {
        let mut worst: f64 = 0.0;
        for s in 0..opts.seeds as u64 {
            let seed = opts.seed.wrapping_add(s);
            let mut rng = SplitMix64::derive(seed, 3);
            let x0 = random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng);
            let gx = random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng);
            let gv = random_tensor(&CONV_STATE, 1.0, opts.dtype, &mut rng);
            let mut stored = chain_of(opts.depth, gamma, BackpropMode::Stored, opts.dtype, seed)?;
            let mut rev = chain_of(opts.depth, gamma, BackpropMode::Reversible, opts.dtype, seed)?;
            let a = chain_gradients(&mut stored, &x0, &gx, &gv)?;
            let b = chain_gradients(&mut rev, &x0, &gx, &gv)?;
            worst = worst.max(relative_error(&a, &b));
        }
        Ok(within(worst, tol))
    })();
    report.push(
        "gradient_match",
        format!("stored vs reversible, depth {}, gamma={gamma}, {:?}", opts.depth, opts.dtype),
        outcome,
    );
}

/// Central differences of `loss` with respect to every parameter and the input.
fn chain_fd(chain: &mut MomentumChain, x0: &Tensor, gx: &Tensor, gv: &Tensor, h: f64) -> Result<Vec<f64>> {
    let loss = |chain: &mut MomentumChain, x: &Tensor| -> Result<f64> {
        let s = chain.forward(x, false)?;
        Ok(dot(&s.x, gx) + dot(&s.v, gv))
    };
    let mut out = Vec::new();
    for i in 0..x0.len() {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp.data_mut()[i] += h;
        xm.data_mut()[i] -= h;
        out.push((loss(chain, &xp)? - loss(chain, &xm)?) / (2.0 * h));
    }
    let n_params = chain.params().len();
    for p in 0..n_params {
        for i in 0..chain.params()[p].value.len() {
            let orig = chain.params()[p].value.data()[i];
            chain.params_mut()[p].value.data_mut()[i] = orig + h;
            let lp = loss(chain, x0)?;
            chain.params_mut()[p].value.data_mut()[i] = orig - h;
            let lm = loss(chain, x0)?;
            chain.params_mut()[p].value.data_mut()[i] = orig;
            out.push((lp - lm) / (2.0 * h));
        }
    }
    Ok(out)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn finite_differences(opts: &VerifyOptions, report: &mut VerifyReport) {
    // tanh keeps f smooth so central differences are not spoiled by kinks
    let gammas = default_gammas(opts);
    for gamma in gammas {
        for mode in [BackpropMode::Stored, BackpropMode::Reversible] {
            if opts.mode.is_some_and(|m| m != mode) {
                continue;
            }
            let outcome = (|| {
                let mut worst: f64 = 0.0;
                for s in 0..4u64 {
                    let mut rng = SplitMix64::derive(opts.seed.wrapping_add(s), 4);
                    let blocks = (0..opts.depth)
                        .map(|b| {
                            let f = build_residual_function(&ResidualDescriptor::linear(3), &format!("b{b}"), &mut rng)?;
                            MomentumBlock::new(gamma, f, mode)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let mut chain = MomentumChain::new(blocks)?;
                    let x0 = random_tensor(&[2, 3], 1.0, DType::F64, &mut rng);
                    let gx = random_tensor(&[2, 3], 1.0, DType::F64, &mut rng);
                    let gv = random_tensor(&[2, 3], 1.0, DType::F64, &mut rng);
                    let analytic = chain_gradients(&mut chain, &x0, &gx, &gv)?;
                    let numeric = chain_fd(&mut chain, &x0, &gx, &gv, 1e-5)?;
                    worst = worst.max(relative_error(&analytic, &numeric));
                }
                Ok(within(worst, 1e-6))
            })();
            let mode_name = if mode == BackpropMode::Stored { "stored" } else { "reversible" };
            report.push("finite_difference", format!("{mode_name} depth {} gamma={gamma}", opts.depth), outcome);
        }
    }
}

fn random_mask(h: usize, w: usize, rng: &mut SplitMix64) -> Mask {
    let density = rng.uniform(0.0, 1.0);
    Mask::new(h, w, (0..h * w).map(|_| rng.next_f64() < density).collect()).expect("sized")
}

/// Pairwise boundary-distance Hausdorff, no distance transform.
fn brute_hausdorff(a: &Mask, b: &Mask, variant: HausdorffVariant) -> f64 {
    let pts = |m: &Mask| -> Vec<(f64, f64)> {
        let bd = boundary(m);
        (0..m.height())
            .flat_map(|y| (0..m.width()).map(move |x| (y, x)))
            .filter(|&(y, x)| bd.get(y, x))
            .map(|(y, x)| (y as f64, x as f64))
            .collect()
    };
    let (pa, pb) = (pts(a), pts(b));
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let nearest = |p: &(f64, f64), set: &[(f64, f64)]| {
        set.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
    };
    let mut d: Vec<f64> = pa.iter().map(|p| nearest(p, &pb)).chain(pb.iter().map(|p| nearest(p, &pa))).collect();
    d.sort_by(f64::total_cmp);
    match variant {
        HausdorffVariant::Max => *d.last().expect("nonempty"),
        HausdorffVariant::Hd95 => {
            let pos = 0.95 * (d.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
        }
    }
}

fn metric_oracles(opts: &VerifyOptions, report: &mut VerifyReport) {
    let mut rng = SplitMix64::derive(opts.seed, 5);
    let pairs = opts.cases * 10;
    let outcome = (|| {
        let mut bad = 0;
        for _ in 0..pairs {
            let (a, b) = (random_mask(8, 8, &mut rng), random_mask(8, 8, &mut rng));
            let o = dice_iou_prf(&a, &b)?;
            let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count() as f64;
            let (na, nb) = (a.count() as f64, b.count() as f64);
            let union = na + nb - inter;
            let expect_dsc = if na + nb == 0.0 { 1.0 } else { 2.0 * inter / (na + nb) };
            let expect_iou = if union == 0.0 { 1.0 } else { inter / union };
            let consistent = (o.dsc - 2.0 * o.iou / (1.0 + o.iou)).abs() <= 1e-12;
            let hd_ok = [HausdorffVariant::Max, HausdorffVariant::Hd95]
                .iter()
                .all(|&v| hausdorff(&a, &b, v).map(|h| h == brute_hausdorff(&a, &b, v)).unwrap_or(false));
            if o.dsc != expect_dsc || o.iou != expect_iou || !consistent || !hd_ok {
                bad += 1;
            }
        }
        Ok((bad == 0, format!("{bad} of {pairs} random 8x8 pairs disagree with the set/pairwise oracle")))
    })();
    report.push("metric_oracles", "overlap and Hausdorff", outcome);

    let outcome = (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let k = 2 + rng.below(4) as usize;
            let rows: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.below(20)).collect()).collect();
            let m = ConfusionMatrix::from_rows(&rows)?;
            if m.total() == 0 {
                continue;
            }
            let (_, mcc) = accuracy_mcc(&m)?;
            worst = worst.max((mcc - covariance_mcc(&rows)).abs());
        }
        Ok(within(worst, 1e-12))
    })();
    report.push("metric_oracles", "MCC vs covariance definition", outcome);
}

/// `cov(X, Y) / sqrt(cov(X, X) cov(Y, Y))` over one-hot truth/prediction vectors.
fn covariance_mcc(rows: &[Vec<u64>]) -> f64 {
    let k = rows.len();
    let n: f64 = rows.iter().flatten().sum::<u64>() as f64;
    let t: Vec<f64> = rows.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let p: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<u64>() as f64 / n).collect();
    let mut cxy = 0.0;
    for i in 0..k {
        for j in 0..k {
            let frac = rows[i][j] as f64 / n;
            // E[(X_c - t_c)(Y_c - p_c)] summed over classes c
            for c in 0..k {
                let x = if i == c { 1.0 } else { 0.0 } - t[c];
                let y = if j == c { 1.0 } else { 0.0 } - p[c];
                cxy += frac * x * y;
            }
        }
    }
    let var = |m: &[f64]| m.iter().map(|q| q * (1.0 - q)).sum::<f64>();
    let (cxx, cyy) = (var(&t), var(&p));
    if cxx == 0.0 || cyy == 0.0 {
        0.0
    } else {
        cxy / (cxx * cyy).sqrt()
    }
}

fn loss_fd(loss: &dyn Fn(&Tensor) -> Result<LossValue>, z: &Tensor, h: f64) -> Result<f64> {
    let analytic = loss(z)?.grad;
    let numeric: Vec<f64> = (0..z.len())
        .map(|i| {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.data_mut()[i] += h;
            zm.data_mut()[i] -= h;
            Ok((loss(&zp)?.total - loss(&zm)?.total) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    Ok(relative_error(analytic.data(), &numeric))
}

fn loss_gradients(opts: &VerifyOptions, report: &mut VerifyReport) {
    let mut rng = SplitMix64::derive(opts.seed, 6);
    let mut worst = [0.0f64; 4];
    let outcome = (|| -> Result<()> {
        for _ in 0..opts.cases {
            let shape = [1 + rng.below(3) as usize, 1, 1 + rng.below(4) as usize, 1 + rng.below(4) as usize];
            let z = random_tensor(&shape, 2.0, DType::F64, &mut rng);
            let t = Tensor::from_fn(&shape, |_| (rng.next_f64() < 0.4) as u8 as f64);
            worst[0] = worst[0].max(loss_fd(&|z| bce_with_logits(z, &t), &z, 1e-5)?);
            worst[1] = worst[1].max(loss_fd(&|z| soft_dice_loss(z, &t, 1.0), &z, 1e-5)?);
            worst[2] = worst[2].max(loss_fd(&|z| hybrid_loss(z, &t, HybridWeights::default()), &z, 1e-5)?);
            let (b, k) = (1 + rng.below(4) as usize, 2 + rng.below(4) as usize);
            let z = random_tensor(&[b, k], 2.0, DType::F64, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.below(k as u64) as usize).collect();
            worst[3] = worst[3].max(loss_fd(&|z| cross_entropy(z, &labels), &z, 1e-5)?);
        }
        Ok(())
    })();
    for (i, name) in ["bce", "soft_dice", "hybrid", "cross_entropy"].into_iter().enumerate() {
        let r = match &outcome {
            Ok(()) => Ok(within(worst[i], 1e-6)),
            Err(e) => Err(Error::Numeric(e.to_string())),
        };
        report.push("loss_gradients", name, r);
    }
}

pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    inversion(opts, &mut report);
    resnet_endpoint(opts, &mut report);
    gradient_match(opts, &mut report);
    finite_differences(opts, &mut report);
    metric_oracles(opts, &mut report);
    loss_gradients(opts, &mut report);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions { cases: 10, seeds: 3, depth: 4, ..Default::default() }
    }

    #[test]
    fn default_suites_pass() {
        let r = run(&quick());
        assert!(r.all_passed(), "{}", r.render());
    }

    #[test]
    fn reversible_gamma_zero_is_a_failed_precondition() {
        let r = run(&VerifyOptions { gamma: Some(0.0), mode: Some(BackpropMode::Reversible), ..quick() });
        let inv = r.results.iter().find(|c| c.suite == "inversion").unwrap();
        assert!(!inv.passed);
        assert!(inv.detail.starts_with("failed precondition"), "{}", inv.detail);
        assert!(!r.all_passed());
    }

    #[test]
    fn float32_depth_ten_round_trip() {
        let opts = VerifyOptions { gamma: Some(0.9), dtype: DType::F32, ..quick() };
        let mut r = VerifyReport::default();
        inversion(&VerifyOptions { depth: 10, ..opts }, &mut r);
        let depth = r.results.iter().find(|c| c.name == "depth 10 gamma=0.9").unwrap();
        assert!(depth.passed && depth.detail.contains("tolerance 1e-3"), "{}", depth.detail);
    }

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[2.0, 0.0], &[1.0, 0.0]), 0.5);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}

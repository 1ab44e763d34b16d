//! Retained-scalar accounting for one training step.
//!
//! Counts are floats held between the forward pass that produced them and the
//! backward pass that consumes them. The residual-function working set is
//! transient and reported as a peak, not as retention.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::momentum::BackpropMode;
use crate::network::{Network, NetworkDescriptor, Task};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub chain_states: usize,
    pub f_transient_peak: usize,
    pub skips: usize,
    pub transitions: usize,
    pub head: usize,
}

impl MemoryLedger {
    /// Everything retained across the forward/backward boundary (excludes the transient peak).
    pub fn total(&self) -> usize {
        self.chain_states + self.skips + self.transitions + self.head
    }
}

/// Train-mode forward on `input`, tally retention, then run backward with a
/// unit upstream gradient to record the f working-set peak.
///
/// Parameter gradients accumulate exactly as in an ordinary step.
pub fn profile_forward(net: &mut Network, input: &Tensor) -> Result<MemoryLedger> {
    let out = net.forward(input, Mode::Train)?;
    let r = net.retention();
    net.backward(&Tensor::ones(out.shape()))?;
    Ok(MemoryLedger {
        chain_states: r.chain_states,
        f_transient_peak: net.last_f_transient_peak(),
        skips: r.skips,
        transitions: r.transitions,
        head: r.head,
    })
}

/// Scalars in one `(x, v)` component summed over every chain, for a batch of `batch`.
pub fn chain_state_size(desc: &NetworkDescriptor, batch: usize) -> usize {
    let (h, w) = (desc.input_shape[1], desc.input_shape[2]);
    let level = |i: usize, c: usize| batch * c * (h >> i) * (w >> i);
    let mut s: usize = desc.stages.iter().enumerate().map(|(i, st)| level(i, st.channels)).sum();
    if desc.task == Task::Segmentation && desc.decoder_chains {
        s += desc.stages[..desc.stages.len() - 1].iter().enumerate().map(|(i, st)| level(i, st.channels)).sum::<usize>();
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub depth: usize,
    pub mode: BackpropMode,
    pub ledger: MemoryLedger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    /// Per-chain state size `S` (one of x or v) for the profiled batch.
    pub state_size: usize,
    pub rows: Vec<LedgerRow>,
}

pub const CSV_HEADER: &str = "depth,mode,chain_states,f_transient_peak,skips,transitions,total";

fn mode_name(mode: BackpropMode) -> &'static str {
    match mode {
        BackpropMode::Stored => "stored",
        BackpropMode::Reversible => "reversible",
    }
}

impl ModeComparison {
    pub fn rows_for(&self, mode: BackpropMode) -> impl Iterator<Item = &LedgerRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    /// Chain-state retention per block from the first and last depths in `mode`.
    pub fn slope(&self, mode: BackpropMode) -> Option<f64> {
        let rows: Vec<&LedgerRow> = self.rows_for(mode).collect();
        let (a, b) = (rows.first()?, rows.last()?);
        (b.depth != a.depth).then(|| {
            (b.ledger.chain_states as f64 - a.ledger.chain_states as f64) / (b.depth as f64 - a.depth as f64)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let l = &r.ledger;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.depth,
                mode_name(r.mode),
                l.chain_states,
                l.f_transient_peak,
                l.skips,
                l.transitions,
                l.total()
            ));
        }
        out
    }

    /// Inverse of [`to_csv`](Self::to_csv). The head count is recovered from `total`.
    pub fn rows_from_csv(text: &str) -> Result<Vec<LedgerRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::data("memory report header does not match"));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let cells: Vec<&str> = line.split(',').collect();
                let [depth, mode, cs, fp, sk, tr, total] = cells[..] else {
                    return Err(Error::data(format!("memory report row `{line}` has the wrong arity")));
                };
                let n = |s: &str| s.parse::<usize>().map_err(|_| Error::data(format!("`{s}` is not a count")));
                let mode = match mode {
                    "stored" => BackpropMode::Stored,
                    "reversible" => BackpropMode::Reversible,
                    other => return Err(Error::data(format!("unknown mode `{other}`"))),
                };
                let (cs, sk, tr) = (n(cs)?, n(sk)?, n(tr)?);
                let head = n(total)?
                    .checked_sub(cs + sk + tr)
                    .ok_or_else(|| Error::data(format!("total in `{line}` is smaller than its parts")))?;
                Ok(LedgerRow {
                    depth: n(depth)?,
                    mode,
                    ledger: MemoryLedger { chain_states: cs, f_transient_peak: n(fp)?, skips: sk, transitions: tr, head },
                })
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let header: Vec<&str> = CSV_HEADER.split(',').collect();
        let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---:|".repeat(header.len()));
        for line in self.to_csv().lines().skip(1) {
            out.push_str(&format!("| {} |\n", line.replace(',', " | ")));
        }
        out
    }
}

/// Profile every depth in both modes. Each stage gets `depth` blocks.
///
/// `input_shape` is the full `[B, C, H, W]` batch shape.
pub fn compare_modes(desc: &NetworkDescriptor, input_shape: &[usize], depths: &[usize]) -> Result<ModeComparison> {
    let &[batch, ..] = input_shape else {
        return Err(Error::config("input_shape", "must be [B, C, H, W]"));
    };
    if input_shape.len() != 4 || input_shape[1..] != desc.input_shape[..] {
        return Err(Error::config(
            "input_shape",
            format!("batch shape {input_shape:?} does not match descriptor input {:?}", desc.input_shape),
        ));
    }
    let mut rng = SplitMix64::new(0x3E3);
    let input = Tensor::from_fn(input_shape, |_| rng.uniform(0.0, 1.0));
    let mut rows = Vec::new();
    for mode in [BackpropMode::Stored, BackpropMode::Reversible] {
        for &depth in depths {
            let mut d = desc.with_mode(mode);
            d.stages.iter_mut().for_each(|s| s.blocks = depth);
            let mut net = Network::build(&d, 1)?;
            rows.push(LedgerRow { depth, mode, ledger: profile_forward(&mut net, &input)? });
        }
    }
    Ok(ModeComparison { state_size: chain_state_size(desc, batch), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::StageDescriptor;

    fn seg() -> NetworkDescriptor {
        NetworkDescriptor::segmenter(
            [1, 8, 8],
            vec![
                StageDescriptor::new(2, 1, 0.9, BackpropMode::Reversible),
                StageDescriptor::new(3, 1, 0.9, BackpropMode::Reversible),
            ],
        )
    }

    #[test]
    fn stored_linear_reversible_constant() {
        let cmp = compare_modes(&seg(), &[2, 1, 8, 8], &[1, 2, 4, 8]).unwrap();
        let s = cmp.state_size;
        assert_eq!(s, 2 * (2 * 64 + 3 * 16));
        for r in cmp.rows_for(BackpropMode::Stored) {
            assert_eq!(r.ledger.chain_states, 2 * s * r.depth);
        }
        for r in cmp.rows_for(BackpropMode::Reversible) {
            assert_eq!(r.ledger.chain_states, 2 * s);
        }
        assert_eq!(cmp.slope(BackpropMode::Stored), Some(2.0 * s as f64));
        assert_eq!(cmp.slope(BackpropMode::Reversible), Some(0.0));
        let by_depth = |m| cmp.rows_for(m).map(|r| (r.ledger.skips, r.ledger.f_transient_peak)).collect::<Vec<_>>();
        assert_eq!(by_depth(BackpropMode::Stored), by_depth(BackpropMode::Reversible));
    }

    #[test]
    fn csv_round_trip() {
        let cmp = compare_modes(&seg(), &[1, 1, 8, 8], &[1, 3]).unwrap();
        let csv = cmp.to_csv();
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(ModeComparison::rows_from_csv(&csv).unwrap(), cmp.rows);
        assert_eq!(cmp.to_markdown().lines().count(), cmp.rows.len() + 2);
    }

    #[test]
    fn profiling_leaves_gradients_unchanged() {
        let mut rng = SplitMix64::new(4);
        let x = Tensor::from_fn(&[2, 1, 8, 8], |_| rng.normal());
        let mut a = Network::build(&seg(), 9).unwrap();
        let mut b = Network::build(&seg(), 9).unwrap();
        profile_forward(&mut a, &x).unwrap();
        let out = b.forward(&x, Mode::Train).unwrap();
        b.backward(&Tensor::ones(out.shape())).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.grad, q.grad);
        }
    }

    #[test]
    fn batch_shape_must_match() {
        assert!(matches!(compare_modes(&seg(), &[1, 2, 8, 8], &[1]), Err(Error::Config { .. })));
    }
}

//! Momentum residual blocks.
//!
//! One block maps `(x, v)` to
//!
//! ```text
//! v' = gamma * v + (1 - gamma) * f(x)
//! x' = x + v'
//! ```
//!
//! and, for `gamma > 0`, is inverted exactly by `x = x' - v'` followed by
//! `v = (v' - (1 - gamma) * f(x)) / gamma`. A chain in reversible mode keeps
//! only its final state and rebuilds every earlier state during backward.

use crate::error::{Error, Result};
use crate::layers::{Param, ResidualFunction};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackpropMode {
    /// Cache every block input `(x_n, v_n)` during forward.
    Stored,
    /// Cache only the final state; reconstruct the rest by inversion.
    #[default]
    Reversible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub x: Tensor,
    pub v: Tensor,
}

impl MomentumState {
    pub fn new(x: Tensor, v: Tensor) -> Result<Self> {
        if x.shape() != v.shape() {
            return Err(Error::shape(format!(
                "activation {:?} and velocity {:?} differ in shape",
                x.shape(),
                v.shape()
            )));
        }
        Ok(MomentumState { x, v })
    }

    /// State with zero velocity.
    pub fn at_rest(x: Tensor) -> Self {
        let v = Tensor::zeros(x.shape()).to_dtype(x.dtype());
        MomentumState { x, v }
    }

    /// Scalars held by the pair.
    pub fn scalars(&self) -> usize {
        self.x.len() + self.v.len()
    }

    /// `max(|x - other.x|_inf, |v - other.v|_inf)`.
    pub fn max_abs_diff(&self, other: &MomentumState) -> Result<f64> {
        Ok(self.x.max_abs_diff(&other.x)?.max(self.v.max_abs_diff(&other.v)?))
    }

    fn ensure_finite(&self, context: &str) -> Result<()> {
        self.x.ensure_finite(context)?;
        self.v.ensure_finite(context)
    }
}

pub struct MomentumBlock {
    gamma: f64,
    pub f: ResidualFunction,
    mode: BackpropMode,
}

/// Gradients flowing into a block input.
#[derive(Clone, Debug)]
pub struct StateGrad {
    pub x: Tensor,
    pub v: Tensor,
}

impl MomentumBlock {
    pub fn new(gamma: f64, f: ResidualFunction, mode: BackpropMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1], got {gamma}")));
        }
        if mode == BackpropMode::Reversible && gamma == 0.0 {
            return Err(Error::NotInvertible(
                "reversible mode needs gamma > 0 (velocity recovery divides by gamma)".into(),
            ));
        }
        Ok(MomentumBlock { gamma, f, mode })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode(&self) -> BackpropMode {
        self.mode
    }

    fn step(&self, state: &MomentumState, fx: &Tensor) -> Result<MomentumState> {
        let g = self.gamma;
        let v_next = state.v.zip_map(fx, "momentum velocity", |v, f| g * v + (1.0 - g) * f)?;
        let x_next = state.x.add(&v_next)?;
        let out = MomentumState { x: x_next, v: v_next };
        out.ensure_finite("momentum forward")?;
        Ok(out)
    }

    pub fn forward(&mut self, state: &MomentumState) -> Result<MomentumState> {
        if state.x.shape() != state.v.shape() {
            return Err(Error::shape("momentum state with mismatched x and v"));
        }
        let fx = self.f.eval(&state.x)?;
        self.step(state, &fx)
    }

    fn recover(&self, next: &MomentumState, fx: &Tensor) -> Result<Tensor> {
        let g = self.gamma;
        let v = next.v.zip_map(fx, "momentum inverse", |v, f| (v - (1.0 - g) * f) / g)?;
        v.ensure_finite("momentum inverse")?;
        Ok(v)
    }

    fn check_invertible(&self) -> Result<()> {
        if self.gamma == 0.0 {
            return Err(Error::NotInvertible("gamma = 0 block discards its input velocity".into()));
        }
        Ok(())
    }

    /// Recover the block input from its output.
    pub fn inverse(&mut self, next: &MomentumState) -> Result<MomentumState> {
        self.check_invertible()?;
        let x = next.x.sub(&next.v)?;
        let fx = self.f.eval(&x)?;
        let v = self.recover(next, &fx)?;
        Ok(MomentumState { x, v })
    }

    /// Backward through the block at a known input state.
    ///
    /// With `s = g_v' + g_x'`: `g_x = g_x' + (1 - gamma) J_f(x)^T s` and
    /// `g_v = gamma s`. Returns the input gradients and f's transient cache size.
    pub fn backward_at(&mut self, input: &MomentumState, grad: &StateGrad) -> Result<(StateGrad, usize)> {
        self.f.eval_cached(&input.x)?;
        self.backward_cached(grad)
    }

    fn backward_cached(&mut self, grad: &StateGrad) -> Result<(StateGrad, usize)> {
        let g = self.gamma;
        let total = grad.v.add(&grad.x)?;
        let (jt, peak) = self.f.vjp_cached(&total.scale(1.0 - g))?;
        let gx = grad.x.add(&jt)?;
        let gv = total.scale(g);
        Ok((StateGrad { x: gx, v: gv }, peak))
    }

    /// Reconstruct the input from `next` and backprop through it in one
    /// evaluation of f.
    fn inverse_backward(&mut self, next: &MomentumState, grad: &StateGrad) -> Result<(MomentumState, StateGrad, usize)> {
        self.check_invertible()?;
        let x = next.x.sub(&next.v)?;
        let fx = self.f.eval_cached(&x)?;
        let v = match self.recover(next, &fx) {
            Ok(v) => v,
            Err(e) => {
                self.f.vjp_cached(&fx).ok();
                return Err(e);
            }
        };
        let (g, peak) = self.backward_cached(grad)?;
        Ok((MomentumState { x, v }, g, peak))
    }

    pub fn params(&self) -> Vec<&Param> {
        self.f.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.f.params_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VelocityPolicy {
    #[default]
    Zeros,
    Learned,
}

enum Tape {
    Empty,
    Stored(Vec<MomentumState>),
    Final(MomentumState),
}

/// Gradients with respect to the chain input.
#[derive(Clone, Debug)]
pub struct ChainGrads {
    pub x0: Tensor,
    pub v0: Tensor,
    /// Largest number of f-internal scalars cached at once during backward.
    pub f_transient_peak: usize,
}

pub struct MomentumChain {
    blocks: Vec<MomentumBlock>,
    mode: BackpropMode,
    /// Learned initial velocity, one sample's worth, broadcast over the batch.
    v0: Option<Param>,
    tape: Tape,
}

impl MomentumChain {
    pub fn new(blocks: Vec<MomentumBlock>) -> Result<Self> {
        let mode = blocks.first().map(MomentumBlock::mode).unwrap_or_default();
        if blocks.iter().any(|b| b.mode() != mode) {
            return Err(Error::config("blocks", "all blocks of a chain must share one backprop mode"));
        }
        Ok(MomentumChain { blocks, mode, v0: None, tape: Tape::Empty })
    }

    /// Switch to a learned initial velocity of per-sample shape `shape`.
    pub fn with_learned_velocity(mut self, name: &str, shape: &[usize]) -> Self {
        self.v0 = Some(Param::new(format!("{name}.v0"), Tensor::zeros(shape)));
        self
    }

    pub fn velocity_policy(&self) -> VelocityPolicy {
        if self.v0.is_some() {
            VelocityPolicy::Learned
        } else {
            VelocityPolicy::Zeros
        }
    }

    pub fn mode(&self) -> BackpropMode {
        self.mode
    }

    pub fn blocks(&self) -> &[MomentumBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [MomentumBlock] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn initial_velocity(&self, x0: &Tensor) -> Result<Tensor> {
        let Some(p) = &self.v0 else {
            return Ok(Tensor::zeros(x0.shape()).to_dtype(x0.dtype()));
        };
        let per = p.value.len();
        if per == 0 || !x0.len().is_multiple_of(per) || !x0.shape().ends_with(p.value.shape()) {
            return Err(Error::shape(format!(
                "learned velocity {:?} does not broadcast to {:?}",
                p.value.shape(),
                x0.shape()
            )));
        }
        let data: Vec<f64> = p.value.data().iter().copied().cycle().take(x0.len()).collect();
        Ok(Tensor::new(x0.shape().to_vec(), data)?.to_dtype(x0.dtype()))
    }

    /// Fold the blocks over `(x0, v0)`. With `record`, keep what backward needs.
    pub fn forward(&mut self, x0: &Tensor, record: bool) -> Result<MomentumState> {
        let v0 = self.initial_velocity(x0)?;
        self.forward_state(MomentumState { x: x0.clone(), v: v0 }, record)
    }

    pub fn forward_state(&mut self, start: MomentumState, record: bool) -> Result<MomentumState> {
        self.tape = Tape::Empty;
        let mut stored = Vec::new();
        let mut state = start;
        for block in &mut self.blocks {
            let next = block.forward(&state)?;
            if record && self.mode == BackpropMode::Stored {
                stored.push(state);
            }
            state = next;
        }
        if record {
            self.tape = match self.mode {
                BackpropMode::Stored => Tape::Stored(stored),
                BackpropMode::Reversible => Tape::Final(state.clone()),
            };
        }
        Ok(state)
    }

    /// Scalars retained by the chain between forward and backward.
    pub fn retained_scalars(&self) -> usize {
        match &self.tape {
            Tape::Empty => 0,
            Tape::Stored(states) => states.iter().map(MomentumState::scalars).sum(),
            Tape::Final(s) => s.scalars(),
        }
    }

    pub fn has_pending(&self) -> bool {
        !matches!(self.tape, Tape::Empty)
    }

    pub fn backward(&mut self, grad_x: &Tensor, grad_v: &Tensor) -> Result<ChainGrads> {
        let tape = std::mem::replace(&mut self.tape, Tape::Empty);
        let mut grad = StateGrad { x: grad_x.clone(), v: grad_v.clone() };
        let mut peak = 0;
        match tape {
            Tape::Empty => return Err(Error::State("chain backward without a recorded forward".into())),
            Tape::Stored(states) => {
                for (block, state) in self.blocks.iter_mut().zip(&states).rev() {
                    let (g, p) = block.backward_at(state, &grad)?;
                    grad = g;
                    peak = peak.max(p);
                }
            }
            Tape::Final(last) => {
                let mut state = last;
                for block in self.blocks.iter_mut().rev() {
                    let (prev, g, p) = block.inverse_backward(&state, &grad)?;
                    state = prev;
                    grad = g;
                    peak = peak.max(p);
                }
            }
        }
        if let Some(p) = &mut self.v0 {
            let per = p.value.len();
            let mut acc = Tensor::zeros(p.value.shape());
            for chunk in grad.v.data().chunks(per) {
                for (a, g) in acc.data_mut().iter_mut().zip(chunk) {
                    *a += g;
                }
            }
            p.accumulate(&acc)?;
        }
        Ok(ChainGrads { x0: grad.x, v0: grad.v, f_transient_peak: peak })
    }

    /// Run the chain backwards from its output, block by block.
    pub fn inverse(&mut self, last: &MomentumState) -> Result<MomentumState> {
        let mut state = last.clone();
        for block in self.blocks.iter_mut().rev() {
            state = block.inverse(&state)?;
        }
        Ok(state)
    }

    pub fn clear(&mut self) {
        self.tape = Tape::Empty;
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.v0.iter().collect();
        out.extend(self.blocks.iter().flat_map(|b| b.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.v0.iter_mut().collect();
        out.extend(self.blocks.iter_mut().flat_map(|b| b.params_mut()));
        out
    }
}

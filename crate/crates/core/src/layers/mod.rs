//! Differentiable layers and the containers that cache their inputs.
//!
//! A [`Layer`] is stateless apart from its parameters: `forward` is pure and
//! `backward` receives the forward input explicitly, either from a cache
//! ([`Sequential`] in train mode) or reconstructed by the caller.

mod ops;
mod residual;

pub use ops::{sigmoid, Conv2d, GlobalAvgPool, Init, Linear, MaxPool2, Relu, Sigmoid, Tanh, Upsample2};
pub use residual::{build_residual_function, ResidualDescriptor, ResidualFunction};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape()).to_dtype(value.dtype());
        Param { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.grad.add_assign(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub trait Layer: Send + Sync {
    fn kind(&self) -> &'static str;

    fn forward(&self, input: &Tensor) -> Result<Tensor>;

    /// Returns the gradient with respect to `input` and accumulates parameter
    /// gradients. `input` must be the (exact or reconstructed) forward input.
    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CachePolicy {
    #[default]
    CacheInput,
    CacheNone,
}

/// An ordered composition of layers with an input cache for backward.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
    policy: CachePolicy,
    cache: Vec<Tensor>,
    pending: bool,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Sequential { layers, ..Default::default() }
    }

    pub fn with_policy(mut self, policy: CachePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn push(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let caching = mode == Mode::Train && self.policy == CachePolicy::CacheInput;
        if caching {
            self.cache.clear();
        }
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.forward(&x)?;
            if caching {
                self.cache.push(x);
            }
            x = y;
        }
        if caching {
            self.pending = true;
        }
        Ok(x)
    }

    /// Backward through the cached forward; releases the cache.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        if !self.pending {
            return Err(Error::State("backward called without a cached train-mode forward".into()));
        }
        let cache = std::mem::take(&mut self.cache);
        self.pending = false;
        let mut g = upstream.clone();
        for (layer, input) in self.layers.iter_mut().zip(&cache).rev() {
            g = layer.backward(&g, input)?;
        }
        Ok(g)
    }

    /// Recompute the forward from `input`, backprop `upstream`, drop the cache.
    ///
    /// Returns the input gradient and the number of scalars cached while doing so.
    pub fn recompute_backward(&mut self, input: &Tensor, upstream: &Tensor) -> Result<(Tensor, usize)> {
        self.forward_transient(input)?;
        self.finish_transient(upstream)
    }

    /// Train-mode forward that caches regardless of policy; pair with
    /// [`Sequential::finish_transient`].
    pub fn forward_transient(&mut self, input: &Tensor) -> Result<Tensor> {
        let saved = self.policy;
        self.policy = CachePolicy::CacheInput;
        let out = self.forward(input, Mode::Train);
        self.policy = saved;
        if out.is_err() {
            self.clear_cache();
        }
        out
    }

    /// Backward through a transient forward. Returns the input gradient and
    /// the scalar count that was cached.
    pub fn finish_transient(&mut self, upstream: &Tensor) -> Result<(Tensor, usize)> {
        let peak = self.cached_scalars();
        let g = self.backward(upstream);
        self.clear_cache();
        Ok((g?, peak))
    }

    pub fn cached_scalars(&self) -> usize {
        self.cache.iter().map(Tensor::len).sum()
    }

    pub fn has_pending(&self) -> bool {
        self.pending
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
        self.pending = false;
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn infer_mode_leaves_cache_untouched() {
        let mut rng = SplitMix64::new(1);
        let mut seq = Sequential::new(vec![
            Box::new(Linear::new("a", 3, 3, Init::He, &mut rng)),
            Box::new(Relu),
        ]);
        seq.forward(&Tensor::ones(&[2, 3]), Mode::Infer).unwrap();
        assert_eq!(seq.cached_scalars(), 0);
        assert!(!seq.has_pending());
        assert!(matches!(seq.backward(&Tensor::ones(&[2, 3])), Err(Error::State(_))));

        seq.forward(&Tensor::ones(&[2, 3]), Mode::Train).unwrap();
        assert_eq!(seq.cached_scalars(), 12);
        let before = seq.cached_scalars();
        seq.forward(&Tensor::zeros(&[2, 3]), Mode::Infer).unwrap();
        assert_eq!(seq.cached_scalars(), before);
        assert!(seq.has_pending());
    }

    #[test]
    fn cache_none_policy_never_caches() {
        let mut seq = Sequential::new(vec![Box::new(Tanh)]).with_policy(CachePolicy::CacheNone);
        seq.forward(&Tensor::ones(&[4]), Mode::Train).unwrap();
        assert_eq!(seq.cached_scalars(), 0);
        let (g, peak) = seq.recompute_backward(&Tensor::zeros(&[4]), &Tensor::ones(&[4])).unwrap();
        assert_eq!(g, Tensor::ones(&[4]));
        assert_eq!(peak, 4);
        assert_eq!(seq.cached_scalars(), 0);
        assert_eq!(seq.policy(), CachePolicy::CacheNone);
    }
}

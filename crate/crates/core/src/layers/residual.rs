use super::{CachePolicy, Conv2d, Init, Layer, Linear, Mode, Param, Relu, Sequential, Tanh};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{DType, Tensor};
use serde::{Deserialize, Serialize};

/// Which shape-preserving subnetwork to use as the residual function.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualDescriptor {
    /// conv(3x3, C -> hidden) -> ReLU -> conv(3x3, hidden -> C)
    ConvReluConv {
        in_channels: usize,
        #[serde(default)]
        hidden: Option<usize>,
        out_channels: usize,
    },
    /// linear(d -> hidden) -> tanh -> linear(hidden -> d)
    LinearTanhLinear {
        in_width: usize,
        #[serde(default)]
        hidden: Option<usize>,
        out_width: usize,
    },
}

impl ResidualDescriptor {
    pub fn conv(channels: usize) -> Self {
        ResidualDescriptor::ConvReluConv { in_channels: channels, hidden: None, out_channels: channels }
    }

    pub fn linear(width: usize) -> Self {
        ResidualDescriptor::LinearTanhLinear { in_width: width, hidden: None, out_width: width }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let (a, h, b, unit) = match *self {
            ResidualDescriptor::ConvReluConv { in_channels, hidden, out_channels } => {
                (in_channels, hidden.unwrap_or(in_channels), out_channels, "channels")
            }
            ResidualDescriptor::LinearTanhLinear { in_width, hidden, out_width } => {
                (in_width, hidden.unwrap_or(in_width), out_width, "width")
            }
        };
        if a == 0 || h == 0 {
            return Err(Error::config(path, format!("residual {unit} must be positive")));
        }
        if a != b {
            return Err(Error::config(
                path,
                format!("residual function must preserve shape: {a} -> {b} {unit}"),
            ));
        }
        Ok(())
    }
}

/// A shape-preserving composition `f(x, theta)`.
///
/// Train-mode forwards do not cache: any backward recomputes the internal
/// activations from the supplied input and releases them immediately.
pub struct ResidualFunction {
    seq: Sequential,
}

pub fn build_residual_function(desc: &ResidualDescriptor, name: &str, rng: &mut SplitMix64) -> Result<ResidualFunction> {
    desc.validate(name)?;
    let layers: Vec<Box<dyn Layer>> = match *desc {
        ResidualDescriptor::ConvReluConv { in_channels, hidden, .. } => {
            let h = hidden.unwrap_or(in_channels);
            vec![
                Box::new(Conv2d::new(&format!("{name}.conv0"), in_channels, h, 3, Init::He, rng)),
                Box::new(Relu),
                Box::new(Conv2d::new(&format!("{name}.conv1"), h, in_channels, 3, Init::Xavier, rng)),
            ]
        }
        ResidualDescriptor::LinearTanhLinear { in_width, hidden, .. } => {
            let h = hidden.unwrap_or(in_width);
            vec![
                Box::new(Linear::new(&format!("{name}.lin0"), in_width, h, Init::Xavier, rng)),
                Box::new(Tanh),
                Box::new(Linear::new(&format!("{name}.lin1"), h, in_width, Init::Xavier, rng)),
            ]
        }
    };
    Ok(ResidualFunction::from_layers(layers))
}

impl ResidualFunction {
    pub fn from_layers(layers: Vec<Box<dyn Layer>>) -> Self {
        ResidualFunction { seq: Sequential::new(layers).with_policy(CachePolicy::CacheNone) }
    }

    /// The identically-zero function (no parameters).
    pub fn zero() -> Self {
        Self::from_layers(vec![Box::new(ZeroLayer)])
    }

    /// The identity function `f(x) = x`.
    pub fn identity() -> Self {
        Self::from_layers(Vec::new())
    }

    pub fn eval(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.seq.forward(x, Mode::Infer)?;
        if y.shape() != x.shape() {
            return Err(Error::shape(format!(
                "residual function changed shape {:?} -> {:?}",
                x.shape(),
                y.shape()
            )));
        }
        Ok(y)
    }

    /// Vector-Jacobian product `J_f(x)^T upstream`, accumulating parameter
    /// gradients. Also returns the transient scalar count used.
    pub fn vjp(&mut self, x: &Tensor, upstream: &Tensor) -> Result<(Tensor, usize)> {
        self.seq.recompute_backward(x, upstream)
    }

    /// Evaluate and keep the internal activations for one following
    /// [`ResidualFunction::vjp_cached`].
    pub fn eval_cached(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.seq.forward_transient(x)?;
        if y.shape() != x.shape() {
            self.seq.clear_cache();
            return Err(Error::shape("residual function changed shape"));
        }
        Ok(y)
    }

    pub fn vjp_cached(&mut self, upstream: &Tensor) -> Result<(Tensor, usize)> {
        self.seq.finish_transient(upstream)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.seq.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.seq.params_mut()
    }

    pub fn cached_scalars(&self) -> usize {
        self.seq.cached_scalars()
    }

    pub fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.value.fill(0.0);
        }
    }

    /// Re-tag every parameter with `dtype`.
    pub fn cast(&mut self, dtype: DType) {
        for p in self.params_mut() {
            p.value = p.value.to_dtype(dtype);
            p.grad = p.grad.to_dtype(dtype);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ZeroLayer;

impl Layer for ZeroLayer {
    fn kind(&self) -> &'static str {
        "zero"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(input.shape()).to_dtype(input.dtype()))
    }

    fn backward(&mut self, upstream: &Tensor, _input: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(upstream.shape()).to_dtype(upstream.dtype()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_zero_function() {
        let mut rng = SplitMix64::new(0);
        let mut f = build_residual_function(&ResidualDescriptor::conv(4), "f", &mut rng).unwrap();
        f.zero_params();
        let x = Tensor::from_fn(&[4, 8, 8], |i| (i as f64).sin());
        assert_eq!(f.eval(&x).unwrap(), Tensor::zeros(&[4, 8, 8]));
    }

    #[test]
    fn unit_linear_tanh_linear_is_tanh() {
        let layers: Vec<Box<dyn Layer>> = vec![
            Box::new(Linear::from_weights("a", Tensor::ones(&[1, 1]), Tensor::zeros(&[1])).unwrap()),
            Box::new(Tanh),
            Box::new(Linear::from_weights("b", Tensor::ones(&[1, 1]), Tensor::zeros(&[1])).unwrap()),
        ];
        let mut f = ResidualFunction::from_layers(layers);
        assert_eq!(f.eval(&Tensor::vector(vec![0.0])).unwrap().data(), &[0.0]);
        assert_eq!(f.eval(&Tensor::vector(vec![0.7])).unwrap().data(), &[0.7f64.tanh()]);
    }

    #[test]
    fn random_init_preserves_shape() {
        let mut rng = SplitMix64::new(1);
        let mut conv = build_residual_function(&ResidualDescriptor::conv(4), "c", &mut rng).unwrap();
        assert_eq!(conv.eval(&Tensor::ones(&[4, 8, 8])).unwrap().shape(), &[4, 8, 8]);
        let mut lin = build_residual_function(&ResidualDescriptor::linear(16), "l", &mut rng).unwrap();
        assert_eq!(lin.eval(&Tensor::ones(&[16])).unwrap().shape(), &[16]);
    }

    #[test]
    fn mismatched_descriptor_is_config_error() {
        let mut rng = SplitMix64::new(1);
        let desc = ResidualDescriptor::ConvReluConv { in_channels: 4, hidden: None, out_channels: 8 };
        let err = build_residual_function(&desc, "f", &mut rng).err().unwrap();
        assert!(matches!(err, Error::Config { .. }));
        let desc = ResidualDescriptor::LinearTanhLinear { in_width: 0, hidden: None, out_width: 0 };
        assert!(build_residual_function(&desc, "f", &mut rng).is_err());
    }

    #[test]
    fn descriptor_json_shape() {
        let d: ResidualDescriptor =
            serde_json::from_str(r#"{"kind":"conv_relu_conv","in_channels":8,"out_channels":8}"#).unwrap();
        assert_eq!(d, ResidualDescriptor::conv(8));
    }

    proptest! {
        #[test]
        fn every_valid_descriptor_preserves_shape(
            conv in any::<bool>(), width in 1usize..6, hidden in 1usize..6, hw in 1usize..6, batch in 1usize..3, seed in any::<u64>()
        ) {
            let mut rng = SplitMix64::new(seed);
            let (desc, shape) = if conv {
                (ResidualDescriptor::ConvReluConv { in_channels: width, hidden: Some(hidden), out_channels: width },
                 vec![batch, width, hw, hw])
            } else {
                (ResidualDescriptor::LinearTanhLinear { in_width: width, hidden: Some(hidden), out_width: width },
                 vec![batch, width])
            };
            let mut f = build_residual_function(&desc, "f", &mut rng).unwrap();
            let x = Tensor::from_fn(&shape, |_| rng.normal());
            prop_assert_eq!(f.eval(&x).unwrap().shape().to_vec(), shape);
        }
    }
}

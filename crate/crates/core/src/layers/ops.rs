use super::{Layer, Param};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{conv2d_backward_input, conv2d_backward_kernels, conv2d_batched, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// He-uniform, for weights feeding a ReLU.
    He,
    /// Xavier-uniform.
    Xavier,
    Zeros,
}

fn init_weights(shape: &[usize], fan_in: usize, fan_out: usize, init: Init, rng: &mut SplitMix64) -> Tensor {
    let bound = match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        Init::Zeros => 0.0,
    };
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    Tensor::from_fn(shape, |_| rng.uniform(-bound, bound))
}

/// View a rank-3 tensor as a batch of one.
fn as_batch4(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.rank() {
        4 => Ok((x.clone(), false)),
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            Ok((x.reshape(&s)?, true))
        }
        _ => Err(Error::shape(format!("expected C x H x W or B x C x H x W, got {:?}", x.shape()))),
    }
}

fn unbatch(x: Tensor, squeezed: bool) -> Result<Tensor> {
    if squeezed {
        x.reshape(&x.shape()[1..])
    } else {
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Relu;

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.map(|x| if x > 0.0 { x } else { 0.0 }))
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        // subgradient at 0 is 0
        upstream.zip_map(input, "relu backward", |g, x| if x > 0.0 { g } else { 0.0 })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Tanh;

impl Layer for Tanh {
    fn kind(&self) -> &'static str {
        "tanh"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.map(f64::tanh))
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        upstream.zip_map(input, "tanh backward", |g, x| {
            let t = x.tanh();
            g * (1.0 - t * t)
        })
    }
}

/// Logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sigmoid;

impl Layer for Sigmoid {
    fn kind(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.map(sigmoid))
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        upstream.zip_map(input, "sigmoid backward", |g, x| {
            let s = sigmoid(x);
            g * s * (1.0 - s)
        })
    }
}

/// Affine map `y = x W^T + b` on `[d_in]` or `[B, d_in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, init: Init, rng: &mut SplitMix64) -> Self {
        let w = init_weights(&[d_out, d_in], d_in, d_out, init, rng);
        Self::from_weights(name, w, Tensor::zeros(&[d_out])).expect("consistent shapes")
    }

    pub fn from_weights(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "linear weight {:?} / bias {:?} mismatch",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Linear {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
        })
    }

    fn batched(&self, x: &Tensor) -> Result<(Tensor, bool)> {
        let d_in = self.weight.value.shape()[1];
        match x.shape() {
            [d] if *d == d_in => Ok((x.reshape(&[1, d_in])?, true)),
            [_, d] if *d == d_in => Ok((x.clone(), false)),
            s => Err(Error::shape(format!("linear expects [.., {d_in}], got {s:?}"))),
        }
    }
}

impl Layer for Linear {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (x, squeezed) = self.batched(input)?;
        let mut y = x.matmul(&self.weight.value.transpose()?)?;
        let d_out = self.bias.value.len();
        let dtype = y.dtype();
        for row in y.data_mut().chunks_mut(d_out) {
            for (v, b) in row.iter_mut().zip(self.bias.value.data()) {
                *v = dtype.round(*v + b);
            }
        }
        if squeezed {
            y = y.reshape(&[d_out])?;
        }
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        let (x, squeezed) = self.batched(input)?;
        let d_out = self.bias.value.len();
        let g = upstream.reshape(&[x.shape()[0], d_out])?;
        self.weight.accumulate(&g.transpose()?.matmul(&x)?)?;
        let mut gb = Tensor::zeros(&[d_out]);
        for row in g.data().chunks(d_out) {
            for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        self.bias.accumulate(&gb)?;
        let gx = g.matmul(&self.weight.value)?;
        if squeezed {
            gx.reshape(input.shape())
        } else {
            Ok(gx)
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Square-kernel convolution with bias on `[C, H, W]` or `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize, init: Init, rng: &mut SplitMix64) -> Self {
        let fan_in = c_in * kernel * kernel;
        let fan_out = c_out * kernel * kernel;
        let w = init_weights(&[c_out, c_in, kernel, kernel], fan_in, fan_out, init, rng);
        Conv2d {
            weight: Param::new(format!("{name}.weight"), w),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn from_weights(name: &str, weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weight.rank() != 4 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape("conv weight must be rank 4 with one bias per output channel"));
        }
        Ok(Conv2d {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
            stride,
            padding,
        })
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (x, squeezed) = as_batch4(input)?;
        let mut y = conv2d_batched(&x, &self.weight.value, self.stride, self.padding)?;
        let c_out = y.shape()[1];
        let plane = y.shape()[2] * y.shape()[3];
        let dtype = y.dtype();
        let bias = self.bias.value.data();
        if plane > 0 {
            for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
                let b = bias[i % c_out];
                chunk.iter_mut().for_each(|v| *v = dtype.round(*v + b));
            }
        }
        unbatch(y, squeezed)
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        let (x, squeezed) = as_batch4(input)?;
        let (g, _) = as_batch4(upstream)?;
        let gk = conv2d_backward_kernels(&g, &x, self.weight.value.shape(), self.stride, self.padding)?;
        self.weight.accumulate(&gk)?;
        let c_out = g.shape()[1];
        let plane = g.shape()[2] * g.shape()[3];
        let mut gb = Tensor::zeros(&[c_out]);
        if plane > 0 {
            for (i, chunk) in g.data().chunks(plane).enumerate() {
                gb.data_mut()[i % c_out] += chunk.iter().sum::<f64>();
            }
        }
        self.bias.accumulate(&gb)?;
        let gx = conv2d_backward_input(&g, &self.weight.value, x.shape(), self.stride, self.padding)?;
        unbatch(gx, squeezed)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

fn even_planes(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("{what} needs even spatial extents, got {h}x{w}")));
    }
    let planes: usize = s[..s.len() - 2].iter().product();
    Ok((planes, h, w))
}

fn check_spatial(x: &Tensor, what: &str) -> Result<()> {
    if x.rank() < 3 {
        return Err(Error::shape(format!("{what} expects a spatial tensor, got {:?}", x.shape())));
    }
    Ok(())
}

/// 2x2 max-pool with stride 2. Ties route the gradient to the first maximum.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2;

impl MaxPool2 {
    fn argmax(block: [f64; 4]) -> usize {
        let mut best = 0;
        for i in 1..4 {
            if block[i] > block[best] {
                best = i;
            }
        }
        best
    }
}

impl Layer for MaxPool2 {
    fn kind(&self) -> &'static str {
        "maxpool2"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        check_spatial(input, "maxpool")?;
        let (planes, h, w) = even_planes(input, "maxpool")?;
        let (ho, wo) = (h / 2, w / 2);
        let src = input.data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..ho {
                for x in 0..wo {
                    let i = base + 2 * y * w + 2 * x;
                    out.push(src[i].max(src[i + 1]).max(src[i + w]).max(src[i + w + 1]));
                }
            }
        }
        let mut shape = input.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Ok(Tensor::new(shape, out)?.to_dtype(input.dtype()))
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        check_spatial(input, "maxpool")?;
        let (planes, h, w) = even_planes(input, "maxpool")?;
        let (ho, wo) = (h / 2, w / 2);
        if upstream.len() != planes * ho * wo {
            return Err(Error::shape("maxpool upstream gradient has wrong size"));
        }
        let src = input.data();
        let g = upstream.data();
        let mut out = Tensor::zeros(input.shape()).to_dtype(upstream.dtype());
        let dst = out.data_mut();
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..ho {
                for x in 0..wo {
                    let i = base + 2 * y * w + 2 * x;
                    let idx = [i, i + 1, i + w, i + w + 1];
                    let k = Self::argmax(idx.map(|j| src[j]));
                    dst[idx[k]] = g[(p * ho + y) * wo + x];
                }
            }
        }
        Ok(out)
    }
}

/// 2x nearest-neighbour upsampling.
#[derive(Clone, Copy, Debug, Default)]
pub struct Upsample2;

impl Layer for Upsample2 {
    fn kind(&self) -> &'static str {
        "upsample2"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        check_spatial(input, "upsample")?;
        let s = input.shape();
        let r = s.len();
        let (h, w) = (s[r - 2], s[r - 1]);
        let planes: usize = s[..r - 2].iter().product();
        let src = input.data();
        let mut out = Vec::with_capacity(input.len() * 4);
        for p in 0..planes {
            for y in 0..2 * h {
                let row = &src[p * h * w + (y / 2) * w..p * h * w + (y / 2 + 1) * w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        let mut shape = s.to_vec();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        Ok(Tensor::new(shape, out)?.to_dtype(input.dtype()))
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        check_spatial(input, "upsample")?;
        let s = input.shape();
        let r = s.len();
        let (h, w) = (s[r - 2], s[r - 1]);
        if upstream.len() != 4 * input.len() {
            return Err(Error::shape("upsample upstream gradient has wrong size"));
        }
        let planes: usize = s[..r - 2].iter().product();
        let g = upstream.data();
        let mut out = Tensor::zeros(s).to_dtype(upstream.dtype());
        let dst = out.data_mut();
        let w2 = 2 * w;
        for p in 0..planes {
            let gbase = p * 4 * h * w;
            for y in 0..h {
                for x in 0..w {
                    let i = gbase + 2 * y * w2 + 2 * x;
                    dst[p * h * w + y * w + x] = g[i] + g[i + 1] + g[i + w2] + g[i + w2 + 1];
                }
            }
        }
        Ok(out)
    }
}

/// `[B, C, H, W] -> [B, C]` (or `[C, H, W] -> [C]`) spatial mean.
#[derive(Clone, Copy, Debug, Default)]
pub struct GlobalAvgPool;

impl Layer for GlobalAvgPool {
    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        check_spatial(input, "global pool")?;
        let s = input.shape();
        let r = s.len();
        let plane = s[r - 2] * s[r - 1];
        if plane == 0 {
            return Err(Error::shape("global pool over an empty plane"));
        }
        let out: Vec<f64> = input.data().chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect();
        Ok(Tensor::new(s[..r - 2].to_vec(), out)?.to_dtype(input.dtype()))
    }

    fn backward(&mut self, upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
        check_spatial(input, "global pool")?;
        let s = input.shape();
        let r = s.len();
        let plane = s[r - 2] * s[r - 1];
        if upstream.shape() != &s[..r - 2] {
            return Err(Error::shape("global pool upstream gradient has wrong shape"));
        }
        let mut out = Tensor::zeros(s).to_dtype(upstream.dtype());
        for (chunk, &g) in out.data_mut().chunks_mut(plane).zip(upstream.data()) {
            chunk.iter_mut().for_each(|v| *v = g / plane as f64);
        }
        Ok(out)
    }
}

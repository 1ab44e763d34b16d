//! Task networks assembled from momentum chains.
//!
//! Only the chains are reversible. The stem, the pool/upsample transitions,
//! skip links, and the head are ordinary layers that cache their inputs.

use crate::error::{Error, Result};
use crate::layers::{
    build_residual_function, Conv2d, GlobalAvgPool, Init, Layer, Linear, MaxPool2, Mode, Param, Relu,
    ResidualDescriptor, Sequential, Upsample2,
};
use crate::momentum::{BackpropMode, MomentumBlock, MomentumChain, VelocityPolicy};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDescriptor {
    pub channels: usize,
    pub blocks: usize,
    pub gamma: f64,
    #[serde(default)]
    pub mode: BackpropMode,
    #[serde(default)]
    pub velocity: VelocityPolicy,
}

impl StageDescriptor {
    pub fn new(channels: usize, blocks: usize, gamma: f64, mode: BackpropMode) -> Self {
        StageDescriptor { channels, blocks, gamma, mode, velocity: VelocityPolicy::Zeros }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescriptor {
    pub task: Task,
    /// Per-sample `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub stages: Vec<StageDescriptor>,
    /// Number of classes (classification only).
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Put a momentum chain after every decoder fusion as well (segmentation only).
    #[serde(default)]
    pub decoder_chains: bool,
    /// Hidden width of each residual function; defaults to the stage width.
    #[serde(default)]
    pub residual_hidden: Option<usize>,
}

fn default_classes() -> usize {
    2
}

impl NetworkDescriptor {
    pub fn classifier(input_shape: [usize; 3], stages: Vec<StageDescriptor>, classes: usize) -> Self {
        NetworkDescriptor {
            task: Task::Classification,
            input_shape: input_shape.to_vec(),
            stages,
            classes,
            decoder_chains: false,
            residual_hidden: None,
        }
    }

    pub fn segmenter(input_shape: [usize; 3], stages: Vec<StageDescriptor>) -> Self {
        NetworkDescriptor {
            task: Task::Segmentation,
            input_shape: input_shape.to_vec(),
            stages,
            classes: 1,
            decoder_chains: false,
            residual_hidden: None,
        }
    }

    /// Copy with every stage switched to `mode`.
    pub fn with_mode(&self, mode: BackpropMode) -> Self {
        let mut d = self.clone();
        d.stages.iter_mut().for_each(|s| s.mode = mode);
        d
    }

    /// Copy with every stage using `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut d = self.clone();
        d.stages.iter_mut().for_each(|s| s.gamma = gamma);
        d
    }

    /// Per-sample logits shape.
    pub fn output_shape(&self) -> Vec<usize> {
        match self.task {
            Task::Classification => vec![self.classes],
            Task::Segmentation => vec![1, self.input_shape[1], self.input_shape[2]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let &[c, h, w] = &self.input_shape[..] else {
            return Err(Error::config("input_shape", "must be [C, H, W]"));
        };
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("input_shape", "extents must be positive"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("stages", "at least one stage is required"));
        }
        let factor = 1usize << (self.stages.len() - 1);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::config(
                "input_shape",
                format!("{h}x{w} is not divisible by {factor} for {} stages", self.stages.len()),
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 {
                return Err(Error::config(format!("stages[{i}].channels"), "must be positive"));
            }
            if !(0.0..=1.0).contains(&s.gamma) {
                return Err(Error::config(format!("stages[{i}].gamma"), "must lie in [0, 1]"));
            }
            if s.mode == BackpropMode::Reversible && s.gamma == 0.0 && s.blocks > 0 {
                return Err(Error::NotInvertible(format!("stages[{i}]: reversible mode needs gamma > 0")));
            }
        }
        if self.residual_hidden == Some(0) {
            return Err(Error::config("residual_hidden", "must be positive"));
        }
        match self.task {
            Task::Classification if self.classes < 2 => {
                Err(Error::config("classes", "classification needs at least 2 classes"))
            }
            _ => Ok(()),
        }
    }
}

fn build_chain(
    name: &str,
    stage: &StageDescriptor,
    hidden: Option<usize>,
    sample_shape: &[usize],
    rng: &mut SplitMix64,
) -> Result<MomentumChain> {
    let desc = ResidualDescriptor::ConvReluConv {
        in_channels: stage.channels,
        hidden,
        out_channels: stage.channels,
    };
    let blocks = (0..stage.blocks)
        .map(|b| {
            let f = build_residual_function(&desc, &format!("{name}.block{b}.f"), rng)?;
            MomentumBlock::new(stage.gamma, f, stage.mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let chain = MomentumChain::new(blocks)?;
    Ok(match stage.velocity {
        VelocityPolicy::Zeros => chain,
        VelocityPolicy::Learned => chain.with_learned_velocity(name, sample_shape),
    })
}

struct EncoderStage {
    down: Option<Sequential>,
    chain: MomentumChain,
}

struct DecoderStage {
    up: Sequential,
    fuse: Sequential,
    chain: Option<MomentumChain>,
    skip_channels: usize,
}

/// Retained-scalar tallies by category after a train-mode forward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Retention {
    pub chain_states: usize,
    pub skips: usize,
    pub transitions: usize,
    pub head: usize,
}

pub struct Network {
    descriptor: NetworkDescriptor,
    stem: Sequential,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    head: Sequential,
    skips: Vec<Tensor>,
    pending: bool,
    f_transient_peak: usize,
}

impl Network {
    /// Deterministic construction; the same `(descriptor, seed)` yields the same weights.
    pub fn build(descriptor: &NetworkDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let mut rng = SplitMix64::new(seed);
        let [c_in, h, w] = [descriptor.input_shape[0], descriptor.input_shape[1], descriptor.input_shape[2]];
        let stages = &descriptor.stages;
        let hidden = descriptor.residual_hidden;

        let c0 = stages[0].channels;
        let stem = Sequential::new(vec![
            Box::new(Conv2d::new("stem.conv", c_in, c0, 3, Init::He, &mut rng)),
            Box::new(Relu),
        ]);

        let mut encoder = Vec::with_capacity(stages.len());
        for (i, s) in stages.iter().enumerate() {
            let down = (i > 0).then(|| {
                let prev = stages[i - 1].channels;
                Sequential::new(vec![
                    Box::new(MaxPool2) as Box<dyn Layer>,
                    Box::new(Conv2d::new(&format!("enc{i}.down.conv"), prev, s.channels, 3, Init::He, &mut rng)),
                    Box::new(Relu),
                ])
            });
            let shape = [s.channels, h >> i, w >> i];
            let chain = build_chain(&format!("enc{i}.chain"), s, hidden, &shape, &mut rng)?;
            encoder.push(EncoderStage { down, chain });
        }

        let mut decoder = Vec::new();
        let head = match descriptor.task {
            Task::Classification => {
                let c_last = stages.last().map(|s| s.channels).unwrap_or(c0);
                Sequential::new(vec![
                    Box::new(GlobalAvgPool) as Box<dyn Layer>,
                    Box::new(Linear::new("head.linear", c_last, descriptor.classes, Init::Xavier, &mut rng)),
                ])
            }
            Task::Segmentation => {
                for i in (0..stages.len() - 1).rev() {
                    let (deep, skip) = (stages[i + 1].channels, stages[i].channels);
                    let fuse = Sequential::new(vec![
                        Box::new(Conv2d::new(&format!("dec{i}.fuse.conv"), deep + skip, skip, 3, Init::He, &mut rng))
                            as Box<dyn Layer>,
                        Box::new(Relu),
                    ]);
                    let chain = if descriptor.decoder_chains {
                        let shape = [skip, h >> i, w >> i];
                        Some(build_chain(&format!("dec{i}.chain"), &stages[i], hidden, &shape, &mut rng)?)
                    } else {
                        None
                    };
                    decoder.push(DecoderStage {
                        up: Sequential::new(vec![Box::new(Upsample2)]),
                        fuse,
                        chain,
                        skip_channels: skip,
                    });
                }
                Sequential::new(vec![Box::new(Conv2d::new("head.conv", c0, 1, 1, Init::Xavier, &mut rng))])
            }
        };

        let net = Network {
            descriptor: descriptor.clone(),
            stem,
            encoder,
            decoder,
            head,
            skips: Vec::new(),
            pending: false,
            f_transient_peak: 0,
        };
        net.audit_names()?;
        Ok(net)
    }

    pub fn descriptor(&self) -> &NetworkDescriptor {
        &self.descriptor
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() != 4 || batch.shape()[1..] != self.descriptor.input_shape[..] {
            return Err(Error::shape(format!(
                "expected a [B, {}] batch, got {:?}",
                self.descriptor
                    .input_shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Inference-mode logits: `[B, K]` or `[B, 1, H, W]`.
    pub fn predict(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch, Mode::Infer)
    }

    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_batch(batch)?;
        let train = mode == Mode::Train;
        self.clear();
        let mut x = self.stem.forward(batch, mode)?;
        let last = self.encoder.len() - 1;
        let mut skips = Vec::new();
        for (i, stage) in self.encoder.iter_mut().enumerate() {
            if let Some(down) = &mut stage.down {
                x = down.forward(&x, mode)?;
            }
            x = stage.chain.forward(&x, train)?.x;
            if self.descriptor.task == Task::Segmentation && i < last {
                skips.push(x.clone());
            }
        }
        for stage in &mut self.decoder {
            let up = stage.up.forward(&x, mode)?;
            let skip = skips.pop().ok_or_else(|| Error::State("skip link missing".into()))?;
            let cat = Tensor::concat_channels(&up, &skip)?;
            if train {
                self.skips.push(skip);
            }
            x = stage.fuse.forward(&cat, mode)?;
            if let Some(chain) = &mut stage.chain {
                x = chain.forward(&x, train)?.x;
            }
        }
        let out = self.head.forward(&x, mode)?;
        self.pending = train;
        Ok(out)
    }

    /// Backprop `loss_grad` (shaped like the logits) into every parameter.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        if !self.pending {
            return Err(Error::State("network backward without a pending train-mode forward".into()));
        }
        self.pending = false;
        let mut peak = 0;
        let mut g = self.head.backward(loss_grad)?;
        let mut skip_grads = Vec::with_capacity(self.decoder.len());
        self.skips.clear();
        for stage in self.decoder.iter_mut().rev() {
            if let Some(chain) = &mut stage.chain {
                let cg = chain.backward(&g, &Tensor::zeros(g.shape()))?;
                peak = peak.max(cg.f_transient_peak);
                g = cg.x0;
            }
            g = stage.fuse.backward(&g)?;
            let deep = g.shape()[1] - stage.skip_channels;
            let (g_up, g_skip) = g.split_channels(deep)?;
            skip_grads.push(g_skip);
            g = stage.up.backward(&g_up)?;
        }
        // skip_grads is now ordered shallow-to-deep
        for (i, stage) in self.encoder.iter_mut().enumerate().rev() {
            if let Some(sg) = skip_grads.get(i) {
                g.add_assign(sg)?;
            }
            let cg = stage.chain.backward(&g, &Tensor::zeros(g.shape()))?;
            peak = peak.max(cg.f_transient_peak);
            g = cg.x0;
            if let Some(down) = &mut stage.down {
                g = down.backward(&g)?;
            }
        }
        let gx = self.stem.backward(&g)?;
        self.f_transient_peak = peak;
        Ok(gx)
    }

    /// Scalars currently retained for backward, by category.
    pub fn retention(&self) -> Retention {
        let mut r = Retention {
            chain_states: 0,
            skips: self.skips.iter().map(Tensor::len).sum(),
            transitions: self.stem.cached_scalars(),
            head: self.head.cached_scalars(),
        };
        for s in &self.encoder {
            r.chain_states += s.chain.retained_scalars();
            r.transitions += s.down.as_ref().map_or(0, Sequential::cached_scalars);
        }
        for s in &self.decoder {
            r.chain_states += s.chain.as_ref().map_or(0, MomentumChain::retained_scalars);
            r.transitions += s.up.cached_scalars() + s.fuse.cached_scalars();
        }
        r
    }

    /// Largest f-internal working set seen during the last backward.
    pub fn last_f_transient_peak(&self) -> usize {
        self.f_transient_peak
    }

    pub fn chains(&self) -> Vec<&MomentumChain> {
        let mut out: Vec<&MomentumChain> = self.encoder.iter().map(|s| &s.chain).collect();
        out.extend(self.decoder.iter().filter_map(|s| s.chain.as_ref()));
        out
    }

    /// Drop any pending caches.
    pub fn clear(&mut self) {
        self.stem.clear_cache();
        self.head.clear_cache();
        for s in &mut self.encoder {
            s.chain.clear();
            if let Some(d) = &mut s.down {
                d.clear_cache();
            }
        }
        for s in &mut self.decoder {
            s.up.clear_cache();
            s.fuse.clear_cache();
            if let Some(c) = &mut s.chain {
                c.clear();
            }
        }
        self.skips.clear();
        self.pending = false;
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.stem.params();
        for s in &self.encoder {
            if let Some(d) = &s.down {
                out.extend(d.params());
            }
            out.extend(s.chain.params());
        }
        for s in &self.decoder {
            out.extend(s.fuse.params());
            if let Some(c) = &s.chain {
                out.extend(c.params());
            }
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.stem.params_mut();
        for s in &mut self.encoder {
            if let Some(d) = &mut s.down {
                out.extend(d.params_mut());
            }
            out.extend(s.chain.params_mut());
        }
        for s in &mut self.decoder {
            out.extend(s.fuse.params_mut());
            if let Some(c) = &mut s.chain {
                out.extend(c.params_mut());
            }
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Fails if any parameter name is registered twice.
    pub fn audit_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in self.params() {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::config("parameters", format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentum::BackpropMode::{Reversible, Stored};

    fn seg_desc() -> NetworkDescriptor {
        NetworkDescriptor::segmenter(
            [1, 32, 32],
            vec![StageDescriptor::new(4, 1, 0.9, Reversible), StageDescriptor::new(6, 1, 0.9, Reversible)],
        )
    }

    #[test]
    fn classifier_output_shape() {
        let d = NetworkDescriptor::classifier([1, 16, 16], vec![StageDescriptor::new(8, 2, 0.9, Reversible)], 3);
        let mut net = Network::build(&d, 0).unwrap();
        let out = net.predict(&Tensor::zeros(&[2, 1, 16, 16])).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(d.output_shape(), vec![3]);
    }

    #[test]
    fn segmenter_output_shape() {
        let mut net = Network::build(&seg_desc(), 0).unwrap();
        let out = net.predict(&Tensor::ones(&[1, 1, 32, 32])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 32, 32]);
    }

    #[test]
    fn wrong_input_is_shape_error() {
        let mut net = Network::build(&seg_desc(), 0).unwrap();
        assert!(matches!(net.predict(&Tensor::ones(&[1, 2, 32, 32])), Err(Error::Shape(_))));
        assert!(matches!(net.predict(&Tensor::ones(&[1, 32, 32])), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_descriptors() {
        let mut d = seg_desc();
        d.input_shape = vec![1, 31, 32];
        assert!(matches!(Network::build(&d, 0), Err(Error::Config { .. })));
        let mut d = seg_desc();
        d.stages[1].channels = 0;
        match Network::build(&d, 0) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "stages[1].channels"),
            other => panic!("unexpected {:?}", other.err()),
        }
        assert!(matches!(Network::build(&seg_desc().with_gamma(0.0), 0), Err(Error::NotInvertible(_))));
        assert!(Network::build(&seg_desc().with_gamma(0.0).with_mode(Stored), 0).is_ok());
        let d = NetworkDescriptor::classifier([1, 8, 8], vec![StageDescriptor::new(2, 1, 0.5, Stored)], 1);
        assert!(Network::build(&d, 0).is_err());
    }

    #[test]
    fn names_unique_and_count_consistent() {
        let mut d = seg_desc();
        d.decoder_chains = true;
        d.stages[0].velocity = VelocityPolicy::Learned;
        let net = Network::build(&d, 1).unwrap();
        net.audit_names().unwrap();
        let names: HashSet<_> = net.params().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), net.params().len());
        let total: usize = net.params().iter().map(|p| p.value.len()).sum();
        assert_eq!(net.param_count(), total);
        assert!(names.contains("enc0.chain.v0"));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = Network::build(&seg_desc(), 0).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(&[1, 1, 32, 32])), Err(Error::State(_))));
        net.predict(&Tensor::zeros(&[1, 1, 32, 32])).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(&[1, 1, 32, 32])), Err(Error::State(_))));
    }

    #[test]
    fn descriptor_json_round_trip() {
        let d = seg_desc();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<NetworkDescriptor>(&s).unwrap(), d);
        let minimal: NetworkDescriptor = serde_json::from_str(
            r#"{"task":"classification","input_shape":[1,8,8],"classes":4,
                "stages":[{"channels":4,"blocks":2,"gamma":0.9}]}"#,
        )
        .unwrap();
        assert_eq!(minimal.stages[0].mode, Reversible);
    }
}

//! Save a network, load it back and check the predictions agree bit for bit.

use momnet::checkpoint;
use momnet::momentum::BackpropMode;
use momnet::network::{Network, NetworkDescriptor, StageDescriptor};
use momnet::rng::SplitMix64;
use momnet::Tensor;

fn main() -> momnet::Result<()> {
    let desc = NetworkDescriptor::classifier(
        [1, 16, 16],
        vec![StageDescriptor::new(4, 2, 0.9, BackpropMode::Reversible), StageDescriptor::new(8, 2, 0.5, BackpropMode::Stored)],
        3,
    );
    let mut net = Network::build(&desc, 11)?;
    let dir = std::env::temp_dir().join("momnet-checkpoint");
    let manifest = checkpoint::save(&net, &dir)?;
    println!("{} tensors, {} parameters written to {}", manifest.tensors.len(), net.param_count(), dir.display());

    let mut loaded = checkpoint::load(&dir)?;
    let mut rng = SplitMix64::new(3);
    let x = Tensor::from_fn(&[2, 1, 16, 16], |_| rng.next_f64());
    let (a, b) = (net.predict(&x)?, loaded.predict(&x)?);
    let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    println!("logits identical after reload: {same}");
    Ok(())
}

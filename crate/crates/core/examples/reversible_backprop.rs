//! Gradients from a reversible chain against the same chain with cached activations.

use momnet::layers::{build_residual_function, ResidualDescriptor};
use momnet::momentum::{BackpropMode, MomentumBlock, MomentumChain};
use momnet::rng::SplitMix64;
use momnet::verify::relative_error;
use momnet::Tensor;

fn chain(mode: BackpropMode, depth: usize) -> momnet::Result<MomentumChain> {
    let mut rng = SplitMix64::new(42);
    let blocks = (0..depth)
        .map(|b| {
            let f = build_residual_function(&ResidualDescriptor::conv(3), &format!("block{b}.f"), &mut rng)?;
            MomentumBlock::new(0.9, f, mode)
        })
        .collect::<momnet::Result<Vec<_>>>()?;
    MomentumChain::new(blocks)
}

fn main() -> momnet::Result<()> {
    let shape = [2, 3, 8, 8];
    let mut rng = SplitMix64::new(7);
    let x0 = Tensor::from_fn(&shape, |_| rng.normal());
    let gx = Tensor::from_fn(&shape, |_| rng.normal());
    let gv = Tensor::from_fn(&shape, |_| rng.normal());

    let mut grads = Vec::new();
    for mode in [BackpropMode::Stored, BackpropMode::Reversible] {
        let mut c = chain(mode, 10)?;
        c.forward(&x0, true)?;
        println!("{mode:?}: {} scalars retained after forward", c.retained_scalars());
        let g = c.backward(&gx, &gv)?;
        let mut flat = g.x0.into_data();
        for p in c.params() {
            flat.extend_from_slice(p.grad.data());
        }
        grads.push(flat);
    }
    println!("{} gradient entries, relative difference {:.3e}", grads[0].len(), relative_error(&grads[0], &grads[1]));
    Ok(())
}

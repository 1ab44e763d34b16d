//! Run a momentum chain forward, then rebuild its input from the output alone.
//!
//! Prints the round-trip error per gamma and chain depth. Small gammas lose
//! accuracy quickly with depth because every inverted block divides by gamma.

use momnet::layers::{build_residual_function, ResidualDescriptor};
use momnet::momentum::{BackpropMode, MomentumBlock, MomentumChain, MomentumState};
use momnet::rng::SplitMix64;
use momnet::Tensor;

fn main() -> momnet::Result<()> {
    let shape = [1, 4, 8, 8];
    println!("{:>6} {:>6} {:>12}", "gamma", "depth", "max error");
    for gamma in [0.1, 0.5, 0.9, 1.0] {
        for depth in [1, 4, 10] {
            let mut rng = SplitMix64::new(1);
            let blocks = (0..depth)
                .map(|b| {
                    let f = build_residual_function(&ResidualDescriptor::conv(shape[1]), &format!("b{b}"), &mut rng)?;
                    MomentumBlock::new(gamma, f, BackpropMode::Reversible)
                })
                .collect::<momnet::Result<Vec<_>>>()?;
            let mut chain = MomentumChain::new(blocks)?;
            let start = MomentumState::new(
                Tensor::from_fn(&shape, |_| rng.normal()),
                Tensor::from_fn(&shape, |_| rng.normal()),
            )?;
            let end = chain.forward_state(start.clone(), false)?;
            let back = chain.inverse(&end)?;
            println!("{gamma:>6} {depth:>6} {:>12.3e}", back.max_abs_diff(&start)?);
        }
    }

    // gamma = 0 is a plain residual block and has no inverse
    let f = build_residual_function(&ResidualDescriptor::conv(shape[1]), "f", &mut SplitMix64::new(2))?;
    if let Err(e) = MomentumBlock::new(0.0, f, BackpropMode::Reversible) {
        println!("gamma=0 reversible: {e}");
    }
    Ok(())
}

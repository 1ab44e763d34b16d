//! Retained-activation tally of a small segmenter as the chains get deeper.

use momnet::memprofile::compare_modes;
use momnet::momentum::BackpropMode;
use momnet::network::{NetworkDescriptor, StageDescriptor};

fn main() -> momnet::Result<()> {
    let desc = NetworkDescriptor::segmenter(
        [1, 32, 32],
        vec![
            StageDescriptor::new(8, 1, 0.9, BackpropMode::Reversible),
            StageDescriptor::new(16, 1, 0.9, BackpropMode::Reversible),
        ],
    );
    let cmp = compare_modes(&desc, &[4, 1, 32, 32], &[1, 2, 4, 8, 16])?;
    print!("{}", cmp.to_markdown());
    for mode in [BackpropMode::Stored, BackpropMode::Reversible] {
        println!("{mode:?}: {:?} scalars per block (S = {})", cmp.slope(mode).unwrap_or(0.0), cmp.state_size);
    }
    Ok(())
}

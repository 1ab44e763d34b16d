//! Train the momentum segmenter and a gamma = 0 control on synthetic shapes.
//!
//! `cargo run --release --example segment_shapes -- [epochs]` (default 10).

use momnet::cli::cmd_train;
use momnet::config::RunConfig;
use momnet::metrics::render_markdown;
use momnet::momentum::BackpropMode;

fn main() -> momnet::Result<()> {
    let epochs = std::env::args().nth(1).map_or(10, |a| a.parse().expect("epochs must be an integer"));
    let out = std::env::temp_dir().join("momnet-segment-shapes");
    let mut rows = Vec::new();
    for (name, gamma, mode) in [("momentum", 0.9, BackpropMode::Reversible), ("resnet", 0.0, BackpropMode::Stored)] {
        let mut cfg = RunConfig::segmentation_default();
        cfg.network = cfg.network.with_gamma(gamma).with_mode(mode);
        cfg.train.epochs = epochs;
        let report = cmd_train(&cfg, &out.join(name))?;
        let last = report.outcome.history.last().map(|r| r.val_metric).unwrap_or(f64::NAN);
        println!("{name}: best epoch {:?}, last val mDSC {last:.4}", report.outcome.best_epoch);
        rows.push(report.test);
    }
    print!("{}", render_markdown(&rows));
    println!("outputs under {}", out.display());
    Ok(())
}

//! Four-class momentum classifier on oriented blob images.

use momnet::cli::cmd_train;
use momnet::config::RunConfig;
use momnet::metrics::render_markdown;

fn main() -> momnet::Result<()> {
    let mut cfg = RunConfig::classification_default();
    cfg.train.adam.lr = 1e-3;
    cfg.train.epochs = std::env::args().nth(1).map_or(10, |a| a.parse().expect("epochs must be an integer"));
    let out = std::env::temp_dir().join("momnet-classify-blobs");
    let report = cmd_train(&cfg, &out)?;
    for r in &report.outcome.history {
        println!("epoch {:>3}  train {:.4}  val {:.4}  acc {:.4}", r.epoch, r.train_loss, r.val_loss, r.val_metric);
    }
    print!("{}", render_markdown(std::slice::from_ref(&report.test)));
    Ok(())
}

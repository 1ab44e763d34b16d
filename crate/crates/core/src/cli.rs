//! Subcommand implementations shared by the `momnet` binary and the tests.

use crate::checkpoint;
use crate::config::{DataSource, EvalConfig, RunConfig};
use crate::data::{split, Dataset, SplitManifest, Target};
use crate::error::{Error, Result};
use crate::memprofile::{compare_modes, ModeComparison};
use crate::metrics::{render_csv, render_markdown, Mask, ReportRow, SegmentationReport};
use crate::momentum::BackpropMode;
use crate::network::{Network, NetworkDescriptor, Task};
use crate::trainer::{evaluate_classification, evaluate_segmentation, train, TrainOutcome};
use crate::verify::{self, VerifyOptions, VerifyReport};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Short table label, e.g. `momentum(g=0.9,reversible)` or `resnet(g=0)`.
pub fn model_label(desc: &NetworkDescriptor) -> String {
    let s = &desc.stages[0];
    if desc.stages.iter().all(|s| s.gamma == 0.0) {
        return "resnet(g=0)".to_string();
    }
    let mode = match s.mode {
        BackpropMode::Stored => "stored",
        BackpropMode::Reversible => "reversible",
    };
    format!("momentum(g={},{mode})", s.gamma)
}

fn check_dataset(data: &Dataset, desc: &NetworkDescriptor) -> Result<()> {
    for s in &data.samples {
        if s.image.shape() != desc.input_shape.as_slice() {
            return Err(Error::config(
                "data",
                format!("sample `{}` is {:?}, the network expects {:?}", s.id, s.image.shape(), desc.input_shape),
            ));
        }
        match (&s.target, desc.task) {
            (Target::Mask(_), Task::Segmentation) => {}
            (Target::Class(c), Task::Classification) if *c < desc.classes => {}
            (Target::Class(c), Task::Classification) => {
                return Err(Error::data(format!("sample `{}` has label {c} but the network has {} classes", s.id, desc.classes)))
            }
            _ => return Err(Error::config("data", format!("sample `{}` does not match the {:?} task", s.id, desc.task))),
        }
    }
    Ok(())
}

pub fn write_report(rows: &[ReportRow], out: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{stem}.csv")), render_csv(rows))?;
    fs::write(out.join(format!("{stem}.md")), render_markdown(rows))?;
    Ok(())
}

fn evaluate(net: &mut Network, data: &Dataset, eval: &EvalConfig, label: String) -> Result<ReportRow> {
    Ok(match net.descriptor().task {
        Task::Segmentation => {
            let r = evaluate_segmentation(net, data, eval.threshold, eval.hd_variant, 16)?;
            ReportRow::Segmentation(label, r.summary())
        }
        Task::Classification => ReportRow::Classification(label, evaluate_classification(net, data, 32)?.1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub split: SplitManifest,
    /// Held-out test metrics of the restored best parameters.
    pub test: ReportRow,
}

/// Train from `cfg`, writing the resolved config, split, log, best checkpoint and test metrics under `out`.
///
/// The checkpoint on disk is the best seen so far at every point, so an
/// aborted run leaves the last good parameters behind.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json()?)?;
    let data = cfg.data.load()?;
    check_dataset(&data, &cfg.network)?;
    let manifest = split(&data.ids(), cfg.split_seed)?;
    fs::write(out.join(SPLIT_FILE), serde_json::to_string_pretty(&manifest)?)?;
    let (train_set, val_set, test_set) =
        (data.select(&manifest.train)?, data.select(&manifest.val)?, data.select(&manifest.test)?);

    let mut net = Network::build(&cfg.network, cfg.seed)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    checkpoint::save(&net, &ckpt)?;
    let log_path = out.join(LOG_FILE);
    let mut log = String::from("epoch,train_loss,val_loss,val_metric\n");
    fs::write(&log_path, &log)?;
    let outcome = train(&mut net, &train_set, &val_set, &cfg.train_config(), |r, improved, net| {
        log.push_str(&format!("{},{:.17e},{:.17e},{:.17e}\n", r.epoch, r.train_loss, r.val_loss, r.val_metric));
        fs::write(&log_path, &log)?;
        if improved {
            checkpoint::save(net, &ckpt)?;
        }
        Ok(())
    })?;
    let test = evaluate(&mut net, &test_set, &cfg.eval, model_label(&cfg.network))?;
    write_report(std::slice::from_ref(&test), out, "metrics")?;
    Ok(TrainReport { outcome, split: manifest, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Subset {
    All,
    Train,
    Val,
    Test,
}

/// Fixed predictors for checking the reporting path without a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    /// Predict the ground-truth mask.
    GroundTruth,
    /// Predict an all-background mask.
    Background,
}

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub checkpoint: Option<PathBuf>,
    pub data: DataSource,
    pub subset: Subset,
    pub split_seed: u64,
    pub baseline: Option<Baseline>,
    pub eval: EvalConfig,
    pub label: Option<String>,
}

fn pick_subset(data: Dataset, subset: Subset, seed: u64) -> Result<Dataset> {
    if subset == Subset::All {
        return Ok(data);
    }
    let m = split(&data.ids(), seed)?;
    data.select(match subset {
        Subset::Train => &m.train,
        Subset::Val => &m.val,
        _ => &m.test,
    })
}

pub fn cmd_eval(req: &EvalRequest) -> Result<ReportRow> {
    let data = pick_subset(req.data.load()?, req.subset, req.split_seed)?;
    if let Some(b) = req.baseline {
        let mut report = SegmentationReport::new(req.eval.hd_variant);
        for s in &data.samples {
            let gt = Mask::from_tensor(s.mask().ok_or_else(|| Error::config("baseline", "baselines need masks"))?)?;
            let pred = match b {
                Baseline::GroundTruth => gt.clone(),
                Baseline::Background => Mask::empty(gt.height(), gt.width()),
            };
            report.push(&pred, &gt)?;
        }
        let label = req.label.clone().unwrap_or_else(|| format!("{b:?}").to_lowercase());
        return Ok(ReportRow::Segmentation(label, report.summary()));
    }
    let dir = req.checkpoint.as_ref().ok_or_else(|| Error::config("checkpoint", "required unless --baseline is given"))?;
    let mut net = checkpoint::load(dir)?;
    check_dataset(&data, net.descriptor())?;
    let label = req.label.clone().unwrap_or_else(|| model_label(net.descriptor()));
    evaluate(&mut net, &data, &req.eval, label)
}

pub fn cmd_verify(opts: &VerifyOptions) -> VerifyReport {
    verify::run(opts)
}

pub fn cmd_memprofile(desc: &NetworkDescriptor, batch: usize, depths: &[usize], out: Option<&Path>) -> Result<ModeComparison> {
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::config("depths", "need at least one positive depth"));
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(&desc.input_shape);
    // the profile runs both modes, so gamma=0 descriptors are rejected up front
    let cmp = compare_modes(desc, &shape, depths)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("memprofile.csv"), cmp.to_csv())?;
        fs::write(dir.join("memprofile.md"), cmp.to_markdown())?;
    }
    Ok(cmp)
}

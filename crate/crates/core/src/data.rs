//! Synthetic datasets, on-disk sample directories, and train/val/test splits.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{read_mrt1, write_mrt1, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Binary `[1, H, W]` mask.
    Mask(Tensor),
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[C, H, W]` with values in `[0, 1]`.
    pub image: Tensor,
    pub target: Target,
}

impl Sample {
    pub fn mask(&self) -> Option<&Tensor> {
        match &self.target {
            Target::Mask(m) => Some(m),
            Target::Class(_) => None,
        }
    }

    pub fn label(&self) -> Option<usize> {
        match self.target {
            Target::Class(c) => Some(c),
            Target::Mask(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

/// Stacked inputs and targets for one mini-batch.
pub struct Batch {
    pub images: Tensor,
    pub masks: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Samples whose ids appear in `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Dataset> {
        let index: std::collections::HashMap<&str, &Sample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let samples = ids
            .iter()
            .map(|id| index.get(id.as_str()).map(|s| (*s).clone()).ok_or_else(|| Error::data(format!("unknown id `{id}`"))))
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let picked: Vec<&Sample> = indices
            .iter()
            .map(|&i| self.samples.get(i).ok_or_else(|| Error::data(format!("sample {i} out of range"))))
            .collect::<Result<_>>()?;
        let images = Tensor::stack(&picked.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let masks: Option<Vec<Tensor>> = picked.iter().map(|s| s.mask().cloned()).collect();
        let masks = match masks {
            Some(m) if !m.is_empty() => Some(Tensor::stack(&m)?),
            _ => None,
        };
        let labels = picked.iter().filter_map(|s| s.label()).collect();
        Ok(Batch { images, masks, labels })
    }

    /// Largest class id + 1 (classification only).
    pub fn num_classes(&self) -> usize {
        self.samples.iter().filter_map(Sample::label).max().map_or(0, |m| m + 1)
    }
}

// ---------------------------------------------------------------------------
// generators

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rect { cy: f64, cx: f64, hy: f64, hx: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { cy, cx, hy, hx } => (y - cy).abs() <= hy && (x - cx).abs() <= hx,
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Images with 1-3 bright anti-aliased ellipses/rectangles over a textured,
/// noisy background; the mask is the union of the shape interiors.
pub fn gen_shapes_seg(n: usize, hw: usize, seed: u64) -> Result<Dataset> {
    if hw < 16 {
        return Err(Error::config("hw", format!("shape images need hw >= 16, got {hw}")));
    }
    let size = hw as f64;
    let samples = (0..n)
        .map(|i| {
            let mut rng = SplitMix64::derive(seed, i as u64);
            let count = 1 + rng.below(3) as usize;
            let shapes: Vec<(Shape, f64)> = (0..count)
                .map(|_| {
                    let cy = rng.uniform(0.2, 0.8) * size;
                    let cx = rng.uniform(0.2, 0.8) * size;
                    let a = rng.uniform(0.08, 0.2) * size;
                    let b = rng.uniform(0.08, 0.2) * size;
                    let shape = if rng.below(2) == 0 {
                        Shape::Ellipse { cy, cx, ry: a, rx: b, angle: rng.uniform(0.0, std::f64::consts::PI) }
                    } else {
                        Shape::Rect { cy, cx, hy: a, hx: b }
                    };
                    (shape, rng.uniform(0.6, 0.9))
                })
                .collect();
            let (fy, fx) = (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8));
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            let mut image = vec![0.0; hw * hw];
            let mut mask = vec![0.0; hw * hw];
            for y in 0..hw {
                for x in 0..hw {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let mut value = 0.25 + 0.08 * (fy * py + fx * px + phase).sin() + 0.04 * rng.normal();
                    for (shape, intensity) in &shapes {
                        let mut hits = 0;
                        for sy in 0..SUPERSAMPLE {
                            for sx in 0..SUPERSAMPLE {
                                let oy = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                                let ox = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                                hits += shape.contains(oy, ox) as usize;
                            }
                        }
                        let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                        value = value * (1.0 - cover) + intensity * cover;
                        if shape.contains(py, px) {
                            mask[y * hw + x] = 1.0;
                        }
                    }
                    image[y * hw + x] = (value + 0.03 * rng.normal()).clamp(0.0, 1.0);
                }
            }
            Ok(Sample {
                id: format!("shape{i:05}"),
                image: Tensor::new(vec![1, hw, hw], image)?,
                target: Target::Mask(Tensor::new(vec![1, hw, hw], mask)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

/// Class `c` shows a grating at angle `pi c / k` plus a soft blob placed on
/// a class-specific bearing, both jittered, over Gaussian noise.
pub fn gen_blobs_cls(n: usize, k: usize, hw: usize, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if hw < 8 {
        return Err(Error::config("hw", "blob images need hw >= 8"));
    }
    let size = hw as f64;
    let samples = (0..n)
        .map(|i| {
            let label = i % k;
            let mut rng = SplitMix64::derive(seed ^ 0xB10B, i as u64);
            let theta = std::f64::consts::PI * label as f64 / k as f64 + rng.uniform(-0.12, 0.12);
            let freq = rng.uniform(0.9, 1.3);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            let amp = rng.uniform(0.12, 0.22);
            let bearing = std::f64::consts::TAU * label as f64 / k as f64 + rng.uniform(-0.6, 0.6);
            let radius = rng.uniform(0.15, 0.3) * size;
            let by = 0.5 * size + radius * bearing.sin();
            let bx = 0.5 * size + radius * bearing.cos();
            let spread = rng.uniform(0.08, 0.14) * size;
            let blob = rng.uniform(0.15, 0.3);
            let (s, c) = theta.sin_cos();
            let mut image = Vec::with_capacity(hw * hw);
            for y in 0..hw {
                for x in 0..hw {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let grating = amp * (freq * (c * px + s * py) + phase).sin();
                    let d2 = (py - by).powi(2) + (px - bx).powi(2);
                    let bump = blob * (-d2 / (2.0 * spread * spread)).exp();
                    image.push((0.4 + grating + bump + 0.1 * rng.normal()).clamp(0.0, 1.0));
                }
            }
            Ok(Sample {
                id: format!("blob{i:05}"),
                image: Tensor::new(vec![1, hw, hw], image)?,
                target: Target::Class(label),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

// ---------------------------------------------------------------------------
// splits

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle, then cut at floor(0.8 n) and floor(0.8 n) + floor(0.1 n).
pub fn split(ids: &[String], seed: u64) -> Result<SplitManifest> {
    let n = ids.len();
    if n < 10 {
        return Err(Error::data(format!("need at least 10 samples to split, got {n}")));
    }
    let mut order = ids.to_vec();
    SplitMix64::new(seed).shuffle(&mut order);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitManifest { seed, train: order, val, test })
}

// ---------------------------------------------------------------------------
// sample directories

const IMAGE_SUFFIX: &str = ".image.mrt";
const MASK_SUFFIX: &str = ".mask.mrt";
const LABELS_FILE: &str = "labels.csv";

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_mrt1(t, BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    read_mrt1(BufReader::new(fs::File::open(path)?))
}

/// Write `<id>.image.mrt` plus `<id>.mask.mrt` or a `labels.csv`.
pub fn save_sample_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut labels = String::from("id,label\n");
    let mut any_label = false;
    for s in &dataset.samples {
        write_tensor(&dir.join(format!("{}{IMAGE_SUFFIX}", s.id)), &s.image)?;
        match &s.target {
            Target::Mask(m) => write_tensor(&dir.join(format!("{}{MASK_SUFFIX}", s.id)), m)?,
            Target::Class(c) => {
                any_label = true;
                labels.push_str(&format!("{},{c}\n", s.id));
            }
        }
    }
    if any_label {
        fs::write(dir.join(LABELS_FILE), labels)?;
    }
    Ok(())
}

fn parse_labels(text: &str) -> Result<std::collections::HashMap<String, usize>> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("id,label") => {}
        other => return Err(Error::data(format!("labels.csv header must be `id,label`, got {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, label) = l
                .split_once(',')
                .ok_or_else(|| Error::data(format!("malformed labels.csv row `{l}`")))?;
            let label = label
                .trim()
                .parse()
                .map_err(|_| Error::data(format!("label for `{id}` is not a class id")))?;
            Ok((id.trim().to_string(), label))
        })
        .collect()
}

/// Load a directory written by [`save_sample_dir`] (or laid out the same way).
pub fn load_sample_dir(dir: &Path) -> Result<Dataset> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(IMAGE_SUFFIX)).map(String::from))
        .collect();
    ids.sort();
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() { Some(parse_labels(&fs::read_to_string(labels_path)?)?) } else { None };
    let samples = ids
        .into_iter()
        .map(|id| {
            let image = read_tensor(&dir.join(format!("{id}{IMAGE_SUFFIX}")))?;
            if image.rank() != 3 {
                return Err(Error::data(format!("image `{id}` must be C x H x W")));
            }
            let target = match &labels {
                Some(map) => Target::Class(
                    *map.get(&id).ok_or_else(|| Error::data(format!("no label for sample `{id}`")))?,
                ),
                None => {
                    let path = dir.join(format!("{id}{MASK_SUFFIX}"));
                    if !path.exists() {
                        return Err(Error::data(format!("missing mask for sample `{id}`")));
                    }
                    let mask = read_tensor(&path)?;
                    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                        return Err(Error::data(format!("mask `{id}` has non-binary value {v}")));
                    }
                    if mask.shape() != [1, image.shape()[1], image.shape()[2]] {
                        return Err(Error::data(format!("mask `{id}` does not match its image size")));
                    }
                    Target::Mask(mask)
                }
            };
            Ok(Sample { id, image, target })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn shapes_are_deterministic_and_nonempty() {
        let a = gen_shapes_seg(20, 16, 3).unwrap();
        let b = gen_shapes_seg(20, 16, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_shapes_seg(20, 16, 4).unwrap());
        for s in &a.samples {
            let m = s.mask().unwrap();
            assert!(m.sum() > 0.0);
            assert_eq!(m.shape(), s.image.shape());
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(gen_shapes_seg(1, 15, 0).is_err());
    }

    #[test]
    fn blobs_balanced() {
        let d = gen_blobs_cls(103, 4, 16, 1).unwrap();
        let mut hist = [0usize; 4];
        d.samples.iter().for_each(|s| hist[s.label().unwrap()] += 1);
        let (lo, hi) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(d, gen_blobs_cls(103, 4, 16, 1).unwrap());
        assert!(gen_blobs_cls(10, 1, 16, 1).is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn split_sizes() {
        let m = split(&ids(10), 0).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (8, 1, 1));
        let m = split(&ids(100), 0).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (80, 10, 10));
        assert!(matches!(split(&ids(9), 0), Err(Error::Data(_))));
        assert_eq!(split(&ids(57), 5).unwrap(), split(&ids(57), 5).unwrap());
    }

    #[test]
    fn split_partitions() {
        for n in [10, 11, 19, 37, 250] {
            let m = split(&ids(n), n as u64).unwrap();
            let all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
            let set: HashSet<_> = all.iter().collect();
            assert_eq!(all.len(), n);
            assert_eq!(set.len(), n);
            assert_eq!(m.train.len(), n * 8 / 10);
            assert_eq!(m.val.len(), n / 10);
        }
    }

    #[test]
    fn directory_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_shapes_seg(4, 16, 9).unwrap();
        save_sample_dir(&d, dir.path()).unwrap();
        assert_eq!(load_sample_dir(dir.path()).unwrap(), d);

        fs::remove_file(dir.path().join("shape00002.mask.mrt")).unwrap();
        match load_sample_dir(dir.path()) {
            Err(Error::Data(msg)) => assert!(msg.contains("shape00002"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }

        let bad = Tensor::full(&[1, 16, 16], 0.5);
        write_tensor(&dir.path().join("shape00002.mask.mrt"), &bad).unwrap();
        assert!(matches!(load_sample_dir(dir.path()), Err(Error::Data(_))));

        let cls = tempfile::tempdir().unwrap();
        let d = gen_blobs_cls(6, 3, 8, 2).unwrap();
        save_sample_dir(&d, cls.path()).unwrap();
        assert_eq!(load_sample_dir(cls.path()).unwrap(), d);
    }
}

//! Synthetic categorization datasets, the 1-nearest-neighbor sample
//! complexity protocol and tabular reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{sprite, SpriteKind};
use crate::group::GroupSpec;
use crate::hw::{signature, PoolingSpec};
use crate::group::PoolingWindow;
use crate::image::{normalize, save_pgm, save_raster, load_raster, Image};
use crate::oracle::orbits_equal;
use crate::rng::{derive_seed, SplitMix64};
use crate::template::TemplateBank;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every sample at the identity element.
    Rectified,
    /// A seeded uniform element per sample.
    Unrectified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub kind: SpriteKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub group: GroupSpec,
    pub classes: Vec<ClassSpec>,
    pub samples_per_class: usize,
    pub mode: Mode,
    /// Norm of the additive noise relative to the unit-norm exemplar.
    #[serde(default)]
    pub noise: f64,
}

impl DatasetConfig {
    /// Two classes (blob vs ring) on Torus2D(16,16), 50 samples each.
    pub fn standard(mode: Mode) -> Self {
        Self {
            group: GroupSpec::Torus2D { w: 16, h: 16 },
            classes: vec![
                ClassSpec { kind: SpriteKind::Blob, seed: 1 },
                ClassSpec { kind: SpriteKind::Ring, seed: 2 },
            ],
            samples_per_class: 50,
            mode,
            noise: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.group.validate()?;
        if self.classes.len() < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub class: usize,
    pub element: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub images: Vec<Image>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: DatasetConfig,
    seed: u64,
    samples: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    class: usize,
    element: usize,
}

impl SyntheticDataset {
    /// Class-major sample order. Exemplars must lie in distinct orbits.
    pub fn generate(config: &DatasetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let group = &config.group;
        let (w, h) = group.dims();
        let exemplars = config
            .classes
            .iter()
            .map(|c| normalize(&sprite(c.kind, w, h, c.seed)))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..exemplars.len() {
            for j in i + 1..exemplars.len() {
                if orbits_equal(&exemplars[i], &exemplars[j], group)? {
                    return Err(Error::OrbitsNotDistinct(i, j));
                }
            }
        }
        let mut rng = SplitMix64::new(derive_seed(seed, "gen-data"));
        let mut samples = Vec::new();
        let mut images = Vec::new();
        for (class, ex) in exemplars.iter().enumerate() {
            for _ in 0..config.samples_per_class {
                let element = match config.mode {
                    Mode::Rectified => 0,
                    Mode::Unrectified => rng.next_below(group.order()),
                };
                let noise: Vec<f64> = (0..w * h).map(|_| rng.next_normal()).collect();
                let moved = group.act(element, ex)?;
                let image = if config.noise > 0.0 {
                    let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let data = moved.data.iter().zip(&noise).map(|(a, b)| a + config.noise * b / nn).collect();
                    normalize(&Image::new(w, h, data)?)?
                } else {
                    moved
                };
                samples.push(Sample { class, element });
                images.push(image);
            }
        }
        Ok(Self { config: config.clone(), seed, samples, images })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }

    /// Writes `manifest.json`, `images/NNNN.json` and `previews/NNNN.pgm`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("previews"))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for (i, (s, img)) in self.samples.iter().zip(&self.images).enumerate() {
            let file = format!("images/{i:04}.json");
            save_raster(img, dir.join(&file))?;
            save_pgm(img, dir.join(format!("previews/{i:04}.pgm")))?;
            entries.push(ManifestEntry { file, class: s.class, element: s.element });
        }
        let manifest = Manifest { config: self.config.clone(), seed: self.seed, samples: entries };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Reads a dataset directory and checks that the stored rasters match a
    /// regeneration from the manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let regenerated = Self::generate(&manifest.config, manifest.seed)?;
        if manifest.samples.len() != regenerated.samples.len() {
            return Err(Error::MalformedFile("manifest sample count disagrees with its config".into()));
        }
        for (i, e) in manifest.samples.iter().enumerate() {
            let stored = load_raster(dir.join(&e.file))?;
            let expect = &regenerated.samples[i];
            if e.class != expect.class || e.element != expect.element || stored.data != regenerated.images[i].data {
                return Err(Error::MalformedFile(format!("{} does not match its manifest", e.file)));
            }
        }
        Ok(regenerated)
    }
}

// ---------------------------------------------------------------- 1-NN

/// Pearson correlation; 0 when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Fraction of `test` items whose nearest training item under
/// `1 - correlation` has the same label. Ties go to the earlier index.
pub fn nn_accuracy(features: &[Vec<f64>], labels: &[usize], train: &[usize], test: &[usize]) -> f64 {
    let correct = test
        .iter()
        .filter(|&&q| {
            let mut best = (f64::INFINITY, usize::MAX);
            for &t in train {
                let d = 1.0 - correlation(&features[q], &features[t]);
                if d < best.0 {
                    best = (d, t);
                }
            }
            labels[best.1] == labels[q]
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Feature map applied to every dataset image.
#[derive(Clone, Debug)]
pub enum Representation {
    Raw,
    Signature { bank: Box<TemplateBank>, pooling: PoolingSpec, window: PoolingWindow },
}

impl Representation {
    pub fn name(&self) -> &'static str {
        match self {
            Representation::Raw => "raw",
            Representation::Signature { .. } => "signature",
        }
    }

    pub fn features(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        match self {
            Representation::Raw => Ok(images.iter().map(|i| i.data.clone()).collect()),
            Representation::Signature { bank, pooling, window } => {
                images.iter().map(|i| Ok(signature(i, bank, window, pooling)?.flat())).collect()
            }
        }
    }
}

/// Mean and sample standard deviation of 1-NN accuracy with `m` training
/// examples per class, over `splits` seeded splits. Remaining samples form
/// the test set.
pub fn sample_complexity(
    features: &[Vec<f64>],
    labels: &[usize],
    m_grid: &[usize],
    splits: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, f64)>> {
    if splits == 0 {
        return Err(Error::Config("splits must be positive".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let by_class: Vec<Vec<usize>> =
        (0..n_classes).map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect()).collect();
    let smallest = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if let Some(&m) = m_grid.iter().find(|&&m| m == 0 || m >= smallest) {
        return Err(Error::InsufficientSamples(format!("m = {m} needs at least one test sample per class beyond {smallest}")));
    }
    m_grid
        .iter()
        .map(|&m| {
            let accs: Vec<f64> = (0..splits)
                .into_par_iter()
                .map(|s| {
                    let mut rng = SplitMix64::new(derive_seed(seed, &format!("split-{m}-{s}")));
                    let mut train = Vec::new();
                    let mut test = Vec::new();
                    for members in &by_class {
                        let pick = rng.sample_indices(members.len(), m);
                        for (i, &idx) in members.iter().enumerate() {
                            if pick.binary_search(&i).is_ok() {
                                train.push(idx);
                            } else {
                                test.push(idx);
                            }
                        }
                    }
                    nn_accuracy(features, labels, &train, &test)
                })
                .collect();
            let mean = accs.iter().sum::<f64>() / splits as f64;
            let var = if splits > 1 {
                accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (splits - 1) as f64
            } else {
                0.0
            };
            Ok((m, mean, var.sqrt()))
        })
        .collect()
}

// ---------------------------------------------------------------- reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub x: f64,
    pub y: f64,
    pub stddev: f64,
}

/// Deterministic report; wall-clock time is kept out of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,x,y,stddev\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.condition, r.x, r.y, r.stddev);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Least-squares slope `a` of K against `ln n`, and the smallest `b` with
/// `K <= a ln n + b` at every point.
pub fn fit_log_envelope(points: &[(usize, usize)]) -> (f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1 as f64).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = xs.iter().zip(&ys).map(|(x, y)| y - a * x).fold(f64::NEG_INFINITY, f64::max);
    (a, b)
}

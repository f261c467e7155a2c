//! Implementations behind the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};

use ise_core::experiments::{
    sample_complexity, DatasetConfig, ExperimentReport, Representation, ReportRow, SyntheticDataset,
};
use ise_core::image::{load_pgm, load_raster};
use ise_core::template::{make_gabor_bank, make_random_bank};
use ise_core::{derive_seed, normalize, signature, Error, GaborParams, GroupSpec, Image, PoolingSpec, Result, TemplateBank};
use serde::{Deserialize, Serialize};

use crate::checks::{self, CheckReport, Suite};
use crate::config::{config_dir, config_hash, inline_or_file, read_config, resolve, WindowSpec};

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(config: &Path, seed: u64, out: &Path) -> Result<SyntheticDataset> {
    let cfg: DatasetConfig = read_config(config)?;
    cfg.validate()?;
    let data = SyntheticDataset::generate(&cfg, seed)?;
    data.write(out)?;
    Ok(data)
}

// ---------------------------------------------------------------- sample-complexity

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Generate(DatasetConfig),
    Dir(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BankSource {
    Random {
        k: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Path(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RepresentationSpec {
    Raw {
        #[serde(default)]
        name: Option<String>,
    },
    Signature {
        #[serde(default)]
        name: Option<String>,
        bank: BankSource,
        pooling: PoolingSpec,
        #[serde(default)]
        window: WindowSpec,
    },
}

impl RepresentationSpec {
    fn name(&self) -> &str {
        match self {
            RepresentationSpec::Raw { name } => name.as_deref().unwrap_or("raw"),
            RepresentationSpec::Signature { name, .. } => name.as_deref().unwrap_or("signature"),
        }
    }

    fn build(&self, group: &GroupSpec, dir: &Path, seed: u64) -> Result<Representation> {
        match self {
            RepresentationSpec::Raw { .. } => Ok(Representation::Raw),
            RepresentationSpec::Signature { bank, pooling, window, .. } => {
                let bank = match bank {
                    BankSource::Random { k, seed: s } => make_random_bank(group, *k, s.unwrap_or(derive_seed(seed, "bank")))?,
                    BankSource::Path(p) => TemplateBank::load(resolve(dir, p))?,
                };
                if &bank.group != group {
                    return Err(Error::Config("bank group differs from the dataset group".into()));
                }
                pooling.validate()?;
                Ok(Representation::Signature { bank: Box::new(bank), pooling: pooling.clone(), window: window.build(group)? })
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleComplexityConfig {
    pub datasets: Vec<DatasetSource>,
    pub representations: Vec<RepresentationSpec>,
    pub m_grid: Vec<usize>,
    pub splits: usize,
}

/// Runs every (dataset, representation) condition. Generated datasets use
/// `seed` directly, so they match `gen-data` with the same seed.
pub fn run_sample_complexity(cfg: &SampleComplexityConfig, dir: &Path, seed: u64) -> Result<ExperimentReport> {
    if cfg.datasets.is_empty() || cfg.representations.is_empty() || cfg.m_grid.is_empty() {
        return Err(Error::Config("datasets, representations and m_grid must be nonempty".into()));
    }
    let split_seed = derive_seed(seed, "sample-complexity");
    let mut rows = Vec::new();
    for source in &cfg.datasets {
        let data = match source {
            DatasetSource::Generate(c) => SyntheticDataset::generate(c, seed)?,
            DatasetSource::Dir(d) => SyntheticDataset::load(resolve(dir, d))?,
        };
        let mode = serde_json::to_value(data.config.mode)?;
        let mode = mode.as_str().unwrap_or("unknown").to_string();
        let labels = data.labels();
        for rep in &cfg.representations {
            let features = rep.build(&data.config.group, dir, seed)?.features(&data.images)?;
            for (m, mean, sd) in sample_complexity(&features, &labels, &cfg.m_grid, cfg.splits, split_seed)? {
                rows.push(ReportRow { condition: format!("{}/{mode}", rep.name()), x: m as f64, y: mean, stddev: sd });
            }
        }
    }
    Ok(ExperimentReport { experiment: "sample-complexity".into(), config_hash: config_hash(cfg, seed), rows })
}

/// Writes `sample_complexity.csv` and `sample_complexity.json` into `out`.
pub fn sample_complexity_cmd(config: &Path, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let cfg: SampleComplexityConfig = read_config(config)?;
    let report = run_sample_complexity(&cfg, &config_dir(config), seed)?;
    Ok(vec![
        write(out, "sample_complexity.csv", report.to_csv().as_bytes())?,
        write(out, "sample_complexity.json", report.to_json().as_bytes())?,
    ])
}

// ---------------------------------------------------------------- check

/// Optional config file: either the suite's own object or an object keyed by
/// suite name.
pub fn check_cmd(suite: Suite, config: Option<&Path>, seed: u64, out: &Path) -> Result<CheckReport> {
    let value: Option<serde_json::Value> = config.map(read_config).transpose()?;
    let section = value.as_ref().map(|v| v.get(suite.name()).unwrap_or(v));
    let output = checks::run(suite, section, seed)?;
    write(out, &format!("check-{}.json", suite.name()), output.report.to_json().as_bytes())?;
    for (name, contents) in &output.files {
        write(out, name, contents.as_bytes())?;
    }
    Ok(output.report)
}

// ---------------------------------------------------------------- signature

/// Loads a PGM or raster-JSON image and normalizes it.
pub fn load_image(path: &Path) -> Result<Image> {
    let raw = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path)?,
        Some("json") => load_raster(path)?,
        other => return Err(Error::UnsupportedFormat(format!("image extension {other:?}"))),
    };
    normalize(&raw)
}

pub fn signature_cmd(image: &Path, bank: &Path, pooling: &str, window: &str) -> Result<String> {
    let img = load_image(image)?;
    let bank = TemplateBank::load(bank)?;
    let pooling: PoolingSpec = inline_or_file(pooling)?;
    pooling.validate()?;
    let window: WindowSpec = if window == "full" { WindowSpec::default() } else { inline_or_file(window)? };
    let window = window.build(&bank.group)?;
    Ok(signature(&img, &bank, &window, &pooling)?.to_json() + "\n")
}

// ---------------------------------------------------------------- gabor-bank

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaborFile {
    Explicit {
        group: GroupSpec,
        params: Vec<GaborParams>,
    },
    Orientations {
        group: GroupSpec,
        sigma: f64,
        omega0: f64,
        orientations: usize,
    },
}

impl GaborFile {
    pub fn params(&self) -> (GroupSpec, Vec<GaborParams>) {
        match self {
            GaborFile::Explicit { group, params } => (group.clone(), params.clone()),
            GaborFile::Orientations { group, sigma, omega0, orientations } => {
                let (w, h) = group.dims();
                let params = (0..*orientations)
                    .map(|i| {
                        let theta = std::f64::consts::PI * i as f64 / *orientations as f64;
                        GaborParams::centered(w, h, *sigma, *omega0, theta)
                    })
                    .collect();
                (group.clone(), params)
            }
        }
    }
}

/// Writes the bank to `out` when it names a `.json` file, otherwise to
/// `out/gabor_bank.json`.
pub fn gabor_bank_cmd(config: &Path, out: &Path) -> Result<PathBuf> {
    let file: GaborFile = read_config(config)?;
    let (group, params) = file.params();
    if params.is_empty() {
        return Err(Error::Config("no Gabor parameters".into()));
    }
    let bank = make_gabor_bank(&group, &params)?;
    let path = if out.extension().is_some_and(|e| e == "json") {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        out.to_path_buf()
    } else {
        fs::create_dir_all(out)?;
        out.join("gabor_bank.json")
    };
    bank.save(&path)?;
    Ok(path)
}

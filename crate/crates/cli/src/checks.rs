//! Property suites run by `ise check`.

use ise_core::experiments::fit_log_envelope;
use ise_core::fixtures::{boundary_fixture, layered_fixture, seeded_images, whole_and_parts_fixture};
use ise_core::hierarchy::{covariance_check, parts_profile};
use ise_core::hw::{invariance_error, stability_check};
use ise_core::oracle::{calibrate_on, orbits_equal, reservoir_drift, CalibrationConfig, Reservoir};
use ise_core::template::make_random_bank;
use ise_core::{derive_seed, Error, GroupSpec, PoolingSpec, PoolingWindow, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Invariance,
    Covariance,
    Stability,
    Localization,
    Parts,
    Theorem4,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Invariance => "invariance",
            Suite::Covariance => "covariance",
            Suite::Stability => "stability",
            Suite::Localization => "localization",
            Suite::Parts => "parts",
            Suite::Theorem4 => "theorem4",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Assertion {
    /// Passes when `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value <= bound }
    }

    /// Passes when `value > bound`.
    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value > bound }
    }

    /// Passes when `value >= bound`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value >= bound }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: String,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
}

impl CheckReport {
    fn new(suite: Suite, assertions: Vec<Assertion>) -> Self {
        Self { suite: suite.name().into(), passed: assertions.iter().all(|a| a.passed), assertions }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Report plus any extra files the suite emits, as (name, contents).
pub struct CheckOutput {
    pub report: CheckReport,
    pub files: Vec<(String, String)>,
}

fn parse<T: for<'de> Deserialize<'de> + Default>(config: Option<&serde_json::Value>) -> Result<T> {
    match config {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string())),
    }
}

/// Runs one suite. `config` is the suite's JSON config (defaults when
/// absent); every random stream is derived from `seed`.
pub fn run(suite: Suite, config: Option<&serde_json::Value>, seed: u64) -> Result<CheckOutput> {
    let seed = derive_seed(seed, suite.name());
    let (assertions, files) = match suite {
        Suite::Invariance => (invariance(&parse(config)?, seed)?, vec![]),
        Suite::Covariance => (covariance(&parse(config)?, seed)?, vec![]),
        Suite::Stability => (stability(&parse(config)?, seed)?, vec![]),
        Suite::Localization => (localization(&parse(config)?, seed)?, vec![]),
        Suite::Parts => (parts(&parse(config)?, seed)?, vec![]),
        Suite::Theorem4 => {
            let (a, csv) = theorem4(&parse(config)?, seed)?;
            (a, vec![("calibration.csv".to_string(), csv)])
        }
    };
    Ok(CheckOutput { report: CheckReport::new(suite, assertions), files })
}

// ---------------------------------------------------------------- invariance

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub groups: Vec<GroupSpec>,
    pub images: usize,
    pub k: usize,
    pub pooling: Vec<PoolingSpec>,
    pub tolerance: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            groups: vec![GroupSpec::Torus2D { w: 8, h: 8 }, GroupSpec::Rot4 { n: 8 }],
            images: 20,
            k: 4,
            pooling: vec![PoolingSpec::cdf(16, 0.05), PoolingSpec::Moments { orders: vec![1, 2, 3] }, PoolingSpec::Max],
            tolerance: 1e-12,
        }
    }
}

fn group_label(g: &GroupSpec) -> String {
    match g {
        GroupSpec::Cyclic1D { d } => format!("cyclic1d({d})"),
        GroupSpec::Torus2D { w, h } => format!("torus2d({w},{h})"),
        GroupSpec::Rot4 { n } => format!("rot4({n})"),
        GroupSpec::Dihedral8 { n } => format!("dihedral8({n})"),
        GroupSpec::ScaleSet { w, h, .. } => format!("scaleset({w},{h})"),
        GroupSpec::RotInterp { w, h, n_angles } => format!("rotinterp({w},{h},{n_angles})"),
    }
}

fn invariance(cfg: &InvarianceConfig, seed: u64) -> Result<Vec<Assertion>> {
    let mut out = Vec::new();
    for group in &cfg.groups {
        if !group.is_exact() {
            return Err(Error::Config(format!("invariance suite needs a permutation group, got {}", group_label(group))));
        }
        let (w, h) = group.dims();
        let images = seeded_images(w, h, cfg.images, derive_seed(seed, "images"))?;
        let bank = make_random_bank(group, cfg.k, derive_seed(seed, "bank"))?;
        let full = PoolingWindow::full(group);
        for spec in &cfg.pooling {
            let worst = images
                .par_iter()
                .map(|img| {
                    (0..group.order())
                        .map(|g| invariance_error(img, g, &bank, &full, spec))
                        .try_fold(0.0f64, |m, e| e.map(|e| m.max(e)))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            out.push(Assertion::at_most(format!("{}/{}", group_label(group), spec.id()), worst, cfg.tolerance));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- covariance

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub n: usize,
    pub k: usize,
    pub windows: Vec<Option<usize>>,
    pub pooling: Vec<PoolingSpec>,
    pub images: usize,
    pub shifts: Vec<(isize, isize)>,
    pub tolerance: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            n: 8,
            k: 3,
            windows: vec![Some(1), Some(2)],
            pooling: vec![PoolingSpec::cdf(4, 0.1), PoolingSpec::Moments { orders: vec![1, 2] }],
            images: 4,
            shifts: vec![(1, 0), (2, 3), (-3, 1)],
            tolerance: 1e-12,
        }
    }
}

fn covariance(cfg: &CovarianceConfig, seed: u64) -> Result<Vec<Assertion>> {
    let layers = layered_fixture(cfg.n, cfg.k, 1, 1, &cfg.windows, &cfg.pooling, derive_seed(seed, "layers"))?;
    let group = GroupSpec::Torus2D { w: cfg.n, h: cfg.n };
    let images = seeded_images(cfg.n, cfg.n, cfg.images, derive_seed(seed, "images"))?;
    let mut worst = vec![0.0f64; layers.len()];
    for img in &images {
        for &(sx, sy) in &cfg.shifts {
            let g = group.torus_element(sx, sy).ok_or_else(|| Error::Config(format!("shift ({sx},{sy}) out of range")))?;
            for (w, e) in worst.iter_mut().zip(covariance_check(img, g, &layers)?) {
                *w = w.max(e);
            }
        }
    }
    Ok(worst.iter().enumerate().map(|(l, &e)| Assertion::at_most(format!("layer-{}", l + 1), e, cfg.tolerance)).collect())
}

// ---------------------------------------------------------------- stability

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub group: GroupSpec,
    pub k: usize,
    pub pairs: usize,
    pub pooling: PoolingSpec,
    pub tolerance: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            group: GroupSpec::Torus2D { w: 8, h: 8 },
            k: 16,
            pairs: 100,
            pooling: PoolingSpec::cdf_auto(16, 0.1),
            tolerance: 1e-12,
        }
    }
}

fn stability(cfg: &StabilityConfig, seed: u64) -> Result<Vec<Assertion>> {
    let budget = cfg.pooling.lipschitz_budget();
    if budget > 1.0 + 1e-12 {
        return Err(Error::LipschitzBudgetExceeded(budget));
    }
    let (w, h) = cfg.group.dims();
    let bank = make_random_bank(&cfg.group, cfg.k, derive_seed(seed, "bank"))?;
    let images = seeded_images(w, h, 2 * cfg.pairs, derive_seed(seed, "images"))?;
    let margins = (0..cfg.pairs)
        .into_par_iter()
        .map(|p| {
            let (lhs, rhs) = stability_check(&images[2 * p], &images[2 * p + 1], &bank, &cfg.pooling)?;
            Ok(lhs - rhs)
        })
        .collect::<Result<Vec<f64>>>()?;
    let worst = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let held = margins.iter().filter(|&&m| m <= cfg.tolerance).count();
    Ok(vec![
        Assertion::at_most("max(distance - hausdorff)", worst, cfg.tolerance),
        Assertion::at_least("pairs within bound", held as f64, cfg.pairs as f64),
    ])
}

// ---------------------------------------------------------------- localization

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub d: usize,
    pub a: usize,
    pub b_prime: usize,
    pub b: usize,
    pub pooling: PoolingSpec,
    pub inside_tolerance: f64,
    pub outside_floor: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            d: 48,
            a: 2,
            b_prime: 3,
            b: 9,
            pooling: PoolingSpec::cdf(8, 0.05),
            inside_tolerance: 1e-10,
            outside_floor: 1e-3,
        }
    }
}

fn localization(cfg: &LocalizationConfig, seed: u64) -> Result<Vec<Assertion>> {
    let fx = boundary_fixture(cfg.d, cfg.a, cfg.b_prime, cfg.b, derive_seed(seed, "fixture"))?;
    let group = fx.group().clone();
    let err = |s: isize| -> Result<f64> {
        let g = group.torus_element(s, 0).expect("cyclic shift");
        invariance_error(&fx.image, g, &fx.bank, &fx.window, &cfg.pooling)
    };
    let x_max = fx.x_max() as isize;
    let mut inside: f64 = 0.0;
    for s in 1..=x_max {
        inside = inside.max(err(s)?).max(err(-s)?);
    }
    let mut outside: f64 = 0.0;
    for s in x_max + 1..=x_max + 2 * (cfg.a + cfg.b_prime) as isize {
        outside = outside.max(err(s)?).max(err(-s)?);
    }
    Ok(vec![
        Assertion::at_most(format!("max error for |shift| <= {x_max}"), inside, cfg.inside_tolerance),
        Assertion::above(format!("max error for |shift| > {x_max}"), outside, cfg.outside_floor),
    ])
}

// ---------------------------------------------------------------- parts

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartsConfig {
    pub onset_floor: f64,
    pub top_tolerance: f64,
}

impl Default for PartsConfig {
    fn default() -> Self {
        Self { onset_floor: 1e-3, top_tolerance: 1e-10 }
    }
}

fn parts(cfg: &PartsConfig, seed: u64) -> Result<Vec<Assertion>> {
    let (image, layers, shift) = whole_and_parts_fixture(derive_seed(seed, "fixture"))?;
    let profile = parts_profile(&image, shift, &layers)?;
    let first = profile.first().map_or(0.0, |p| p.1);
    let last = profile.last().map_or(0.0, |p| p.1);
    // largest increase from one layer to the next after onset
    let rise = profile.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        Assertion::above("layer-1 error", first, cfg.onset_floor),
        Assertion::at_most(format!("layer-{} error", profile.len()), last, cfg.top_tolerance),
        Assertion::at_most("max increase across layers", rise, 0.0),
    ])
}

// ---------------------------------------------------------------- theorem4

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem4Config {
    pub group: GroupSpec,
    pub ns: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// Epsilon at which the log fit over `ns` is made.
    pub fit_epsilon: f64,
    pub delta: f64,
    pub k_upper: usize,
    pub seeds: usize,
    pub pooling: PoolingSpec,
}

impl Default for Theorem4Config {
    fn default() -> Self {
        Self {
            group: GroupSpec::Torus2D { w: 6, h: 6 },
            ns: vec![4, 8, 16, 32],
            epsilons: vec![0.015, 0.02, 0.03, 0.05, 0.08],
            fit_epsilon: 0.015,
            delta: 0.1,
            k_upper: 128,
            seeds: 9,
            pooling: PoolingSpec::cdf(8, 0.1),
        }
    }
}

fn theorem4(cfg: &Theorem4Config, seed: u64) -> Result<(Vec<Assertion>, String)> {
    if cfg.ns.is_empty() || cfg.epsilons.is_empty() {
        return Err(Error::Config("theorem4 needs image counts and epsilons".into()));
    }
    if !cfg.epsilons.contains(&cfg.fit_epsilon) {
        return Err(Error::Config("fit_epsilon must be one of epsilons".into()));
    }
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(f64::total_cmp);
    let n_max = *cfg.ns.iter().max().expect("nonempty");
    let (w, h) = cfg.group.dims();
    let pool = seeded_images(w, h, n_max, derive_seed(seed, "images"))?;
    for i in 0..n_max {
        for j in i + 1..n_max {
            if orbits_equal(&pool[i], &pool[j], &cfg.group)? {
                return Err(Error::OrbitsNotDistinct(i, j));
            }
        }
    }
    let reservoir = Reservoir::build(&pool, &cfg.group, &cfg.pooling, 64 * cfg.k_upper, derive_seed(seed, "reservoir"))?;
    let seeds: Vec<u64> = (0..cfg.seeds).map(|s| derive_seed(seed, &format!("subset-{s}"))).collect();

    let cells: Vec<(usize, f64)> = cfg.ns.iter().flat_map(|&n| eps.iter().map(move |&e| (n, e))).collect();
    let results = cells
        .par_iter()
        .map(|&(n, epsilon)| {
            let images: Vec<usize> = (0..n).collect();
            let c = CalibrationConfig { epsilon, delta: cfg.delta, k_upper: cfg.k_upper, seeds: seeds.clone() };
            calibrate_on(&reservoir, &images, &c)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("n,epsilon,delta,K_measured,c_fit,seed-count\n");
    for ((n, e), c) in cells.iter().zip(&results) {
        csv.push_str(&format!("{n},{e},{},{},{},{}\n", cfg.delta, c.k_measured, c.c_fit, cfg.seeds));
    }

    let mut out = Vec::new();
    // K must not grow as epsilon grows, for every n
    let mut worst_rise = f64::NEG_INFINITY;
    for (i, _) in cfg.ns.iter().enumerate() {
        let ks: Vec<f64> = (0..eps.len()).map(|j| results[i * eps.len() + j].k_measured as f64).collect();
        for w in ks.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    if eps.len() > 1 {
        out.push(Assertion::at_most("max increase of K with epsilon", worst_rise, 0.0));
    }
    let fit_idx = eps.iter().position(|&e| e == cfg.fit_epsilon).expect("checked");
    let points: Vec<(usize, usize)> =
        cfg.ns.iter().enumerate().map(|(i, &n)| (n, results[i * eps.len() + fit_idx].k_measured)).collect();
    let (a, b) = fit_log_envelope(&points);
    out.push(Assertion::above("log fit slope a", a, 0.0));
    let envelope = points.iter().map(|&(n, k)| k as f64 - a * (n as f64).ln() - b).fold(f64::NEG_INFINITY, f64::max);
    out.push(Assertion::at_most("max K - (a ln n + b)", envelope, 1e-9));
    out.push(Assertion::at_most("reservoir drift", reservoir_drift(&reservoir), eps[0] / 10.0));
    Ok((out, csv))
}

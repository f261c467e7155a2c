//! Layered simple/complex architecture. A layer correlates the previous
//! layer's group-indexed map with compactly supported templates and pools
//! the nonlinearity over its window translated to every group element, so
//! the output is again a function on the group. Windows nest across layers;
//! when the last one is the whole group the top map is constant in g.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::group::{GroupSpec, PoolingWindow};
use crate::hw::{signature_distance, simple_responses, PoolingSpec, Signature};
use crate::image::{Image, DEGENERATE_NORM};
use crate::rng::SplitMix64;
use crate::template::TemplateBank;

/// A template on the group: channel vectors at a few support elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTemplate {
    /// Sorted, distinct support elements.
    pub support: Vec<usize>,
    /// `weights[i][c]` is the weight of channel c at `support[i]`.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    pub group: GroupSpec,
    pub channels: usize,
    pub templates: Vec<FeatureTemplate>,
}

impl FeatureBank {
    pub fn new(group: GroupSpec, channels: usize, templates: Vec<FeatureTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::EmptyBank);
        }
        for t in &templates {
            if t.support.is_empty() || t.support.len() != t.weights.len() {
                return Err(Error::Config("feature template support and weights disagree".into()));
            }
            if t.support.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("feature template support must be sorted and distinct".into()));
            }
            if let Some(&h) = t.support.iter().find(|&&h| h >= group.order()) {
                return Err(Error::InvalidElement { element: h, order: group.order() });
            }
            if t.weights.iter().any(|w| w.len() != channels) {
                return Err(mismatch(format!("{channels} channels"), "template weight vector"));
            }
        }
        Ok(Self { group, channels, templates })
    }

    pub fn k(&self) -> usize {
        self.templates.len()
    }

    /// Raster templates read as one-channel templates on a translation
    /// group, supported where the raster is nonzero.
    pub fn from_image_bank(bank: &TemplateBank) -> Result<Self> {
        check_pixel_indexed(&bank.group)?;
        let templates = bank
            .templates()
            .iter()
            .map(|t| {
                let support: Vec<usize> = (0..t.len()).filter(|&p| t.data[p] != 0.0).collect();
                let weights = support.iter().map(|&p| vec![t.data[p]]).collect();
                FeatureTemplate { support, weights }
            })
            .collect();
        Self::new(bank.group.clone(), 1, templates)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("feature bank serializes")
    }
}

/// Raster templates with stored orbits (first layer only), or templates on
/// the group.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerBank {
    Image(TemplateBank),
    Feature(FeatureBank),
}

impl LayerBank {
    pub fn k(&self) -> usize {
        match self {
            LayerBank::Image(b) => b.k(),
            LayerBank::Feature(b) => b.k(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    pub window: PoolingWindow,
    pub bank: LayerBank,
    pub pooling: PoolingSpec,
}

/// Layer output: `order x channels` values, row g.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layer: usize,
    pub channels: usize,
    /// Before the inter-layer normalization.
    pub raw: Vec<f64>,
    /// `(raw - mean) / norm`.
    pub values: Vec<f64>,
    pub mean: f64,
    pub norm: f64,
}

impl FeatureMap {
    pub fn order(&self) -> usize {
        self.raw.len() / self.channels.max(1)
    }

    pub fn raw_at(&self, g: usize) -> &[f64] {
        &self.raw[g * self.channels..(g + 1) * self.channels]
    }

    pub fn value_at(&self, g: usize) -> &[f64] {
        &self.values[g * self.channels..(g + 1) * self.channels]
    }

    /// Layer-0 map of an image on a translation group: pixel p sits at
    /// element p.
    pub fn from_image(image: &Image, group: &GroupSpec) -> Result<Self> {
        check_pixel_indexed(group)?;
        if image.len() != group.order() {
            return Err(mismatch(group.order(), image.len()));
        }
        Ok(Self {
            layer: 0,
            channels: 1,
            raw: image.data.clone(),
            values: image.data.clone(),
            mean: image.mean(),
            norm: image.norm(),
        })
    }

    /// Normalized values as a raster with one row per group element.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            layer: usize,
            mean: f64,
            norm: f64,
            width: usize,
            height: usize,
            data: &'a [f64],
        }
        serde_json::to_string(&Dump {
            layer: self.layer,
            mean: self.mean,
            norm: self.norm,
            width: self.channels,
            height: self.order(),
            data: &self.values,
        })
        .expect("map serializes")
    }
}

fn check_pixel_indexed(group: &GroupSpec) -> Result<()> {
    match group {
        GroupSpec::Torus2D { .. } | GroupSpec::Cyclic1D { .. } => Ok(()),
        _ => Err(Error::Config(format!("{group:?}: pixels are not indexed by group elements"))),
    }
}

/// `ν^k(g) = Σ_h Σ_c μ(g∘h)[c] t^k(h)[c]`, returned as `order x K`.
pub fn layer_simple(map: &FeatureMap, bank: &FeatureBank) -> Result<Vec<f64>> {
    check_map(map, bank)?;
    let group = &bank.group;
    let rows: Vec<Vec<f64>> = (0..group.order())
        .into_par_iter()
        .map(|g| {
            bank.templates
                .iter()
                .map(|t| {
                    let mut acc = 0.0;
                    for (&h, w) in t.support.iter().zip(&t.weights) {
                        let v = map.value_at(group.compose(g, h));
                        acc += v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn check_map(map: &FeatureMap, bank: &FeatureBank) -> Result<()> {
    if map.channels != bank.channels {
        return Err(mismatch(format!("{} channels", bank.channels), format!("{} channels", map.channels)));
    }
    if map.order() != bank.group.order() {
        return Err(mismatch(bank.group.order(), map.order()));
    }
    Ok(())
}

/// Same as [`layer_simple`] through the 2D DFT; Torus2D only.
pub fn layer_simple_fft(map: &FeatureMap, bank: &FeatureBank) -> Result<Vec<f64>> {
    let GroupSpec::Torus2D { w, h } = bank.group else {
        return Err(Error::Config("frequency-domain path needs Torus2D".into()));
    };
    check_map(map, bank)?;
    let n = w * h;
    let k = bank.k();
    let fft = Fft2::new(w, h);
    let spectra: Vec<Vec<Complex<f64>>> =
        (0..map.channels).map(|c| fft.forward((0..n).map(|g| map.value_at(g)[c]).collect())).collect();
    let mut out = vec![0.0; n * k];
    for (ki, t) in bank.templates.iter().enumerate() {
        let mut acc = vec![Complex::new(0.0, 0.0); n];
        for (c, spectrum) in spectra.iter().enumerate() {
            let mut tv = vec![0.0; n];
            for (&hh, wt) in t.support.iter().zip(&t.weights) {
                tv[hh] = wt[c];
            }
            // Σ_h μ(g + h) t(h)  <->  M(ω) conj(T(ω))
            for ((a, m), tt) in acc.iter_mut().zip(spectrum).zip(fft.forward(tv)) {
                *a += m * tt.conj();
            }
        }
        for (g, v) in fft.inverse(acc).into_iter().enumerate() {
            out[g * k + ki] = v;
        }
    }
    Ok(out)
}

struct Fft2 {
    w: usize,
    h: usize,
    plans: [Arc<dyn Fft<f64>>; 4],
}

impl Fft2 {
    fn new(w: usize, h: usize) -> Self {
        let mut p = FftPlanner::new();
        let plans = [p.plan_fft_forward(w), p.plan_fft_forward(h), p.plan_fft_inverse(w), p.plan_fft_inverse(h)];
        Self { w, h, plans }
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let off = if inverse { 2 } else { 0 };
        for r in buf.chunks_mut(self.w) {
            self.plans[off].process(r);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                column[y] = buf[y * self.w + x];
            }
            self.plans[off + 1].process(&mut column);
            for y in 0..self.h {
                buf[y * self.w + x] = column[y];
            }
        }
    }

    fn forward(&self, v: Vec<f64>) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = v.into_iter().map(|x| Complex::new(x, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }

    fn inverse(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.run(&mut buf, true);
        let n = (self.w * self.h) as f64;
        buf.into_iter().map(|c| c.re / n).collect()
    }
}

/// Pools `η_n(ν^k)` over `gG_ℓ` for every g, then normalizes the whole map
/// (all channels jointly). Channel index is `k * N + n`.
pub fn layer_complex(simple: &[f64], k: usize, config: &LayerConfig, layer: usize) -> Result<FeatureMap> {
    let spec = &config.pooling;
    spec.validate()?;
    let group = &config.window.group;
    let order = group.order();
    if simple.len() != order * k {
        return Err(mismatch(order * k, simple.len()));
    }
    let n = spec.channels();
    let channels = k * n;
    let is_max = matches!(spec, PoolingSpec::Max);
    let eta: Vec<f64> =
        if is_max { simple.to_vec() } else { simple.iter().flat_map(|&v| (0..n).map(move |c| spec.eta(c, v))).collect() };
    let members = config.window.members();
    let v0 = members.len() as f64;
    let rows: Vec<Vec<f64>> = (0..order)
        .into_par_iter()
        .map(|g| {
            let mut acc = vec![if is_max { f64::NEG_INFINITY } else { 0.0 }; channels];
            for &h in members {
                let row = &eta[group.compose(g, h) * channels..][..channels];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a = if is_max { a.max(*v) } else { *a + v };
                }
            }
            if !is_max {
                acc.iter_mut().for_each(|a| *a /= v0);
            }
            acc
        })
        .collect();
    let raw: Vec<f64> = rows.into_iter().flatten().collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let norm = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateImage(format!("layer {layer} map is constant")));
    }
    let values = raw.iter().map(|v| (v - mean) / norm).collect();
    Ok(FeatureMap { layer, channels, raw, values, mean, norm })
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub maps: Vec<FeatureMap>,
    /// Top layer's pre-normalization map at the identity, K x N.
    pub top: Signature,
    /// `(mean, norm)` removed at each layer.
    pub records: Vec<(f64, f64)>,
}

/// Layer ℓ (1-based) pre-normalization map at the identity as K x N.
pub fn layer_signature(map: &FeatureMap, config: &LayerConfig) -> Signature {
    let n = config.pooling.channels();
    Signature {
        bank_id: format!("layer-{}", map.layer),
        pooling: config.pooling.clone(),
        window: config.window.id(),
        values: map.raw_at(0).chunks(n).map(<[f64]>::to_vec).collect(),
    }
}

pub fn check_nested(layers: &[LayerConfig]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("hierarchy needs at least one layer".into()));
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if !pair[0].window.is_subset_of(&pair[1].window) {
            return Err(Error::Config(format!("window of layer {} is not inside layer {}", i + 1, i + 2)));
        }
    }
    if let Some(i) = layers.iter().skip(1).position(|l| matches!(l.bank, LayerBank::Image(_))) {
        return Err(Error::Config(format!("layer {} needs feature-space templates", i + 2)));
    }
    Ok(())
}

fn image_layer(image: &Image, bank: &TemplateBank) -> Result<Vec<f64>> {
    let order = bank.group.order();
    let k = bank.k();
    let per_k = (0..k).map(|t| simple_responses(image, bank, t)).collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; order * k];
    for (t, r) in per_k.iter().enumerate() {
        for (g, v) in r.iter().enumerate() {
            out[g * k + t] = *v;
        }
    }
    Ok(out)
}

pub fn forward(image: &Image, layers: &[LayerConfig]) -> Result<Forward> {
    check_nested(layers)?;
    let mut maps: Vec<FeatureMap> = Vec::with_capacity(layers.len());
    for (i, cfg) in layers.iter().enumerate() {
        let simple = match (&cfg.bank, maps.last()) {
            (LayerBank::Image(bank), _) => image_layer(image, bank)?,
            (LayerBank::Feature(bank), None) => layer_simple(&FeatureMap::from_image(image, &bank.group)?, bank)?,
            (LayerBank::Feature(bank), Some(prev)) => layer_simple(prev, bank)?,
        };
        maps.push(layer_complex(&simple, cfg.bank.k(), cfg, i + 1)?);
    }
    let records = maps.iter().map(|m| (m.mean, m.norm)).collect();
    let mut top = layer_signature(maps.last().expect("nonempty"), layers.last().expect("nonempty"));
    top.bank_id = "hierarchy-top".into();
    Ok(Forward { maps, top, records })
}

/// Largest violation, per layer, of `μ_ℓ(g̃I)(g) = μ_ℓ(I)(g̃⁻¹g)` on the
/// pre-normalization maps.
pub fn covariance_check(image: &Image, g_tilde: usize, layers: &[LayerConfig]) -> Result<Vec<f64>> {
    let group = &layers.first().ok_or_else(|| Error::Config("no layers".into()))?.window.group;
    if !group.is_exact() {
        return Err(Error::Config("covariance is exact only for permutation groups".into()));
    }
    let base = forward(image, layers)?;
    let moved = forward(&group.act(g_tilde, image)?, layers)?;
    let inv = group.inverse(g_tilde);
    Ok(base
        .maps
        .iter()
        .zip(&moved.maps)
        .map(|(b, m)| {
            let mut worst = 0.0f64;
            for g in 0..group.order() {
                for (x, y) in m.raw_at(g).iter().zip(b.raw_at(group.compose(inv, g))) {
                    worst = worst.max((x - y).abs());
                }
            }
            worst
        })
        .collect())
}

/// `(ℓ, d)` per layer, d the distance between the layer-ℓ maps of `I` and
/// `g̃I` at the identity.
pub fn parts_profile(image: &Image, g_tilde: usize, layers: &[LayerConfig]) -> Result<Vec<(usize, f64)>> {
    let group = &layers.first().ok_or_else(|| Error::Config("no layers".into()))?.window.group;
    let base = forward(image, layers)?;
    let moved = forward(&group.act(g_tilde, image)?, layers)?;
    layers
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let d = signature_distance(&layer_signature(&base.maps[i], cfg), &layer_signature(&moved.maps[i], cfg))?;
            Ok((i + 1, d))
        })
        .collect()
}

/// Feature templates cut from exemplar maps: a seeded map and position p,
/// weights `μ(p∘h)` for h in `support`, centered and scaled to unit norm.
pub fn sample_feature_bank(
    maps: &[FeatureMap],
    group: &GroupSpec,
    k: usize,
    support: &[usize],
    seed: u64,
) -> Result<FeatureBank> {
    let channels = maps.first().ok_or_else(|| Error::Config("no exemplar maps".into()))?.channels;
    let mut support = support.to_vec();
    support.sort_unstable();
    support.dedup();
    let mut rng = SplitMix64::new(seed);
    let mut templates = Vec::with_capacity(k);
    for _ in 0..k {
        let mut found = None;
        for _ in 0..100 {
            let m = &maps[rng.next_below(maps.len())];
            let p = rng.next_below(group.order());
            let mut weights: Vec<Vec<f64>> = support.iter().map(|&h| m.value_at(group.compose(p, h)).to_vec()).collect();
            let count = (weights.len() * channels) as f64;
            let mean = weights.iter().flatten().sum::<f64>() / count;
            let norm = weights.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
            if norm >= DEGENERATE_NORM {
                weights.iter_mut().flatten().for_each(|v| *v = (*v - mean) / norm);
                found = Some(FeatureTemplate { support: support.clone(), weights });
                break;
            }
        }
        templates.push(found.ok_or_else(|| Error::DegenerateImage("no informative feature patch".into()))?);
    }
    FeatureBank::new(group.clone(), channels, templates)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    window: PoolingWindow,
    /// Bank file path, relative to the config file.
    bank: String,
    pooling: PoolingSpec,
}

/// Loads an ordered list of `{window, bank, pooling}` entries. The first
/// bank may be a raster bank; later ones are feature banks.
pub fn load_config(path: impl AsRef<Path>) -> Result<Vec<LayerConfig>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let files: Vec<LayerFile> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let layers = files
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let text = fs::read_to_string(base.join(&f.bank))?;
            let bank = match (i, TemplateBank::from_json(&text)) {
                (0, Ok(b)) => LayerBank::Image(b),
                _ => LayerBank::Feature(serde_json::from_str(&text)?),
            };
            Ok(LayerConfig { window: f.window, bank, pooling: f.pooling })
        })
        .collect::<Result<Vec<_>>>()?;
    check_nested(&layers)?;
    Ok(layers)
}

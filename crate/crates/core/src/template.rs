//! Template banks: random, patch-sampled and Gabor templates stored together
//! with their full orbits, plus the localization diagnostics used to check
//! the POG invariance conditions.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::image::{dot_slices, normalize, Image};
use crate::rng::SplitMix64;

/// Gabor template parameters. `center` is in pixel coordinates (x, y).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub sigma: f64,
    pub omega0: f64,
    pub orientation: f64,
    pub center: (f64, f64),
}

impl GaborParams {
    /// Centered on a `w x h` raster.
    pub fn centered(w: usize, h: usize, sigma: f64, omega0: f64, orientation: f64) -> Self {
        Self {
            sigma,
            omega0,
            orientation,
            center: ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
        }
    }

    /// `sigma > 0` and either `omega0 = 0` (plain Gaussian) or
    /// `|omega0| sigma` in `[0.5, π sigma]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.omega0.is_finite() || !self.orientation.is_finite() {
            return Err(Error::Config(format!("invalid Gabor parameters {self:?}")));
        }
        let band = self.omega0.abs() * self.sigma;
        if self.omega0 != 0.0 && !(0.5..=PI * self.sigma).contains(&band) {
            return Err(Error::Config(format!(
                "|omega0|*sigma = {band} outside admissible band [0.5, {}]",
                PI * self.sigma
            )));
        }
        Ok(())
    }

    /// The unnormalized cosine-phase Gabor on a `w x h` raster.
    pub fn render(&self, w: usize, h: usize) -> Image {
        let (s, c) = self.orientation.sin_cos();
        let (cx, cy) = self.center;
        let two_s2 = 2.0 * self.sigma * self.sigma;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                data.push((self.omega0 * u).cos() * (-(u * u + v * v) / two_s2).exp());
            }
        }
        Image::new(w, h, data).expect("finite Gabor values")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Random { seed: u64 },
    Patches { source: String, seed: u64 },
    Gabor { params: Vec<GaborParams> },
    /// Hand-built templates (fixtures).
    Explicit,
}

/// K templates and their orbits `g t^k`, in element order.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    pub group: GroupSpec,
    pub provenance: Provenance,
    templates: Vec<Image>,
    orbits: Vec<Vec<Image>>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    provenance: Provenance,
    group: GroupSpec,
    #[serde(rename = "K")]
    k: usize,
    dims: (usize, usize),
    templates: Vec<Image>,
}

impl TemplateBank {
    /// Normalizes the templates and precomputes every orbit entry.
    pub fn from_templates(group: GroupSpec, provenance: Provenance, raw: Vec<Image>) -> Result<Self> {
        group.validate()?;
        if raw.is_empty() {
            return Err(Error::EmptyBank);
        }
        let templates = raw.iter().map(normalize).collect::<Result<Vec<_>>>()?;
        let orbits = templates
            .iter()
            .map(|t| {
                group
                    .orbit(t)?
                    .iter()
                    .map(normalize)
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { group, provenance, templates, orbits })
    }

    pub fn k(&self) -> usize {
        self.templates.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.group.dims()
    }

    pub fn templates(&self) -> &[Image] {
        &self.templates
    }

    pub fn template(&self, k: usize) -> &Image {
        &self.templates[k]
    }

    /// `g t^k` for every element g.
    pub fn orbit(&self, k: usize) -> &[Image] {
        &self.orbits[k]
    }

    /// Sub-bank with the templates at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyBank);
        }
        Ok(Self {
            group: self.group.clone(),
            provenance: self.provenance.clone(),
            templates: indices.iter().map(|&i| self.templates[i].clone()).collect(),
            orbits: indices.iter().map(|&i| self.orbits[i].clone()).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        let file = BankFile {
            provenance: self.provenance.clone(),
            group: self.group.clone(),
            k: self.k(),
            dims: self.dims(),
            templates: self.templates.clone(),
        };
        serde_json::to_string(&file).expect("bank serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: BankFile = serde_json::from_str(s)?;
        if file.k != file.templates.len() {
            return Err(Error::MalformedFile(format!("K = {} but {} templates", file.k, file.templates.len())));
        }
        if file.dims != file.group.dims() {
            return Err(Error::MalformedFile("bank dims disagree with its group".into()));
        }
        let raw = file
            .templates
            .into_iter()
            .map(|t| Image::new(t.width, t.height, t.data)?.assume_normalized())
            .collect::<Result<Vec<_>>>()?;
        Self::from_templates(file.group, file.provenance, raw)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Stable content identifier.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_json().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("bank-{h:016x}")
    }
}

/// K templates of i.i.d. standard normal pixels, normalized.
pub fn make_random_bank(group: &GroupSpec, k: usize, seed: u64) -> Result<TemplateBank> {
    let (w, h) = group.dims();
    let mut rng = SplitMix64::new(seed);
    let raw = (0..k)
        .map(|_| Image::new(w, h, (0..w * h).map(|_| rng.next_normal()).collect()))
        .collect::<Result<Vec<_>>>()?;
    TemplateBank::from_templates(group.clone(), Provenance::Random { seed }, raw)
}

pub fn make_gabor_bank(group: &GroupSpec, params: &[GaborParams]) -> Result<TemplateBank> {
    let (w, h) = group.dims();
    for p in params {
        p.validate()?;
    }
    let raw = params.iter().map(|p| p.render(w, h)).collect();
    TemplateBank::from_templates(group.clone(), Provenance::Gabor { params: params.to_vec() }, raw)
}

const PATCH_ATTEMPTS: usize = 100;

/// K patches of size `patch` drawn at seeded positions from `sources`. Each
/// patch is centered (zero mean) before it is embedded at the center of the
/// group raster, so the zero padding stays exactly zero.
pub fn make_patch_bank(
    group: &GroupSpec,
    sources: &[Image],
    k: usize,
    patch: (usize, usize),
    seed: u64,
    source_name: &str,
) -> Result<TemplateBank> {
    let (w, h) = group.dims();
    let (pw, ph) = patch;
    if sources.is_empty() {
        return Err(Error::Config("no source images".into()));
    }
    if let Some(s) = sources.iter().find(|s| s.width < pw || s.height < ph) {
        return Err(Error::Config(format!(
            "source {}x{} smaller than patch {pw}x{ph}",
            s.width, s.height
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut raw = Vec::with_capacity(k);
    for _ in 0..k {
        let mut found = None;
        for _ in 0..PATCH_ATTEMPTS {
            let src = &sources[rng.next_below(sources.len())];
            let x0 = rng.next_below(src.width - pw + 1);
            let y0 = rng.next_below(src.height - ph + 1);
            if let Ok(p) = normalize(&src.crop(x0, y0, pw, ph)?) {
                found = Some(p);
                break;
            }
        }
        let p = found.ok_or_else(|| {
            Error::DegenerateImage(format!("no informative {pw}x{ph} patch after {PATCH_ATTEMPTS} attempts"))
        })?;
        raw.push(p.embed_centered(w, h));
    }
    let provenance = Provenance::Patches { source: source_name.to_string(), seed };
    TemplateBank::from_templates(group.clone(), provenance, raw)
}

/// `[(g, <I, g t>)]` over the whole group.
pub fn localization_profile(image: &Image, template: &Image, group: &GroupSpec) -> Result<Vec<(usize, f64)>> {
    image.check_dims(template)?;
    let orbit = group.orbit(template)?;
    Ok(orbit.iter().enumerate().map(|(g, gt)| (g, dot_slices(&image.data, &gt.data))).collect())
}

/// Elements where `|<I, g t>| > delta`.
pub fn localization_support(profile: &[(usize, f64)], delta: f64) -> Vec<usize> {
    profile.iter().filter(|(_, v)| v.abs() > delta).map(|(g, _)| *g).collect()
}

/// Default localization threshold `5 / sqrt(d)` for `d` pixels.
pub fn default_delta(pixels: usize) -> f64 {
    5.0 / (pixels as f64).sqrt()
}

/// Heisenberg box area `Δx · Δω` of a 2D template, with spreads weighted by
/// `|t|` in space and `|t̂|` in frequency. For real templates the spectrum
/// is folded onto the half-plane containing its dominant peak so the two
/// mirror lobes are not counted as one wide lobe.
pub fn heisenberg_product(t: &Image) -> f64 {
    let (w, h) = (t.width, t.height);
    let spread = |pts: &[((f64, f64), f64)]| {
        let mass: f64 = pts.iter().map(|(_, m)| m).sum();
        let cx = pts.iter().map(|((x, _), m)| x * m).sum::<f64>() / mass;
        let cy = pts.iter().map(|((_, y), m)| y * m).sum::<f64>() / mass;
        (pts.iter().map(|((x, y), m)| ((x - cx).powi(2) + (y - cy).powi(2)) * m).sum::<f64>() / mass).sqrt()
    };
    let space: Vec<_> = (0..w * h)
        .map(|p| (((p % w) as f64, (p / w) as f64), t.data[p].abs()))
        .collect();
    let dx = spread(&space);

    let spectrum = dft2(t);
    let freq = |i: usize, n: usize| {
        let k = if i > n / 2 { i as f64 - n as f64 } else { i as f64 };
        2.0 * PI * k / n as f64
    };
    let mut pts: Vec<((f64, f64), f64)> = (0..w * h)
        .map(|p| ((freq(p % w, w), freq(p / w, h)), spectrum[p].norm()))
        .collect();
    let peak = pts
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
        .unwrap_or((0.0, 0.0));
    if peak.0 != 0.0 || peak.1 != 0.0 {
        pts.retain(|((u, v), _)| u * peak.0 + v * peak.1 > 0.0);
    }
    dx * spread(&pts)
}

fn dft2(t: &Image) -> Vec<Complex<f64>> {
    let (w, h) = (t.width, t.height);
    let mut planner = FftPlanner::new();
    let row = planner.plan_fft_forward(w);
    let col = planner.plan_fft_forward(h);
    let mut buf: Vec<Complex<f64>> = t.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for r in buf.chunks_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    buf
}

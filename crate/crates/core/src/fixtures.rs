//! Seeded synthetic stimuli shared by tests, experiments and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{warp, GroupSpec, PoolingWindow, SmoothWarp};
use crate::hierarchy::{forward, sample_feature_bank, LayerBank, LayerConfig};
use crate::hw::PoolingSpec;
use crate::image::{normalize, Image};
use crate::rng::{derive_seed, SplitMix64};
use crate::template::{Provenance, TemplateBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteKind {
    Blob,
    BarComposite,
    Ring,
}

/// `count` normalized images of i.i.d. normal pixels.
pub fn seeded_images(width: usize, height: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| normalize(&Image::new(width, height, (0..width * height).map(|_| rng.next_normal()).collect())?))
        .collect()
}

fn render(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Image {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let data = (0..width * height).map(|p| f((p % width) as f64 - cx, (p / width) as f64 - cy)).collect();
    Image::new(width, height, data).expect("finite sprite")
}

/// Soft indicator of `|t| <= half`, edges one pixel wide.
fn soft_box(t: f64, half: f64) -> f64 {
    let e = |z: f64| 1.0 / (1.0 + (-2.0 * z).exp());
    e(t + half) * e(half - t)
}

/// Raw sprite centered on the raster, shape parameters jittered by `seed`.
/// Sizes scale with the smaller raster side.
pub fn sprite(kind: SpriteKind, width: usize, height: usize, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    let unit = width.min(height) as f64 / 16.0;
    let mut jitter = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
    match kind {
        SpriteKind::Blob => {
            let (sx, sy) = (jitter(1.2, 2.0) * unit, jitter(2.2, 3.2) * unit);
            let th = jitter(0.0, std::f64::consts::PI);
            let (c, s) = (th.cos(), th.sin());
            render(width, height, |x, y| {
                let (u, v) = (c * x + s * y, -s * x + c * y);
                (-(u * u) / (2.0 * sx * sx) - v * v / (2.0 * sy * sy)).exp()
            })
        }
        SpriteKind::BarComposite => {
            let (len, thick) = (jitter(3.0, 4.5) * unit, jitter(0.6, 1.0) * unit);
            let off = jitter(1.0, 2.5) * unit;
            render(width, height, |x, y| {
                let horizontal = soft_box(x, len) * soft_box(y + off, thick);
                let vertical = soft_box(x - off, thick) * soft_box(y, len);
                horizontal.max(vertical)
            })
        }
        SpriteKind::Ring => {
            let (r0, w) = (jitter(3.0, 4.5) * unit, jitter(0.6, 1.0) * unit);
            render(width, height, |x, y| {
                let d = x.hypot(y) - r0;
                (-(d * d) / (2.0 * w * w)).exp()
            })
        }
    }
}

/// Schematic face: elliptic outline, two eyes, a mouth bar.
pub fn face_proxy(width: usize, height: usize) -> Image {
    let u = width.min(height) as f64 / 16.0;
    render(width, height, |x, y| {
        let e = (x / (5.5 * u)).hypot(y / (6.5 * u)) - 1.0;
        let outline = (-(e * e) / (2.0 * 0.012)).exp();
        let eye = |ex: f64| (-((x - ex).powi(2) + (y + 1.8 * u).powi(2)) / (2.0 * (0.8 * u).powi(2))).exp();
        let mouth = soft_box(x, 2.2 * u) * soft_box(y - 2.8 * u, 0.5 * u);
        outline + eye(-2.2 * u) + eye(2.2 * u) + mouth
    })
}

/// Normalized faces, each under its own seeded value-noise warp at r = 1.
pub fn warped_faces(width: usize, height: usize, count: usize, radius: f64, seed: u64) -> Result<Vec<Image>> {
    let face = face_proxy(width, height);
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let w = SmoothWarp::value_noise(width, height, rng.next_u64(), radius, 1.0)?;
            normalize(&warp(&w, 1.0, &face)?)
        })
        .collect()
}

/// One-dimensional localization fixture on `Cyclic1D(d)`: an image
/// supported on `[-b', b']`, one template supported on `[-a, a]` (both
/// zero-sum before normalization, so supports survive it) and the pooling
/// window `[-b, b]`. Shifts up to `b - b' - a` keep every nonzero response
/// inside the window.
#[derive(Clone, Debug)]
pub struct BoundaryFixture {
    pub image: Image,
    pub bank: TemplateBank,
    pub window: PoolingWindow,
    pub a: usize,
    pub b_prime: usize,
    pub b: usize,
}

impl BoundaryFixture {
    pub fn x_max(&self) -> usize {
        self.b - self.b_prime - self.a
    }

    pub fn group(&self) -> &GroupSpec {
        &self.bank.group
    }
}

/// Zero-sum values on `2 r + 1` points with both end values of magnitude
/// at least 1 before normalization.
fn zero_sum_bump(r: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = 2 * r + 1;
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
    v[0] = 1.0 + rng.next_f64();
    v[n - 1] = -(1.0 + rng.next_f64());
    let sum: f64 = v.iter().sum();
    // the correction goes to interior points only
    if n > 2 {
        let c = sum / (n - 2) as f64;
        for x in &mut v[1..n - 1] {
            *x -= c;
        }
    } else {
        v[0] = 1.0;
        v[n - 1] = -1.0;
    }
    v
}

fn place_centered(d: usize, values: &[f64]) -> Vec<f64> {
    let r = (values.len() / 2) as isize;
    let mut out = vec![0.0; d];
    for (i, v) in values.iter().enumerate() {
        out[(i as isize - r).rem_euclid(d as isize) as usize] = *v;
    }
    out
}

pub fn boundary_fixture(d: usize, a: usize, b_prime: usize, b: usize, seed: u64) -> Result<BoundaryFixture> {
    if a == 0 || b < b_prime + a || 2 * b + 1 > d || 2 * (b + a + b_prime) + 2 > d {
        return Err(Error::Config(format!("boundary fixture needs a >= 1, b >= b'+a and room on Cyclic1D({d})")));
    }
    let mut rng = SplitMix64::new(seed);
    let group = GroupSpec::Cyclic1D { d };
    let image = exact_normalize(place_centered(d, &zero_sum_bump(b_prime, &mut rng)))?;
    let t = exact_normalize(place_centered(d, &zero_sum_bump(a, &mut rng)))?;
    let bank = TemplateBank::from_templates(group.clone(), Provenance::Explicit, vec![t])?;
    let window = PoolingWindow::interval(&group, -(b as isize), b as isize)?;
    Ok(BoundaryFixture { image, bank, window, a, b_prime, b })
}

/// Centers the nonzero entries and scales to unit norm, leaving zeros
/// untouched so the support is preserved exactly.
fn exact_normalize(data: Vec<f64>) -> Result<Image> {
    let nz: Vec<usize> = (0..data.len()).filter(|&i| data[i] != 0.0).collect();
    let mean = nz.iter().map(|&i| data[i]).sum::<f64>() / data.len() as f64;
    let mut out = data;
    for &i in &nz {
        out[i] -= mean;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    Image::from_signal(out.iter().map(|v| v / norm).collect())?.assume_normalized()
}

/// Zero-sum random patch of radius `r` around the identity pixel of a
/// `w x h` torus, normalized without touching the zeros.
pub fn compact_patch(w: usize, h: usize, r: usize, seed: u64) -> Result<Image> {
    let group = GroupSpec::Torus2D { w, h };
    let mut rng = SplitMix64::new(seed);
    let side = 2 * r + 1;
    let mut v: Vec<f64> = (0..side * side).map(|_| rng.next_normal()).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let mut data = vec![0.0; w * h];
    for (i, x) in v.iter().enumerate() {
        let (dx, dy) = ((i % side) as isize - r as isize, (i / side) as isize - r as isize);
        let p = group.torus_element(dx, dy).ok_or_else(|| Error::Config("patch larger than raster".into()))?;
        data[p] = *x;
    }
    let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let img = Image::new(w, h, data.iter().map(|x| x / norm).collect())?;
    img.assume_normalized()
}

fn box_support(group: &GroupSpec, r: usize) -> Vec<usize> {
    let r = r as isize;
    let mut s: Vec<usize> =
        (-r..=r).flat_map(|y| (-r..=r).map(move |x| (x, y))).filter_map(|(x, y)| group.torus_element(x, y)).collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Layered fixture on `Torus2D(n, n)`: compact zero-sum first-layer
/// templates of radius `t_radius`, then feature templates of radius
/// `feature_radius` cut from forwarded exemplar maps. `windows` gives the
/// half-width of each layer's box window (`None` is the whole group) and
/// `pooling` the per-layer spec.
pub fn layered_fixture(
    n: usize,
    k: usize,
    t_radius: usize,
    feature_radius: usize,
    windows: &[Option<usize>],
    pooling: &[PoolingSpec],
    seed: u64,
) -> Result<Vec<LayerConfig>> {
    if windows.len() != pooling.len() || windows.is_empty() {
        return Err(Error::Config("one window and one pooling spec per layer".into()));
    }
    let group = GroupSpec::Torus2D { w: n, h: n };
    let window = |r: Option<usize>| match r {
        Some(r) => PoolingWindow::centered_box(&group, r, r),
        None => Ok(PoolingWindow::full(&group)),
    };
    let mut rng = SplitMix64::new(seed);
    let templates = (0..k).map(|_| compact_patch(n, n, t_radius, rng.next_u64())).collect::<Result<Vec<_>>>()?;
    let bank = TemplateBank::from_templates(group.clone(), Provenance::Explicit, templates)?;
    let mut layers = vec![LayerConfig { window: window(windows[0])?, bank: LayerBank::Image(bank), pooling: pooling[0].clone() }];
    let exemplars = (0..4).map(|_| compact_patch(n, n, t_radius + 1, rng.next_u64())).collect::<Result<Vec<_>>>()?;
    let support = box_support(&group, feature_radius);
    for l in 1..windows.len() {
        let maps = exemplars
            .iter()
            .map(|e| Ok(forward(e, &layers)?.maps.pop().expect("one map per layer")))
            .collect::<Result<Vec<_>>>()?;
        let fb = sample_feature_bank(&maps, &group, k, &support, rng.next_u64())?;
        layers.push(LayerConfig { window: window(windows[l])?, bank: LayerBank::Feature(fb), pooling: pooling[l].clone() });
    }
    Ok(layers)
}

/// Three nested layers on Torus2D(16,16): windows of half-width 1 and 3,
/// then the whole group, and a compact image with a two-pixel shift. The
/// shift leaves the first window, is partly absorbed by the second and
/// fully by the third.
pub fn whole_and_parts_fixture(seed: u64) -> Result<(Image, Vec<LayerConfig>, usize)> {
    let spec = PoolingSpec::cdf(4, 0.1);
    let layers = layered_fixture(16, 3, 1, 0, &[Some(1), Some(3), None], &[spec.clone(), spec.clone(), spec], seed)?;
    let image = compact_patch(16, 16, 1, derive_seed(seed, "image"))?;
    let shift = GroupSpec::Torus2D { w: 16, h: 16 }.torus_element(2, 0).expect("in range");
    Ok((image, layers, shift))
}

//! Finite groups acting on rasters, pooling windows on them, and the smooth
//! non-group warp family.
//!
//! Elements are indexed `0..order`, index 0 is the identity and
//! `compose(a, b)` is `a ∘ b` (apply `b` first). Actions follow
//! `(gI)(x) = I(g⁻¹x)`. Cyclic1D, Torus2D, Rot4 and Dihedral8 permute
//! pixels exactly; ScaleSet and RotInterp resample bilinearly and are
//! flagged approximate.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::image::Image;
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GroupSpec {
    /// Cyclic shifts of a length-`d` signal.
    Cyclic1D { d: usize },
    /// Periodic translations of a `w x h` raster; element `sy * w + sx`
    /// shifts by `(sx, sy)`.
    Torus2D { w: usize, h: usize },
    /// Quarter turns of an `n x n` raster; element k rotates k times.
    Rot4 { n: usize },
    /// Symmetries of an `n x n` square: 0..4 are rotations, `4 + k` is
    /// rotation k after a horizontal flip.
    Dihedral8 { n: usize },
    /// Dilations about the raster center by a geometric progression of
    /// rational factors `scales[k] = q^k`. Composition adds exponents
    /// modulo the set size, so the table is only a labelling.
    ScaleSet { w: usize, h: usize, scales: Vec<(i64, i64)> },
    /// Rotations by multiples of `2π / n_angles` about the raster center.
    RotInterp { w: usize, h: usize, n_angles: usize },
}

// Dihedral composition on (rotation, flip) pairs:
// (a, x)(b, y) = (a + (-1)^x b, x + y).
fn d4_compose(a: usize, b: usize) -> usize {
    let (ra, fa) = (a % 4, a / 4);
    let (rb, fb) = (b % 4, b / 4);
    let r = if fa == 0 { (ra + rb) % 4 } else { (ra + 4 - rb) % 4 };
    r + 4 * ((fa + fb) % 2)
}

impl GroupSpec {
    pub fn order(&self) -> usize {
        match self {
            GroupSpec::Cyclic1D { d } => *d,
            GroupSpec::Torus2D { w, h } => w * h,
            GroupSpec::Rot4 { .. } => 4,
            GroupSpec::Dihedral8 { .. } => 8,
            GroupSpec::ScaleSet { scales, .. } => scales.len(),
            GroupSpec::RotInterp { n_angles, .. } => *n_angles,
        }
    }

    /// Raster size the group acts on.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            GroupSpec::Cyclic1D { d } => (*d, 1),
            GroupSpec::Torus2D { w, h } => (*w, *h),
            GroupSpec::Rot4 { n } | GroupSpec::Dihedral8 { n } => (*n, *n),
            GroupSpec::ScaleSet { w, h, .. } | GroupSpec::RotInterp { w, h, .. } => (*w, *h),
        }
    }

    /// True for kinds that act by exact pixel permutations.
    pub fn is_exact(&self) -> bool {
        matches!(
            self,
            GroupSpec::Cyclic1D { .. }
                | GroupSpec::Torus2D { .. }
                | GroupSpec::Rot4 { .. }
                | GroupSpec::Dihedral8 { .. }
        )
    }

    pub fn is_abelian(&self) -> bool {
        !matches!(self, GroupSpec::Dihedral8 { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{self:?}: {m}")));
        match self {
            GroupSpec::Cyclic1D { d } if *d < 2 => bad("needs d >= 2"),
            GroupSpec::Torus2D { w, h } if w * h < 2 => bad("needs at least two pixels"),
            GroupSpec::Rot4 { n } | GroupSpec::Dihedral8 { n } if *n < 2 => bad("needs n >= 2"),
            GroupSpec::RotInterp { n_angles, .. } if *n_angles < 1 => bad("needs n_angles >= 1"),
            GroupSpec::ScaleSet { scales, .. } => {
                if scales.is_empty() || scales[0] != (1, 1) {
                    return bad("first scale must be 1/1");
                }
                if scales.iter().any(|&(p, q)| p <= 0 || q <= 0) {
                    return bad("scales must be positive rationals");
                }
                if scales.len() > 1 {
                    let q = ratio(scales[1]);
                    for (k, &s) in scales.iter().enumerate() {
                        if (ratio(s) - q.powi(k as i32)).abs() > 1e-12 * q.powi(k as i32) {
                            return bad("scales must form a geometric progression");
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn check_element(&self, g: usize) -> Result<()> {
        if g < self.order() {
            Ok(())
        } else {
            Err(Error::InvalidElement { element: g, order: self.order() })
        }
    }

    /// `a ∘ b`.
    pub fn compose(&self, a: usize, b: usize) -> usize {
        match self {
            GroupSpec::Torus2D { w, h } => {
                let (ax, ay) = (a % w, a / w);
                let (bx, by) = (b % w, b / w);
                ((ay + by) % h) * w + (ax + bx) % w
            }
            GroupSpec::Dihedral8 { .. } => d4_compose(a, b),
            _ => (a + b) % self.order(),
        }
    }

    pub fn inverse(&self, a: usize) -> usize {
        match self {
            GroupSpec::Torus2D { w, h } => {
                let (ax, ay) = (a % w, a / w);
                ((h - ay) % h) * w + (w - ax) % w
            }
            GroupSpec::Dihedral8 { .. } => {
                if a >= 4 {
                    a
                } else {
                    (4 - a) % 4
                }
            }
            _ => {
                let n = self.order();
                (n - a % n) % n
            }
        }
    }

    /// Torus element for the (possibly negative) shift `(sx, sy)`.
    pub fn torus_element(&self, sx: isize, sy: isize) -> Option<usize> {
        match self {
            GroupSpec::Torus2D { w, h } => {
                let x = sx.rem_euclid(*w as isize) as usize;
                let y = sy.rem_euclid(*h as isize) as usize;
                Some(y * w + x)
            }
            GroupSpec::Cyclic1D { d } if sy == 0 => Some(sx.rem_euclid(*d as isize) as usize),
            _ => None,
        }
    }

    /// Signed shift `(sx, sy)` of a translation element, each component in
    /// `(-n/2, n/2]`.
    pub fn torus_shift(&self, g: usize) -> Option<(isize, isize)> {
        let signed = |v: usize, n: usize| {
            let v = v as isize;
            let n = n as isize;
            if v > n / 2 {
                v - n
            } else {
                v
            }
        };
        match self {
            GroupSpec::Torus2D { w, h } => Some((signed(g % w, *w), signed(g / w, *h))),
            GroupSpec::Cyclic1D { d } => Some((signed(g, *d), 0)),
            _ => None,
        }
    }

    /// Pixel index that `g` moves pixel `p` to, for permutation kinds.
    fn point_map(&self, g: usize, p: usize) -> usize {
        match self {
            GroupSpec::Cyclic1D { d } => (p + g) % d,
            GroupSpec::Torus2D { w, h } => {
                let (x, y) = (p % w, p / w);
                ((y + g / w) % h) * w + (x + g % w) % w
            }
            GroupSpec::Rot4 { n } | GroupSpec::Dihedral8 { n } => {
                let n = *n;
                let (mut x, mut y) = (p % n, p / n);
                if g >= 4 {
                    x = n - 1 - x;
                }
                for _ in 0..g % 4 {
                    (x, y) = (n - 1 - y, x);
                }
                y * n + x
            }
            _ => unreachable!("point_map on an interpolated kind"),
        }
    }

    /// Source pixel for each output pixel of `act(g, ·)`: output `i` reads
    /// input `source_indices(g)[i]`. Permutation kinds only.
    pub fn source_indices(&self, g: usize) -> Vec<usize> {
        let inv = self.inverse(g);
        let (w, h) = self.dims();
        (0..w * h).map(|p| self.point_map(inv, p)).collect()
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let (w, h) = self.dims();
        let ok = match self {
            GroupSpec::Cyclic1D { d } => image.len() == *d,
            _ => image.width == w && image.height == h,
        };
        if ok {
            Ok(())
        } else {
            Err(mismatch(format!("{w}x{h} raster"), format!("{}x{}", image.width, image.height)))
        }
    }

    /// `gI`.
    pub fn act(&self, g: usize, image: &Image) -> Result<Image> {
        self.check_element(g)?;
        self.check_image(image)?;
        if g == 0 {
            return Ok(image.clone());
        }
        match self {
            GroupSpec::ScaleSet { scales, .. } => {
                let s = ratio(scales[g]);
                Ok(resample_zero(image, |x, y, cx, cy| ((x - cx) / s + cx, (y - cy) / s + cy)))
            }
            GroupSpec::RotInterp { n_angles, .. } => {
                let theta = std::f64::consts::TAU * g as f64 / *n_angles as f64;
                let (s, c) = theta.sin_cos();
                // inverse rotation of the output coordinate
                Ok(resample_zero(image, |x, y, cx, cy| {
                    let (dx, dy) = (x - cx, y - cy);
                    (c * dx + s * dy + cx, -s * dx + c * dy + cy)
                }))
            }
            _ => {
                let inv = self.inverse(g);
                let data = (0..image.len()).map(|p| image.data[self.point_map(inv, p)]).collect();
                Ok(image.with_data(data, image.is_normalized()))
            }
        }
    }

    /// `[gI for g in 0..order]`.
    pub fn orbit(&self, image: &Image) -> Result<Vec<Image>> {
        (0..self.order()).map(|g| self.act(g, image)).collect()
    }
}

fn ratio((p, q): (i64, i64)) -> f64 {
    p as f64 / q as f64
}

/// Bilinear resampling with zero padding outside the raster. `map` takes
/// output coordinates and the raster center and returns the source point.
fn resample_zero(image: &Image, map: impl Fn(f64, f64, f64, f64) -> (f64, f64)) -> Image {
    let (w, h) = (image.width, image.height);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let fetch = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            image.data[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64, cx, cy);
            out.push(bilinear(sx, sy, fetch));
        }
    }
    image.with_data(out, false)
}

fn bilinear(sx: f64, sy: f64, fetch: impl Fn(isize, isize) -> f64) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
    let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Exhaustive axiom check from the composition table: closure, identity,
/// inverses, and associativity (all triples up to order 64, a seeded
/// sample of 20k triples above).
pub fn verify_axioms(group: &GroupSpec) -> std::result::Result<(), String> {
    let n = group.order();
    for a in 0..n {
        if group.compose(0, a) != a || group.compose(a, 0) != a {
            return Err(format!("identity fails at {a}"));
        }
        let inv = group.inverse(a);
        if inv >= n || group.compose(a, inv) != 0 || group.compose(inv, a) != 0 {
            return Err(format!("inverse fails at {a}"));
        }
        for b in 0..n {
            if group.compose(a, b) >= n {
                return Err(format!("closure fails at ({a},{b})"));
            }
        }
    }
    let assoc = |a: usize, b: usize, c: usize| {
        group.compose(group.compose(a, b), c) == group.compose(a, group.compose(b, c))
    };
    if n <= 64 {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if !assoc(a, b, c) {
                        return Err(format!("associativity fails at ({a},{b},{c})"));
                    }
                }
            }
        }
    } else {
        let mut rng = SplitMix64::new(0xA550C);
        for _ in 0..20_000 {
            let (a, b, c) = (rng.next_below(n), rng.next_below(n), rng.next_below(n));
            if !assoc(a, b, c) {
                return Err(format!("associativity fails at ({a},{b},{c})"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- windows

/// A subset G₀ of a group, the range a complex cell pools over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingWindow {
    pub group: GroupSpec,
    members: Vec<usize>,
}

impl PoolingWindow {
    /// Sorts the members; rejects empty lists, duplicates and invalid indices.
    pub fn new(group: GroupSpec, mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyWindow);
        }
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate window members".into()));
        }
        if let Some(&bad) = members.iter().find(|&&m| m >= group.order()) {
            return Err(Error::InvalidElement { element: bad, order: group.order() });
        }
        Ok(Self { group, members })
    }

    pub fn full(group: &GroupSpec) -> Self {
        Self { group: group.clone(), members: (0..group.order()).collect() }
    }

    /// Translations with `|sx| <= rx` and `|sy| <= ry` on a torus (or a
    /// signed interval on a cycle when `ry = 0`).
    pub fn centered_box(group: &GroupSpec, rx: usize, ry: usize) -> Result<Self> {
        let mut members = Vec::new();
        for sy in -(ry as isize)..=ry as isize {
            for sx in -(rx as isize)..=rx as isize {
                let g = group
                    .torus_element(sx, sy)
                    .ok_or_else(|| Error::Config(format!("box windows need a translation group, got {group:?}")))?;
                members.push(g);
            }
        }
        members.sort_unstable();
        members.dedup();
        Self::new(group.clone(), members)
    }

    /// Signed shift interval `[lo, hi]` on Cyclic1D.
    pub fn interval(group: &GroupSpec, lo: isize, hi: isize) -> Result<Self> {
        let mut members: Vec<usize> = (lo..=hi)
            .map(|s| group.torus_element(s, 0).ok_or_else(|| Error::Config("interval needs Cyclic1D".into())))
            .collect::<Result<_>>()?;
        members.sort_unstable();
        members.dedup();
        Self::new(group.clone(), members)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() == self.group.order()
    }

    pub fn contains(&self, g: usize) -> bool {
        self.members.binary_search(&g).is_ok()
    }

    pub fn is_subset_of(&self, other: &PoolingWindow) -> bool {
        self.group == other.group && self.members.iter().all(|&m| other.contains(m))
    }

    /// Stable identifier: "full" or an FNV hash of the member list.
    pub fn id(&self) -> String {
        if self.is_full() {
            return "full".into();
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in &self.members {
            for b in (*m as u64).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("pog-{h:016x}")
    }
}

/// `gG₀ = {g ∘ h : h ∈ G₀}`.
pub fn window_shift(window: &PoolingWindow, g: usize) -> Result<PoolingWindow> {
    window.group.check_element(g)?;
    let mut members: Vec<usize> = window.members.iter().map(|&h| window.group.compose(g, h)).collect();
    members.sort_unstable();
    Ok(PoolingWindow { group: window.group.clone(), members })
}

// ---------------------------------------------------------------- warps

/// One-parameter family `T_r(I)(x) = I(x - r τ(x))` on a periodic raster.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothWarp {
    dx: Image,
    dy: Image,
    /// Declared bound on `|τ(x)|`.
    pub radius: f64,
    /// Declared bound on `|r|`.
    pub r_max: f64,
}

#[derive(Serialize, Deserialize)]
struct WarpFile {
    dx: Image,
    dy: Image,
    radius: f64,
    r_max: f64,
}

impl SmoothWarp {
    pub fn new(dx: Image, dy: Image, radius: f64, r_max: f64) -> Result<Self> {
        dx.check_dims(&dy)?;
        let max = dx
            .data
            .iter()
            .zip(&dy.data)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max);
        if max > radius * (1.0 + 1e-12) {
            return Err(Error::Config(format!("displacement {max} exceeds radius {radius}")));
        }
        if !(r_max >= 0.0) {
            return Err(Error::Config("r_max must be non-negative".into()));
        }
        Ok(Self { dx, dy, radius, r_max })
    }

    /// Constant displacement `τ(x) = (tx, ty)`.
    pub fn constant(width: usize, height: usize, tx: f64, ty: f64, r_max: f64) -> Result<Self> {
        let dx = Image::new(width, height, vec![tx; width * height])?;
        let dy = Image::new(width, height, vec![ty; width * height])?;
        Self::new(dx, dy, tx.hypot(ty), r_max)
    }

    /// Two-octave periodic value noise (lattices of 4 and 8 cells per axis,
    /// the finer at half amplitude), rescaled so `max |τ| = radius`.
    pub fn value_noise(width: usize, height: usize, seed: u64, radius: f64, r_max: f64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let mut field = || {
            let mut acc = vec![0.0; width * height];
            for (cells, amp) in [(4usize, 1.0), (8usize, 0.5)] {
                let lattice: Vec<f64> = (0..cells * cells).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
                for y in 0..height {
                    for x in 0..width {
                        let u = x as f64 * cells as f64 / width as f64;
                        let v = y as f64 * cells as f64 / height as f64;
                        acc[y * width + x] += amp * value_noise_at(&lattice, cells, u, v);
                    }
                }
            }
            acc
        };
        let fx = field();
        let fy = field();
        let max = fx.iter().zip(&fy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
        let s = if max > 0.0 { radius / max } else { 0.0 };
        let dx = Image::new(width, height, fx.iter().map(|v| v * s).collect())?;
        let dy = Image::new(width, height, fy.iter().map(|v| v * s).collect())?;
        Self::new(dx, dy, radius, r_max)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dx.width, self.dx.height)
    }

    pub fn displacement(&self, p: usize) -> (f64, f64) {
        (self.dx.data[p], self.dy.data[p])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&WarpFile {
            dx: self.dx.clone(),
            dy: self.dy.clone(),
            radius: self.radius,
            r_max: self.r_max,
        })
        .expect("warp serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: WarpFile = serde_json::from_str(s)?;
        let dx = Image::new(f.dx.width, f.dx.height, f.dx.data)?;
        let dy = Image::new(f.dy.width, f.dy.height, f.dy.data)?;
        Self::new(dx, dy, f.radius, f.r_max)
    }
}

fn value_noise_at(lattice: &[f64], cells: usize, u: f64, v: f64) -> f64 {
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (i0, j0) = (u.floor() as usize % cells, v.floor() as usize % cells);
    let (i1, j1) = ((i0 + 1) % cells, (j0 + 1) % cells);
    let (fu, fv) = (smooth(u - u.floor()), smooth(v - v.floor()));
    let at = |i: usize, j: usize| lattice[j * cells + i];
    let top = at(i0, j0) * (1.0 - fu) + at(i1, j0) * fu;
    let bottom = at(i0, j1) * (1.0 - fu) + at(i1, j1) * fu;
    top * (1.0 - fv) + bottom * fv
}

/// `T_r(I)`: bilinear periodic sample of `I` at `x - r τ(x)`.
pub fn warp(w: &SmoothWarp, r: f64, image: &Image) -> Result<Image> {
    if !(r.abs() <= w.r_max) {
        return Err(Error::OutOfRange { r, max: w.r_max });
    }
    let (width, height) = w.dims();
    if image.width != width || image.height != height {
        return Err(mismatch(format!("{width}x{height}"), format!("{}x{}", image.width, image.height)));
    }
    if r == 0.0 {
        return Ok(image.clone());
    }
    let fetch = |x: isize, y: isize| {
        let x = x.rem_euclid(width as isize) as usize;
        let y = y.rem_euclid(height as isize) as usize;
        image.data[y * width + x]
    };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (tx, ty) = w.displacement(y * width + x);
            out.push(bilinear(x as f64 - r * tx, y as f64 - r * ty, fetch));
        }
    }
    Ok(image.with_data(out, false))
}

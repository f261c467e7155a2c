//! Brute-force ground truth on finite groups: canonical orbits, exact
//! comparison of projection distributions, the orbit Hausdorff distance, and
//! the template-count calibration.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::group::{GroupSpec, PoolingWindow};
use crate::hw::{pool, PoolingSpec};
use crate::image::{dot_slices, normalize, Image};
use crate::rng::SplitMix64;

/// Values closer than this are identified.
pub const ORBIT_TOL: f64 = 1e-9;

/// The orbit of an image as a sorted list of rasters.
#[derive(Clone, Debug)]
pub struct OrbitSet {
    members: Vec<Image>,
}

fn rounded(v: f64) -> f64 {
    (v / ORBIT_TOL).round()
}

fn raster_order(a: &Image, b: &Image) -> Ordering {
    for (x, y) in a.data.iter().zip(&b.data) {
        match rounded(*x).total_cmp(&rounded(*y)) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl OrbitSet {
    pub fn new(image: &Image, group: &GroupSpec) -> Result<Self> {
        let mut members = group.orbit(image)?;
        members.sort_by(raster_order);
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Image] {
        &self.members
    }

    pub fn approx_eq(&self, other: &OrbitSet) -> bool {
        self.members.len() == other.members.len()
            && self.members.iter().zip(&other.members).all(|(a, b)| {
                a.same_dims(b) && a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= ORBIT_TOL)
            })
    }
}

/// True iff the two images have the same orbit.
pub fn orbits_equal(a: &Image, b: &Image, group: &GroupSpec) -> Result<bool> {
    a.check_dims(b)?;
    Ok(OrbitSet::new(a, group)?.approx_eq(&OrbitSet::new(b, group)?))
}

/// Compares, template by template, the sorted projections `<gI, t>` over
/// the group. Unequal multisets prove the orbits differ; equal multisets on
/// finitely many templates are only evidence that they coincide.
pub fn distributions_equal(a: &Image, b: &Image, group: &GroupSpec, templates: &[Image]) -> Result<bool> {
    if templates.is_empty() {
        return Err(Error::EmptyBank);
    }
    a.check_dims(b)?;
    let oa = group.orbit(a)?;
    let ob = group.orbit(b)?;
    for t in templates {
        a.check_dims(t)?;
        let project = |orbit: &[Image]| {
            let mut v: Vec<f64> = orbit.iter().map(|gi| dot_slices(&gi.data, &t.data)).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let (pa, pb) = (project(&oa), project(&ob));
        if pa.iter().zip(&pb).any(|(x, y)| (x - y).abs() > ORBIT_TOL) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `min_{g, g'} ||gI - g'I'||`, computed as `min_g ||I - gI'||` (valid for
/// permutation actions, which are isometries).
pub fn hausdorff_orbit_distance(a: &Image, b: &Image, group: &GroupSpec) -> Result<f64> {
    a.check_dims(b)?;
    if !group.is_exact() {
        return Err(Error::Config("orbit Hausdorff distance needs a permutation group".into()));
    }
    let mut best = f64::INFINITY;
    for g in 0..group.order() {
        best = best.min(a.distance(&group.act(g, b)?)?);
    }
    Ok(best)
}

// ---------------------------------------------------------------- calibration

/// Per-template signature rows for a set of images, computed once from a
/// large template reservoir so that the reference distance and all subset
/// estimates share the same numbers.
pub struct Reservoir {
    n_images: usize,
    k_ref: usize,
    /// `pair_terms[p][k] = ||μ^k(I_i) - μ^k(I_j)||` for pair p = (i, j), i < j.
    pair_terms: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
}

impl Reservoir {
    /// Draws `k_ref` random templates from `seed` and pools each image's
    /// projections over the whole group with `spec`.
    pub fn build(images: &[Image], group: &GroupSpec, spec: &PoolingSpec, k_ref: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if k_ref == 0 {
            return Err(Error::EmptyBank);
        }
        let (w, h) = group.dims();
        let full = PoolingWindow::full(group);
        let mut rng = SplitMix64::new(seed);
        let raw: Vec<Image> = (0..k_ref)
            .map(|_| Image::new(w, h, (0..w * h).map(|_| rng.next_normal()).collect()))
            .collect::<Result<_>>()?;
        // rows[k][i] = μ^k(I_i)
        let rows: Vec<Vec<Vec<f64>>> = raw
            .par_iter()
            .map(|t| {
                let t = normalize(t)?;
                let orbit = group.orbit(&t)?;
                images
                    .iter()
                    .map(|img| {
                        let nu: Vec<f64> = orbit.iter().map(|gt| dot_slices(&img.data, &gt.data)).collect();
                        pool(&nu, &full, spec)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let n = images.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let pair_terms = pairs
            .iter()
            .map(|&(i, j)| {
                rows.iter()
                    .map(|r| r[i].iter().zip(&r[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        Ok(Self { n_images: n, k_ref, pair_terms, pairs })
    }

    pub fn k_ref(&self) -> usize {
        self.k_ref
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pairs.binary_search(&(i, j)).expect("valid pair")
    }

    /// `d̂_K` over the given reservoir templates (summed in index order).
    pub fn estimate(&self, i: usize, j: usize, subset: &[usize]) -> f64 {
        let terms = &self.pair_terms[self.pair_index(i, j)];
        subset.iter().map(|&k| terms[k]).sum::<f64>() / subset.len() as f64
    }

    /// Reference distance `d` from the first `k` reservoir templates.
    pub fn reference_with(&self, i: usize, j: usize, k: usize) -> f64 {
        let terms = &self.pair_terms[self.pair_index(i, j)];
        terms[..k].iter().sum::<f64>() / k as f64
    }

    pub fn reference(&self, i: usize, j: usize) -> f64 {
        self.reference_with(i, j, self.k_ref)
    }

    /// Largest `|d - d̂|` over all pairs inside `images` for one subset.
    fn worst_error(&self, images: &[usize], subset: &[usize], k_ref: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, &i) in images.iter().enumerate() {
            for &j in &images[a + 1..] {
                worst = worst.max((self.reference_with(i, j, k_ref) - self.estimate(i, j, subset)).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Search range upper bound; the reservoir holds `64 * k_upper` templates.
    pub k_upper: usize,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub n: usize,
    pub k_measured: usize,
    pub c_fit: f64,
}

/// Smallest K such that, for a majority of seeds, a seeded K-subset of the
/// reservoir estimates every pairwise distance within epsilon. `images`
/// indexes into the reservoir's image list; the reference uses the first
/// `64 * k_upper` reservoir templates.
pub fn calibrate_on(reservoir: &Reservoir, images: &[usize], cfg: &CalibrationConfig) -> Result<Calibration> {
    let n = images.len();
    if n < 2 {
        return Err(Error::Config("calibration needs at least two images".into()));
    }
    let k_ref = 64 * cfg.k_upper;
    if k_ref > reservoir.k_ref() {
        return Err(Error::Config(format!("reservoir holds {} templates, need {k_ref}", reservoir.k_ref())));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("calibration needs at least one seed".into()));
    }
    let passes = |k: usize| {
        let ok = cfg
            .seeds
            .iter()
            .filter(|&&s| {
                let subset = SplitMix64::new(s ^ (k as u64).wrapping_mul(0x9E37_79B9)).sample_indices(k_ref, k);
                reservoir.worst_error(images, &subset, k_ref) <= cfg.epsilon
            })
            .count();
        2 * ok > cfg.seeds.len()
    };
    if !passes(cfg.k_upper) {
        return Err(Error::Config(format!("epsilon {} not reached with K = {}", cfg.epsilon, cfg.k_upper)));
    }
    let (mut lo, mut hi) = (1, cfg.k_upper);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if passes(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let c_fit = 2.0 * (n as f64 / cfg.delta).ln() / (lo as f64 * cfg.epsilon * cfg.epsilon);
    Ok(Calibration { n, k_measured: lo, c_fit })
}

/// Full calibration on a set of images: checks that all orbits are distinct,
/// builds the reservoir and searches for K.
pub fn calibrate_template_count(
    images: &[Image],
    group: &GroupSpec,
    spec: &PoolingSpec,
    cfg: &CalibrationConfig,
    reservoir_seed: u64,
) -> Result<Calibration> {
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            if orbits_equal(&images[i], &images[j], group)? {
                return Err(Error::OrbitsNotDistinct(i, j));
            }
        }
    }
    let reservoir = Reservoir::build(images, group, spec, 64 * cfg.k_upper, reservoir_seed)?;
    let all: Vec<usize> = (0..images.len()).collect();
    calibrate_on(&reservoir, &all, cfg)
}

/// Largest change of any pairwise reference distance when the reservoir
/// doubles from `k_ref / 2` to `k_ref` templates.
pub fn reservoir_drift(reservoir: &Reservoir) -> f64 {
    let half = reservoir.k_ref / 2;
    reservoir
        .pairs
        .iter()
        .map(|&(i, j)| (reservoir.reference(i, j) - reservoir.reference_with(i, j, half)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        normalize(&Image::new(w, h, (0..w * h).map(|_| rng.next_normal()).collect()).unwrap()).unwrap()
    }

    fn templates(n: usize, k: usize, seed: u64) -> Vec<Image> {
        (0..k).map(|i| seeded(n, n, seed + i as u64)).collect()
    }

    #[test]
    fn same_orbit_is_equal() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let i = seeded(4, 4, 1);
        assert!(orbits_equal(&i, &i, &g).unwrap());
        for e in 0..16 {
            let gi = g.act(e, &i).unwrap();
            assert!(orbits_equal(&i, &gi, &g).unwrap());
            assert!(distributions_equal(&i, &gi, &g, &templates(4, 3, 50)).unwrap());
        }
    }

    #[test]
    fn perturbed_image_leaves_the_orbit() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let i = seeded(4, 4, 2);
        let mut rng = SplitMix64::new(3);
        let p = Image::new(4, 4, (0..16).map(|_| rng.next_normal()).collect()).unwrap();
        let p = p.scaled(0.1 / p.norm());
        let j = normalize(&Image::new(4, 4, i.add(&p).unwrap().data).unwrap()).unwrap();
        // exhaustive pairwise comparison of the two orbits
        let oi = g.orbit(&i).unwrap();
        let oj = g.orbit(&j).unwrap();
        let min = oi
            .iter()
            .flat_map(|a| oj.iter().map(move |b| a.distance(b).unwrap()))
            .fold(f64::INFINITY, f64::min);
        assert!(min > 1e-3);
        assert!(!orbits_equal(&i, &j, &g).unwrap());
        assert!(!distributions_equal(&i, &j, &g, &templates(4, 8, 60)).unwrap());
    }

    #[test]
    fn empty_template_list() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let i = seeded(4, 4, 2);
        assert!(matches!(distributions_equal(&i, &i, &g, &[]), Err(Error::EmptyBank)));
    }

    #[test]
    fn orbit_equality_is_an_equivalence() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let mut imgs: Vec<Image> = (0..10).map(|s| seeded(4, 4, 100 + s)).collect();
        for s in 0..10 {
            imgs.push(g.act((s * 7 + 3) as usize % 16, &imgs[s as usize]).unwrap());
        }
        let eq: Vec<Vec<bool>> = imgs
            .iter()
            .map(|a| imgs.iter().map(|b| orbits_equal(a, b, &g).unwrap()).collect())
            .collect();
        for a in 0..20 {
            assert!(eq[a][a]);
            for b in 0..20 {
                assert_eq!(eq[a][b], eq[b][a]);
                for c in 0..20 {
                    if eq[a][b] && eq[b][c] {
                        assert!(eq[a][c]);
                    }
                }
            }
        }
        assert_eq!(eq.iter().flatten().filter(|v| **v).count(), 20 + 20);
    }

    #[test]
    fn hausdorff_single_loop_matches_double_loop() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let a = seeded(4, 4, 7);
        let b = seeded(4, 4, 8);
        let oa = g.orbit(&a).unwrap();
        let ob = g.orbit(&b).unwrap();
        let double = oa
            .iter()
            .flat_map(|x| ob.iter().map(move |y| x.distance(y).unwrap()))
            .fold(f64::INFINITY, f64::min);
        let single = hausdorff_orbit_distance(&a, &b, &g).unwrap();
        assert!((single - double).abs() < 1e-12);
        assert!((single - hausdorff_orbit_distance(&b, &a, &g).unwrap()).abs() < 1e-12);
        assert!(single <= a.distance(&b).unwrap());
        assert!(hausdorff_orbit_distance(&a, &g.act(5, &a).unwrap(), &g).unwrap() < 1e-12);
    }

    #[test]
    fn calibration_rejects_shared_orbits() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let i = seeded(4, 4, 1);
        let cfg = CalibrationConfig { epsilon: 0.1, delta: 0.1, k_upper: 4, seeds: vec![1] };
        let r = calibrate_template_count(&[i.clone(), g.act(3, &i).unwrap()], &g, &PoolingSpec::cdf(8, 0.05), &cfg, 1);
        assert!(matches!(r, Err(Error::OrbitsNotDistinct(0, 1))));
    }

    #[test]
    fn full_reservoir_estimate_is_exact() {
        let g = GroupSpec::Torus2D { w: 4, h: 4 };
        let imgs: Vec<Image> = (0..3).map(|s| seeded(4, 4, 10 + s)).collect();
        let r = Reservoir::build(&imgs, &g, &PoolingSpec::cdf(8, 0.05), 32, 5).unwrap();
        let all: Vec<usize> = (0..32).collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(r.reference(i, j), r.estimate(i, j, &all));
        }
    }
}

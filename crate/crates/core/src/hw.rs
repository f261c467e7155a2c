//! The HW-module: simple cells project an image onto a stored template
//! orbit, complex cells pool a nonlinearity of those projections over a
//! window of the group. Pooling over the whole group yields an exactly
//! invariant signature; pooling over a window is invariant only when the
//! projections are localized inside it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{PoolingWindow, SmoothWarp};
use crate::image::{dot_slices, normalize, Image};
use crate::oracle::hausdorff_orbit_distance;
use crate::template::TemplateBank;

/// Slack allowed on `N * L <= 1` before the stability guard trips.
const BUDGET_SLACK: f64 = 1e-12;

/// Pooling nonlinearity family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolingSpec {
    /// Smoothed CDF bins `scale * σ_s(ν + 1 + Δ/2 - nΔ)`, n = 1..N, with
    /// the logistic `σ_s(x) = 1 / (1 + exp(-x/s))`. Bin n switches on when
    /// ν exceeds the threshold `nΔ - 1 - Δ/2`.
    CdfBins {
        n: usize,
        delta: f64,
        s: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// Raw moments `ν^p` for each listed order p.
    Moments { orders: Vec<u32> },
    /// Maximum over the window.
    Max,
}

fn unit() -> f64 {
    1.0
}

impl PoolingSpec {
    /// `N` bins with the default width `Δ = 2/N`.
    pub fn cdf(n: usize, s: f64) -> Self {
        PoolingSpec::CdfBins { n, delta: 2.0 / n as f64, s, scale: 1.0 }
    }

    /// CDF bins rescaled by `1 / (N L)` so that `N L_η = 1`.
    pub fn cdf_auto(n: usize, s: f64) -> Self {
        let mut spec = Self::cdf(n, s);
        if let PoolingSpec::CdfBins { scale, .. } = &mut spec {
            *scale = 4.0 * s / n as f64;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PoolingSpec::CdfBins { n, delta, s, scale } => {
                if *n < 2 || !(*delta > 0.0) || !(*s > 0.0) || !(*scale > 0.0) {
                    return Err(Error::Config(format!("invalid cdf_bins {self:?}")));
                }
                // first threshold at or below -1 + Δ, last at or above 1 - Δ
                if (*n as f64 + 0.5) * delta < 2.0 - 1e-12 {
                    return Err(Error::Config(format!("{n} bins of width {delta} do not tile [-1, 1]")));
                }
                Ok(())
            }
            PoolingSpec::Moments { orders } => {
                if orders.is_empty() || orders.contains(&0) {
                    return Err(Error::Config("moment orders must be nonempty and >= 1".into()));
                }
                Ok(())
            }
            PoolingSpec::Max => Ok(()),
        }
    }

    /// Values per template.
    pub fn channels(&self) -> usize {
        match self {
            PoolingSpec::CdfBins { n, .. } => *n,
            PoolingSpec::Moments { orders } => orders.len(),
            PoolingSpec::Max => 1,
        }
    }

    /// Largest Lipschitz constant of the per-channel nonlinearity on
    /// [-1, 1]: `scale / (4 s)` for the logistic, `p` for `x^p`, 1 for max
    /// (in the sup norm).
    pub fn lipschitz(&self) -> f64 {
        match self {
            PoolingSpec::CdfBins { s, scale, .. } => scale / (4.0 * s),
            PoolingSpec::Moments { orders } => orders.iter().copied().max().unwrap_or(1) as f64,
            PoolingSpec::Max => 1.0,
        }
    }

    /// `N L_η`, the quantity the stability bound needs to be at most 1.
    pub fn lipschitz_budget(&self) -> f64 {
        self.channels() as f64 * self.lipschitz()
    }

    /// `η_n(x)` for channel `n` (0-based). Not defined for max pooling.
    pub fn eta(&self, channel: usize, x: f64) -> f64 {
        match self {
            PoolingSpec::CdfBins { delta, s, scale, .. } => {
                let offset = 1.0 + delta / 2.0 - (channel + 1) as f64 * delta;
                scale * logistic((x + offset) / s)
            }
            PoolingSpec::Moments { orders } => x.powi(orders[channel] as i32),
            PoolingSpec::Max => x,
        }
    }

    pub fn id(&self) -> String {
        serde_json::to_string(self).expect("pooling spec serializes")
    }
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// K x N pooled values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub bank_id: String,
    pub pooling: PoolingSpec,
    pub window: String,
    pub values: Vec<Vec<f64>>,
}

impl Signature {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Row-major flattening.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("signature serializes")
    }
}

fn require_normalized(image: &Image) -> Result<()> {
    if image.is_normalized() {
        Ok(())
    } else {
        Err(Error::NotNormalized)
    }
}

/// `ν^k(g) = <I, g t^k>` in element order.
pub fn simple_responses(image: &Image, bank: &TemplateBank, k: usize) -> Result<Vec<f64>> {
    require_normalized(image)?;
    if k >= bank.k() {
        return Err(Error::Config(format!("template {k} out of range (K = {})", bank.k())));
    }
    let orbit = bank.orbit(k);
    image.check_dims(&orbit[0])?;
    Ok(orbit.iter().map(|gt| dot_slices(&image.data, &gt.data)).collect())
}

/// Pools `responses` (indexed by group element) over `window`. Sums run in
/// sorted member order so the result does not depend on how the window was
/// listed.
pub fn pool(responses: &[f64], window: &PoolingWindow, spec: &PoolingSpec) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if responses.len() != window.group.order() {
        return Err(crate::error::mismatch(window.group.order(), responses.len()));
    }
    let members = window.members();
    let v0 = members.len() as f64;
    Ok(match spec {
        PoolingSpec::Max => {
            vec![members.iter().map(|&g| responses[g]).fold(f64::NEG_INFINITY, f64::max)]
        }
        _ => (0..spec.channels())
            .map(|c| members.iter().map(|&g| spec.eta(c, responses[g])).sum::<f64>() / v0)
            .collect(),
    })
}

/// `Σ(I)`: one pooled row per template.
pub fn signature(image: &Image, bank: &TemplateBank, window: &PoolingWindow, spec: &PoolingSpec) -> Result<Signature> {
    spec.validate()?;
    if window.group != bank.group {
        return Err(Error::Config("window and bank act through different groups".into()));
    }
    let values = (0..bank.k())
        .into_par_iter()
        .map(|k| pool(&simple_responses(image, bank, k)?, window, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Signature { bank_id: bank.id(), pooling: spec.clone(), window: window.id(), values })
}

/// `(1/K) Σ_k ||μ^k(a) - μ^k(b)||₂`.
pub fn signature_distance(a: &Signature, b: &Signature) -> Result<f64> {
    if a.bank_id != b.bank_id || a.pooling != b.pooling || a.window != b.window || a.k() != b.k() {
        return Err(Error::IncompatibleSignatures);
    }
    if a.k() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (ra, rb) in a.values.iter().zip(&b.values) {
        if ra.len() != rb.len() {
            return Err(Error::IncompatibleSignatures);
        }
        total += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    }
    Ok(total / a.k() as f64)
}

/// Signature distance between `I` and `gI` (re-normalized for
/// interpolated groups).
pub fn invariance_error(
    image: &Image,
    g: usize,
    bank: &TemplateBank,
    window: &PoolingWindow,
    spec: &PoolingSpec,
) -> Result<f64> {
    let moved = normalize(&bank.group.act(g, image)?)?;
    signature_distance(&signature(image, bank, window, spec)?, &signature(&moved, bank, window, spec)?)
}

/// Returns `(d(Σ(I), Σ(I')), ||I - I'||_H)` under full-group pooling.
/// Requires a permutation group and `N L_η <= 1`.
pub fn stability_check(image: &Image, other: &Image, bank: &TemplateBank, spec: &PoolingSpec) -> Result<(f64, f64)> {
    let budget = spec.lipschitz_budget();
    if budget > 1.0 + BUDGET_SLACK {
        return Err(Error::LipschitzBudgetExceeded(budget));
    }
    if !bank.group.is_exact() {
        return Err(Error::Config("stability needs a permutation group".into()));
    }
    let full = PoolingWindow::full(&bank.group);
    let lhs = signature_distance(&signature(image, bank, &full, spec)?, &signature(other, bank, &full, spec)?)?;
    let rhs = hausdorff_orbit_distance(image, other, &bank.group)?;
    Ok((lhs, rhs))
}

/// `[(r, d(Σ(I), Σ(T_r I)))]` over `r_grid`.
pub fn smooth_invariance_profile(
    image: &Image,
    w: &SmoothWarp,
    r_grid: &[f64],
    bank: &TemplateBank,
    window: &PoolingWindow,
    spec: &PoolingSpec,
) -> Result<Vec<(f64, f64)>> {
    let base = signature(image, bank, window, spec)?;
    r_grid
        .iter()
        .map(|&r| {
            let warped = normalize(&crate::group::warp(w, r, image)?)?;
            let err = if r == 0.0 { 0.0 } else { signature_distance(&base, &signature(&warped, bank, window, spec)?)? };
            Ok((r, err))
        })
        .collect()
}

//! Densities of the Pareto mixture: component likelihood, the q-NN
//! adjacency likelihood with its normalizer, and the priors over the
//! component dimensions.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::neighbors::AdjacencyMatrix;

pub fn pareto_log_density(x: f64, scale: f64, shape: f64) -> Result<f64> {
    if !(scale > 0.0) || !(shape > 0.0) {
        return Err(Error::domain(format!(
            "Pareto parameters must be positive (scale={scale}, shape={shape})"
        )));
    }
    if x < scale {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(shape.ln() + shape * scale.ln() - (shape + 1.0) * x.ln())
}

/// Component dimensions and mixture weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub d: Vec<f64>,
    pub p: Vec<f64>,
}

impl MixtureParams {
    pub fn new(d: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if d.is_empty() || d.len() != p.len() {
            return Err(Error::domain("d and p must be non-empty and of equal length"));
        }
        if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("component dimensions must be positive"));
        }
        let total: f64 = p.iter().sum();
        if p.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("weights must lie on the simplex (sum {total})")));
        }
        Ok(MixtureParams { d, p })
    }

    pub fn k(&self) -> usize {
        self.d.len()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `sum_i log sum_k p_k d_k mu_i^-(d_k+1)`.
pub fn mixture_log_likelihood(mu: &[f64], params: &MixtureParams) -> Result<f64> {
    let mut terms = vec![0.0; params.k()];
    let mut total = 0.0;
    for (i, &m) in mu.iter().enumerate() {
        if !(m >= 1.0) {
            return Err(Error::domain(format!("mu[{i}] = {m} is below 1")));
        }
        let lm = m.ln();
        for (t, (&d, &p)) in terms.iter_mut().zip(params.d.iter().zip(&params.p)) {
            *t = p.ln() + d.ln() - (d + 1.0) * lm;
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

/// `log Z(zeta, n_k)`: log of the total weight of all ways to pick the q
/// neighbors of a point among the other `n - 1` points, when `n_k - 1` of
/// them share its cluster.
pub fn log_normalizer(zeta: f64, cluster_size: usize, n: usize, q: usize) -> f64 {
    assert!(cluster_size >= 1 && cluster_size <= n && q < n);
    let inside = (cluster_size - 1) as u64;
    let outside = (n - cluster_size) as u64;
    let q64 = q as u64;
    let m_min = q64.saturating_sub(outside);
    let m_max = q64.min(inside);
    let (lz, l1z) = (zeta.ln(), (1.0 - zeta).ln());
    let terms: Vec<f64> = (m_min..=m_max)
        .map(|m| {
            ln_binomial(inside, m) + ln_binomial(outside, q64 - m) + m as f64 * lz + (q64 - m) as f64 * l1z
        })
        .collect();
    log_sum_exp(&terms)
}

/// `log Z` for every cluster size `0..=n` at a fixed `zeta`; index 0 is
/// unused and holds zero.
#[derive(Clone, Debug)]
pub(crate) struct NormalizerTable {
    values: Vec<f64>,
}

impl NormalizerTable {
    pub(crate) fn new(zeta: f64, n: usize, q: usize) -> Self {
        let mut values = vec![0.0; n + 1];
        for (size, v) in values.iter_mut().enumerate().skip(1) {
            *v = log_normalizer(zeta, size, n, q);
        }
        NormalizerTable { values }
    }

    /// `size * log Z(size)`: the summed normalizer contribution of a cluster.
    #[inline]
    pub(crate) fn cluster_total(&self, size: usize) -> f64 {
        if size == 0 {
            0.0
        } else {
            size as f64 * self.values[size]
        }
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta > 0.5 && zeta < 1.0) {
        return Err(Error::domain(format!("zeta must lie in (0.5, 1), got {zeta}")));
    }
    Ok(())
}

pub(crate) fn cluster_sizes(z: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0; k];
    for (i, &label) in z.iter().enumerate() {
        if label >= k {
            return Err(Error::domain(format!("label z[{i}] = {label} outside 0..{k}")));
        }
        sizes[label] += 1;
    }
    Ok(sizes)
}

/// Number of row `i`'s neighbors whose label equals `label`.
#[inline]
pub(crate) fn neighbors_in(adj: &AdjacencyMatrix, z: &[usize], i: usize, label: usize) -> usize {
    adj.row(i).iter().filter(|&&j| z[j] == label).count()
}

/// Adjacency log-likelihood with rows treated as independent. Labels are
/// zero-based and must be below `k`.
pub fn adjacency_log_likelihood(adj: &AdjacencyMatrix, z: &[usize], zeta: f64, k: usize) -> Result<f64> {
    check_zeta(zeta)?;
    adjacency_log_likelihood_unchecked(adj, z, zeta, k)
}

pub(crate) fn adjacency_log_likelihood_unchecked(
    adj: &AdjacencyMatrix,
    z: &[usize],
    zeta: f64,
    k: usize,
) -> Result<f64> {
    let n = adj.len();
    if z.len() != n {
        return Err(Error::domain(format!("{} labels for {n} rows", z.len())));
    }
    let q = adj.q();
    let sizes = cluster_sizes(z, k)?;
    let table = NormalizerTable::new(zeta, n, q);
    let (lz, l1z) = (zeta.ln(), (1.0 - zeta).ln());
    let rows: f64 = (0..n)
        .map(|i| {
            let m = neighbors_in(adj, z, i, z[i]) as f64;
            m * lz + (q as f64 - m) * l1z
        })
        .sum();
    let norm: f64 = sizes.iter().map(|&s| table.cluster_total(s)).sum();
    Ok(rows - norm)
}

pub fn sigmoid_g(delta: f64, tau: f64, nu: f64) -> f64 {
    1.0 / (1.0 + (-(delta - tau) / nu).exp())
}

/// `log g(delta)` without overflow for small `nu`.
pub fn log_sigmoid_g(delta: f64, tau: f64, nu: f64) -> f64 {
    let x = (delta - tau) / nu;
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log h(d)`: the repulsion factor, `g` at the closest pair. Zero for K = 1.
pub fn log_repulsion(d: &[f64], tau: f64, nu: f64) -> f64 {
    let mut closest = f64::INFINITY;
    for s in 0..d.len() {
        for j in 0..s {
            closest = closest.min((d[s] - d[j]).abs());
        }
    }
    if closest.is_infinite() {
        0.0
    } else {
        log_sigmoid_g(closest, tau, nu)
    }
}

pub(crate) fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub(crate) fn gamma_log_cdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    gamma_lr(shape, rate * x).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorVariant {
    PlainGamma,
    TruncatedGamma,
    TruncatedGammaWithSpike,
    Repulsive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaMode {
    Fixed(f64),
    /// Beta(f1, f0) prior on `(zeta - 0.5) / 0.5`.
    Sampled { f1: f64, f0: f64 },
}

impl Default for ZetaMode {
    fn default() -> Self {
        ZetaMode::Fixed(0.8)
    }
}

/// Prior over component dimensions, weights and zeta.
///
/// `D_cap` bounds the support of the truncated and spike variants and is
/// required for them. For the repulsive variant it is optional and, when
/// set, truncates the base density `g_0`. The plain variant ignores it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub variant: PriorVariant,
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_rho_hat")]
    pub rho_hat: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    pub c: Vec<f64>,
    #[serde(default)]
    pub zeta_mode: ZetaMode,
    #[serde(rename = "D_cap", default)]
    pub d_cap: Option<f64>,
}

fn default_rho_hat() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    1.0
}
fn default_nu() -> f64 {
    0.1
}

impl PriorSpec {
    /// Weakly informative defaults: a = b = 1, c_k = 1, zeta fixed at 0.8,
    /// tau = 1, nu = 0.1, rho_hat = 0.5.
    pub fn new(variant: PriorVariant, k: usize, d_cap: Option<f64>) -> Self {
        PriorSpec {
            variant,
            a: 1.0,
            b: 1.0,
            rho_hat: default_rho_hat(),
            tau: default_tau(),
            nu: default_nu(),
            c: vec![1.0; k],
            zeta_mode: ZetaMode::default(),
            d_cap,
        }
    }

    pub fn k(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("a", self.a)?;
        positive("b", self.b)?;
        if self.c.is_empty() {
            return Err(Error::config("c must have one entry per component"));
        }
        for &c in &self.c {
            positive("c_k", c)?;
        }
        match self.variant {
            PriorVariant::PlainGamma => {}
            PriorVariant::TruncatedGamma | PriorVariant::TruncatedGammaWithSpike => {
                match self.d_cap {
                    Some(d) => positive("D_cap", d)?,
                    None => return Err(Error::config("truncated priors need D_cap")),
                }
                if self.variant == PriorVariant::TruncatedGammaWithSpike
                    && !(self.rho_hat > 0.0 && self.rho_hat < 1.0)
                {
                    return Err(Error::config(format!(
                        "rho_hat must lie in (0, 1), got {}",
                        self.rho_hat
                    )));
                }
            }
            PriorVariant::Repulsive => {
                positive("tau", self.tau)?;
                positive("nu", self.nu)?;
                if let Some(d) = self.d_cap {
                    positive("D_cap", d)?;
                }
            }
        }
        match self.zeta_mode {
            ZetaMode::Fixed(z) => check_zeta(z).map_err(|_| {
                Error::config(format!("fixed zeta must lie in (0.5, 1), got {z}"))
            })?,
            ZetaMode::Sampled { f1, f0 } => {
                positive("f1", f1)?;
                positive("f0", f0)?;
            }
        }
        Ok(())
    }

    /// Upper bound on the support of each `d_k`, if any.
    pub fn support_cap(&self) -> Option<f64> {
        match self.variant {
            PriorVariant::PlainGamma => None,
            _ => self.d_cap,
        }
    }

    /// Log-density of the (possibly truncated) Gamma base measure.
    pub(crate) fn base_log_density(&self, d: f64) -> f64 {
        match self.support_cap() {
            None => gamma_log_pdf(d, self.a, self.b),
            Some(cap) if d > cap => f64::NEG_INFINITY,
            Some(cap) => gamma_log_pdf(d, self.a, self.b) - gamma_log_cdf(cap, self.a, self.b),
        }
    }

    /// Log prior of the component dimensions. `at_cap[k]` marks components
    /// sitting on the spike at `D_cap` (only meaningful for the spike
    /// variant). The repulsive variant omits its normalizing constant.
    pub fn log_density(&self, d: &[f64], at_cap: &[bool]) -> f64 {
        match self.variant {
            PriorVariant::PlainGamma | PriorVariant::TruncatedGamma => {
                d.iter().map(|&v| self.base_log_density(v)).sum()
            }
            PriorVariant::TruncatedGammaWithSpike => d
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    if at_cap.get(k).copied().unwrap_or(false) {
                        (1.0 - self.rho_hat).ln()
                    } else {
                        self.rho_hat.ln() + self.base_log_density(v)
                    }
                })
                .sum(),
            PriorVariant::Repulsive => {
                let base: f64 = d.iter().map(|&v| self.base_log_density(v)).sum();
                base + log_repulsion(d, self.tau, self.nu)
            }
        }
    }
}

/// Prior log-density of `d` with no component on the spike.
pub fn prior_log_density(d: &[f64], spec: &PriorSpec) -> f64 {
    spec.log_density(d, &vec![false; d.len()])
}

/// Log density of the zeta prior, on the zeta scale.
pub(crate) fn zeta_log_prior(zeta: f64, f1: f64, f0: f64) -> f64 {
    let u = (zeta - 0.5) / 0.5;
    if !(u > 0.0 && u < 1.0) {
        return f64::NEG_INFINITY;
    }
    (f1 - 1.0) * u.ln() + (f0 - 1.0) * (1.0 - u).ln() - statrs::function::beta::ln_beta(f1, f0)
        + 2f64.ln()
}

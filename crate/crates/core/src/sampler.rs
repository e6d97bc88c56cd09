//! Metropolis-within-Gibbs sampler for the Pareto mixture with the q-NN
//! adjacency term.
//!
//! One sweep updates, in order, the weights `p` (Dirichlet), the component
//! dimensions `d` (conjugate Gamma draws, or MH for the repulsive prior), the
//! labels `z` (sequential single-site Gibbs), and finally `zeta` when it is
//! sampled. Labels are zero-based in memory and one-based in exported files.
//!
//! All randomness comes from a `ChaCha8Rng` seeded with the configured seed;
//! chain `c` of a multi-chain run uses stream `c` of that generator, so a
//! chain is reproducible on its own and independent of how many chains run.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{
    adjacency_log_likelihood_unchecked, cluster_sizes, gamma_log_cdf, log_repulsion, neighbors_in,
    zeta_log_prior, NormalizerTable, PriorSpec, PriorVariant, ZetaMode,
};
use crate::neighbors::AdjacencyMatrix;

/// Sampler settings. `q` must match the adjacency matrix handed to the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub prior: PriorSpec,
    pub adjacency_on: bool,
    pub q: usize,
    #[serde(default)]
    pub random_scan: bool,
}

impl SamplerConfig {
    /// T = 2000, burn-in 1000, thin 1, q = 3, adjacency on, ascending scan.
    pub fn new(prior: PriorSpec) -> Self {
        SamplerConfig {
            k: prior.k(),
            sweeps: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            prior,
            adjacency_on: true,
            q: 3,
            random_scan: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::config(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        if self.prior.k() != self.k {
            return Err(Error::config(format!(
                "prior has {} concentrations for K={}",
                self.prior.k(),
                self.k
            )));
        }
        self.prior.validate()
    }

    pub fn retained(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thin
    }

    pub fn is_retained(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// Component dimensions together with their spike flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub d: Vec<f64>,
    pub at_cap: Vec<bool>,
}

impl Dims {
    pub fn free(d: Vec<f64>) -> Self {
        let at_cap = vec![false; d.len()];
        Dims { d, at_cap }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub z: Vec<usize>,
    pub dims: Dims,
    pub p: Vec<f64>,
    pub zeta: f64,
    pub sweep: usize,
    sizes: Vec<usize>,
}

impl ChainState {
    pub fn new(z: Vec<usize>, dims: Dims, p: Vec<f64>, zeta: f64) -> Result<Self> {
        let k = dims.d.len();
        if p.len() != k || dims.at_cap.len() != k {
            return Err(Error::domain("d, p and spike flags must have one entry per component"));
        }
        let sizes = cluster_sizes(&z, k)?;
        Ok(ChainState {
            z,
            dims,
            p,
            zeta,
            sweep: 0,
            sizes,
        })
    }

    pub fn k(&self) -> usize {
        self.p.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// Data shared by every update: the two-NN ratios and the adjacency
/// structure, with the per-point quantities the updates need precomputed.
#[derive(Clone, Debug)]
pub struct ChainInput<'a> {
    mu: &'a [f64],
    log_mu: Vec<f64>,
    adj: &'a AdjacencyMatrix,
    incoming: Vec<Vec<usize>>,
}

impl<'a> ChainInput<'a> {
    pub fn new(mu: &'a [f64], adj: &'a AdjacencyMatrix) -> Result<Self> {
        if mu.len() != adj.len() {
            return Err(Error::domain(format!(
                "{} ratios but {} adjacency rows",
                mu.len(),
                adj.len()
            )));
        }
        if let Some((i, m)) = mu.iter().enumerate().find(|(_, m)| !(**m >= 1.0) || !m.is_finite()) {
            return Err(Error::domain(format!("mu[{i}] = {m} is not a finite value >= 1")));
        }
        Ok(ChainInput {
            mu,
            log_mu: mu.iter().map(|m| m.ln()).collect(),
            adj,
            incoming: adj.incoming(),
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        self.mu
    }

    pub fn adjacency(&self) -> &AdjacencyMatrix {
        self.adj
    }
}

/// SHA-256 over the ratios and the adjacency rows; identifies the data a
/// trace was produced from.
pub fn data_checksum(mu: &[f64], adj: &AdjacencyMatrix) -> String {
    let mut h = Sha256::new();
    h.update((mu.len() as u64).to_le_bytes());
    for m in mu {
        h.update(m.to_le_bytes());
    }
    h.update((adj.q() as u64).to_le_bytes());
    for i in 0..adj.len() {
        for &j in adj.row(i) {
            h.update((j as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-cluster counts `N_k` and log-ratio sums `S_k`.
fn sufficient_stats(log_mu: &[f64], z: &[usize], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut n = vec![0; k];
    let mut s = vec![0.0; k];
    for (&lm, &label) in log_mu.iter().zip(z) {
        n[label] += 1;
        s[label] += lm;
    }
    (n, s)
}

/// Draw from Dirichlet(c_1 + N_1, ..., c_K + N_K).
pub fn update_weights<R: Rng + ?Sized>(z: &[usize], c: &[f64], rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0usize; c.len()];
    for &label in z {
        counts[label] += 1;
    }
    let mut draws: Vec<f64> = c
        .iter()
        .zip(&counts)
        .map(|(&ck, &nk)| Gamma::new(ck + nk as f64, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|g| *g /= total);
    draws
}

/// Gamma(shape, rate) draw, restricted to `(0, cap]` by inverting the CDF
/// over the truncated region when a cap is given.
pub fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, cap: Option<f64>, rng: &mut R) -> f64 {
    match cap {
        None => Gamma::new(shape, 1.0 / rate).expect("positive parameters").sample(rng),
        Some(cap) => draw_truncated_gamma(shape, rate, cap, rng),
    }
}

fn draw_truncated_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, cap: f64, rng: &mut R) -> f64 {
    let mass = gamma_lr(shape, rate * cap);
    let u: f64 = rng.random();
    if !(mass > 0.0) {
        // All the mass sits above the cap: the density on (0, cap] is
        // increasing and well approximated by an exponential tilt at cap.
        let slope = (rate - (shape - 1.0) / cap).abs().max(1e-12);
        let e = -(1.0 - u).ln();
        return (cap - e / slope).clamp(f64::MIN_POSITIVE, cap);
    }
    let target = u * mass;
    let (mut lo, mut hi) = (0.0f64, cap);
    while hi - lo > 1e-13 * cap {
        let mid = 0.5 * (lo + hi);
        if gamma_lr(shape, rate * mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One proposal of the repulsive MH step, recorded for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhRecord {
    pub component: usize,
    pub current: f64,
    pub proposed: f64,
    /// Closest pairwise gap of the vector before and after the proposal.
    pub current_gap: f64,
    pub gap: f64,
    pub log_ratio: f64,
    pub accepted: bool,
}

pub fn update_d<R: Rng + ?Sized>(
    mu: &[f64],
    z: &[usize],
    spec: &PriorSpec,
    current: &Dims,
    rng: &mut R,
) -> Dims {
    let log_mu: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    update_d_from_logs(&log_mu, z, spec, current, rng, None)
}

/// [`update_d`] that also records every repulsive MH proposal in `log`.
pub fn update_d_logged<R: Rng + ?Sized>(
    mu: &[f64],
    z: &[usize],
    spec: &PriorSpec,
    current: &Dims,
    rng: &mut R,
    log: &mut Vec<MhRecord>,
) -> Dims {
    let log_mu: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    update_d_from_logs(&log_mu, z, spec, current, rng, Some(log))
}

fn update_d_from_logs<R: Rng + ?Sized>(
    log_mu: &[f64],
    z: &[usize],
    spec: &PriorSpec,
    current: &Dims,
    rng: &mut R,
    mut log: Option<&mut Vec<MhRecord>>,
) -> Dims {
    let k = current.d.len();
    let (n, s) = sufficient_stats(log_mu, z, k);
    let (a, b) = (spec.a, spec.b);
    match spec.variant {
        PriorVariant::PlainGamma | PriorVariant::TruncatedGamma => {
            let cap = spec.support_cap();
            let d = (0..k)
                .map(|j| draw_gamma(a + n[j] as f64, b + s[j], cap, rng))
                .collect();
            Dims::free(d)
        }
        PriorVariant::TruncatedGammaWithSpike => {
            let cap = spec.d_cap.expect("validated spike prior has D_cap");
            let mut d = Vec::with_capacity(k);
            let mut at_cap = Vec::with_capacity(k);
            for j in 0..k {
                let (nj, sj) = (n[j] as f64, s[j]);
                let log_spike = nj * cap.ln() - (cap + 1.0) * sj;
                let log_slab = -sj + a * b.ln() - ln_gamma(a) - gamma_log_cdf(cap, a, b)
                    + ln_gamma(a + nj)
                    - (a + nj) * (b + sj).ln()
                    + gamma_log_cdf(cap, a + nj, b + sj);
                let log_odds =
                    (1.0 - spec.rho_hat).ln() + log_spike - spec.rho_hat.ln() - log_slab;
                let p_spike = 1.0 / (1.0 + (-log_odds).exp());
                if rng.random::<f64>() < p_spike {
                    d.push(cap);
                    at_cap.push(true);
                } else {
                    d.push(draw_truncated_gamma(a + nj, b + sj, cap, rng));
                    at_cap.push(false);
                }
            }
            Dims { d, at_cap }
        }
        PriorVariant::Repulsive => {
            // Independence proposal from the conjugate posterior of each
            // component; base density and data terms cancel in the ratio.
            let cap = spec.d_cap;
            let mut d = current.d.clone();
            let mut current_h = log_repulsion(&d, spec.tau, spec.nu);
            for j in 0..k {
                let old = d[j];
                let current_gap = if log.is_some() { closest_gap(&d) } else { 0.0 };
                let proposed = draw_gamma(a + n[j] as f64, b + s[j], cap, rng);
                d[j] = proposed;
                let proposed_vec = if log.is_some() { d.clone() } else { Vec::new() };
                let proposed_h = log_repulsion(&d, spec.tau, spec.nu);
                let log_ratio = proposed_h - current_h;
                let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
                if accepted {
                    current_h = proposed_h;
                } else {
                    d[j] = old;
                }
                if let Some(log) = log.as_deref_mut() {
                    log.push(MhRecord {
                        component: j,
                        current: old,
                        proposed,
                        current_gap,
                        gap: closest_gap(&proposed_vec),
                        log_ratio,
                        accepted,
                    });
                }
            }
            Dims::free(d)
        }
    }
}

fn closest_gap(d: &[f64]) -> f64 {
    let mut closest = f64::INFINITY;
    for s in 0..d.len() {
        for j in 0..s {
            closest = closest.min((d[s] - d[j]).abs());
        }
    }
    closest
}

/// Unnormalized log full conditional of `z_i` over the K labels, given every
/// other label. Adds the adjacency terms when `table` is supplied.
fn label_log_weights(
    input: &ChainInput<'_>,
    state: &ChainState,
    i: usize,
    sizes_without_i: &[usize],
    table: Option<&NormalizerTable>,
    out: &mut [f64],
) {
    let lm = input.log_mu[i];
    let (lz, l1z) = (state.zeta.ln(), (1.0 - state.zeta).ln());
    let q = input.adj.q() as f64;
    for (k, w) in out.iter_mut().enumerate() {
        let d = state.dims.d[k];
        *w = state.p[k].ln() + d.ln() - (d + 1.0) * lm;
        if let Some(table) = table {
            let own = neighbors_in(input.adj, &state.z, i, k) as f64;
            *w += own * lz + (q - own) * l1z;
            let pointing = input.incoming[i].iter().filter(|&&j| state.z[j] == k).count() as f64;
            *w += pointing * (lz - l1z);
            let size = sizes_without_i[k];
            *w -= table.cluster_total(size + 1) - table.cluster_total(size);
        }
    }
}

/// Normalized full-conditional probabilities of `z_i` under `state`.
pub fn assignment_probabilities(
    input: &ChainInput<'_>,
    state: &ChainState,
    i: usize,
    adjacency_on: bool,
) -> Vec<f64> {
    let mut sizes = state.sizes.clone();
    sizes[state.z[i]] -= 1;
    let table = adjacency_on.then(|| NormalizerTable::new(state.zeta, input.len(), input.adj.q()));
    let mut w = vec![0.0; state.k()];
    label_log_weights(input, state, i, &sizes, table.as_ref(), &mut w);
    normalize_log_weights(&mut w);
    w
}

fn normalize_log_weights(w: &mut [f64]) {
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in w.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    w.iter_mut().for_each(|v| *v /= total);
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Sequential single-site Gibbs scan over the labels. Cluster counts are
/// kept current after every site.
pub fn update_assignments<R: Rng + ?Sized>(
    input: &ChainInput<'_>,
    state: &mut ChainState,
    adjacency_on: bool,
    random_scan: bool,
    rng: &mut R,
) {
    let k = state.k();
    if k == 1 {
        return;
    }
    let n = input.len();
    let table = adjacency_on.then(|| NormalizerTable::new(state.zeta, n, input.adj.q()));
    let mut order: Vec<usize> = (0..n).collect();
    if random_scan {
        order.shuffle(rng);
    }
    let mut w = vec![0.0; k];
    for i in order {
        let old = state.z[i];
        state.sizes[old] -= 1;
        let sizes = std::mem::take(&mut state.sizes);
        label_log_weights(input, state, i, &sizes, table.as_ref(), &mut w);
        state.sizes = sizes;
        normalize_log_weights(&mut w);
        let new = sample_index(&w, rng);
        state.z[i] = new;
        state.sizes[new] += 1;
    }
}

const ZETA_STEP: f64 = 0.5;

/// Random-walk Metropolis on the logit of `(zeta - 0.5) / 0.5`. No-op when
/// zeta is fixed.
pub fn update_zeta<R: Rng + ?Sized>(
    adj: &AdjacencyMatrix,
    z: &[usize],
    spec: &PriorSpec,
    zeta: f64,
    rng: &mut R,
) -> Result<f64> {
    let (f1, f0) = match spec.zeta_mode {
        ZetaMode::Fixed(_) => return Ok(zeta),
        ZetaMode::Sampled { f1, f0 } => (f1, f0),
    };
    let k = spec.k();
    let u = (zeta - 0.5) / 0.5;
    let eta = (u / (1.0 - u)).ln();
    let step: f64 = rng.sample(StandardNormal);
    let eta_new = eta + ZETA_STEP * step;
    let u_new = 1.0 / (1.0 + (-eta_new).exp());
    let proposed = 0.5 + 0.5 * u_new;
    let accept_draw: f64 = rng.random();
    if !(proposed > 0.5 && proposed < 1.0) {
        return Ok(zeta);
    }
    let current_ll = adjacency_log_likelihood_unchecked(adj, z, zeta, k)?;
    let proposed_ll = adjacency_log_likelihood_unchecked(adj, z, proposed, k)?;
    // Beta prior plus the logit Jacobian, expressed on the eta scale.
    let log_ratio = proposed_ll - current_ll + f1 * (u_new / u).ln() + f0 * ((1.0 - u_new) / (1.0 - u)).ln();
    if accept_draw.ln() < log_ratio {
        Ok(proposed)
    } else {
        Ok(zeta)
    }
}

/// Components of the log-posterior.
///
/// * `mixture`: `sum_i log f(mu_i | d_{z_i})`.
/// * `adjacency`: the q-NN term including `log Z` (zero when switched off).
/// * `prior`: normalized Dirichlet density of `p`, `sum_i log p_{z_i}`, the
///   prior of `d`, and the zeta prior when zeta is sampled. Gamma and
///   truncation constants are included; the repulsive prior's global
///   normalizer is not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogPosteriorParts {
    pub mixture: f64,
    pub adjacency: f64,
    pub prior: f64,
}

impl LogPosteriorParts {
    pub fn total(&self) -> f64 {
        self.mixture + self.adjacency + self.prior
    }
}

fn dirichlet_log_pdf(p: &[f64], c: &[f64]) -> f64 {
    let total: f64 = c.iter().sum();
    let mut v = ln_gamma(total);
    for (&pk, &ck) in p.iter().zip(c) {
        v -= ln_gamma(ck);
        if ck != 1.0 {
            v += (ck - 1.0) * pk.ln();
        }
    }
    v
}

pub fn log_posterior(
    state: &ChainState,
    input: &ChainInput<'_>,
    spec: &PriorSpec,
    adjacency_on: bool,
) -> Result<LogPosteriorParts> {
    let mixture = state
        .z
        .iter()
        .zip(&input.log_mu)
        .map(|(&k, &lm)| {
            let d = state.dims.d[k];
            d.ln() - (d + 1.0) * lm
        })
        .sum();
    let adjacency = if adjacency_on {
        adjacency_log_likelihood_unchecked(input.adj, &state.z, state.zeta, state.k())?
    } else {
        0.0
    };
    let mut prior = dirichlet_log_pdf(&state.p, &spec.c)
        + state.z.iter().map(|&k| state.p[k].ln()).sum::<f64>()
        + spec.log_density(&state.dims.d, &state.dims.at_cap);
    if let ZetaMode::Sampled { f1, f0 } = spec.zeta_mode {
        if adjacency_on {
            prior += zeta_log_prior(state.zeta, f1, f0);
        }
    }
    Ok(LogPosteriorParts {
        mixture,
        adjacency,
        prior,
    })
}

/// One retained sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sweep: usize,
    pub z: Vec<usize>,
    pub d: Vec<f64>,
    pub at_cap: Vec<bool>,
    pub p: Vec<f64>,
    pub zeta: f64,
    pub log_posterior: f64,
    pub parts: LogPosteriorParts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrace {
    pub config: SamplerConfig,
    pub chain: u64,
    pub data_checksum: String,
    pub n: usize,
    pub samples: Vec<Sample>,
}

impl PosteriorTrace {
    /// Builds a trace from hand-made samples, mainly for post-processing
    /// saved or synthetic label sequences.
    pub fn from_samples(config: SamplerConfig, data_checksum: String, samples: Vec<Sample>) -> Result<Self> {
        let n = samples.first().map(|s| s.z.len()).ok_or(Error::EmptyTrace)?;
        if samples.iter().any(|s| s.z.len() != n || s.d.len() != config.k) {
            return Err(Error::domain("samples disagree on N or K"));
        }
        Ok(PosteriorTrace {
            config,
            chain: 0,
            data_checksum,
            n,
            samples,
        })
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_log_posterior(&self) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok(self.samples.iter().map(|s| s.log_posterior).sum::<f64>() / self.samples.len() as f64)
    }

    /// SHA-256 over every retained value, in sweep order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.data_checksum.as_bytes());
        for s in &self.samples {
            h.update((s.sweep as u64).to_le_bytes());
            for &z in &s.z {
                h.update((z as u32).to_le_bytes());
            }
            for v in s.d.iter().chain(&s.p) {
                h.update(v.to_le_bytes());
            }
            h.update(s.zeta.to_le_bytes());
            h.update(s.log_posterior.to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// `sweep,log_posterior,d_1..d_K,p_1..p_K,zeta`, one row per retained sweep.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let k = self.k();
        let mut header = vec!["sweep".to_string(), "log_posterior".to_string()];
        header.extend((1..=k).map(|j| format!("d_{j}")));
        header.extend((1..=k).map(|j| format!("p_{j}")));
        header.push("zeta".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.sweep.to_string(), s.log_posterior.to_string()];
            rec.extend(s.d.iter().map(|v| v.to_string()));
            rec.extend(s.p.iter().map(|v| v.to_string()));
            rec.push(s.zeta.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One line per retained sweep: the sweep index, then the N one-based labels.
    pub fn write_labels<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "sweep,labels")?;
        for s in &self.samples {
            write!(writer, "{}", s.sweep)?;
            for &z in &s.z {
                write!(writer, ",{}", z + 1)?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }
}

fn initial_dims<R: Rng + ?Sized>(spec: &PriorSpec, k: usize, rng: &mut R) -> Dims {
    let cap = spec.support_cap();
    Dims::free((0..k).map(|_| draw_gamma(spec.a, spec.b, cap, rng)).collect())
}

/// Runs chain 0 for `config`.
pub fn run_chain(mu: &[f64], adj: &AdjacencyMatrix, config: &SamplerConfig) -> Result<PosteriorTrace> {
    run_chain_stream(mu, adj, config, 0)
}

/// Runs the chain drawing from stream `chain` of the configured seed.
pub fn run_chain_stream(
    mu: &[f64],
    adj: &AdjacencyMatrix,
    config: &SamplerConfig,
    chain: u64,
) -> Result<PosteriorTrace> {
    config.validate()?;
    if adj.q() != config.q {
        return Err(Error::config(format!(
            "adjacency built with q={} but config has q={}",
            adj.q(),
            config.q
        )));
    }
    let input = ChainInput::new(mu, adj)?;
    let n = input.len();
    if config.adjacency_on && config.q >= n {
        return Err(Error::config(format!("q={} must be below N={n}", config.q)));
    }
    let spec = &config.prior;
    let k = config.k;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain);

    let z = (0..n).map(|_| rng.random_range(0..k)).collect();
    let dims = initial_dims(spec, k, &mut rng);
    let zeta = match spec.zeta_mode {
        ZetaMode::Fixed(z) => z,
        ZetaMode::Sampled { .. } => 0.75,
    };
    let mut state = ChainState::new(z, dims, vec![1.0 / k as f64; k], zeta)?;

    let mut samples = Vec::with_capacity(config.retained());
    for sweep in 0..config.sweeps {
        state.sweep = sweep;
        state.p = update_weights(&state.z, &spec.c, &mut rng);
        state.dims = update_d_from_logs(&input.log_mu, &state.z, spec, &state.dims, &mut rng, None);
        update_assignments(&input, &mut state, config.adjacency_on, config.random_scan, &mut rng);
        if config.adjacency_on {
            state.zeta = update_zeta(adj, &state.z, spec, state.zeta, &mut rng)?;
        }
        if config.is_retained(sweep) {
            let parts = log_posterior(&state, &input, spec, config.adjacency_on)?;
            let total = parts.total();
            if !total.is_finite() {
                return Err(Error::NonFiniteLogPosterior { sweep });
            }
            samples.push(Sample {
                sweep,
                z: state.z.clone(),
                d: state.dims.d.clone(),
                at_cap: state.dims.at_cap.clone(),
                p: state.p.clone(),
                zeta: state.zeta,
                log_posterior: total,
                parts,
            });
        }
    }
    Ok(PosteriorTrace {
        config: config.clone(),
        chain,
        data_checksum: data_checksum(mu, adj),
        n,
        samples,
    })
}

/// Runs `chains` independent chains (streams `0..chains`) on up to `jobs`
/// threads. Results are ordered by chain index.
pub fn run_chains(
    mu: &[f64],
    adj: &AdjacencyMatrix,
    config: &SamplerConfig,
    chains: usize,
    jobs: usize,
) -> Result<Vec<PosteriorTrace>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..chains as u64)
            .into_par_iter()
            .map(|c| run_chain_stream(mu, adj, config, c))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{adjacency_log_likelihood, PriorVariant};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn retained_count_is_floor() {
        let mut c = SamplerConfig::new(PriorSpec::new(PriorVariant::PlainGamma, 1, None));
        c.sweeps = 10;
        c.burn_in = 3;
        c.thin = 3;
        assert_eq!(c.retained(), 2);
        assert_eq!((0..10).filter(|&t| c.is_retained(t)).count(), 2);
        c.burn_in = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dirichlet_moments() {
        let mut r = rng(3);
        let z = [0, 0, 0, 1];
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| update_weights(&z, &[1.0, 1.0], &mut r)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Beta(4, 2): mean 2/3, variance 8 / (36 * 7).
        let true_var = 8.0 / (36.0 * 7.0);
        assert!((mean - 2.0 / 3.0).abs() < 3.0 * (true_var / n as f64).sqrt());
        // Var of the sample variance for a Beta uses its fourth central moment;
        // 3 sigma here is about 1.5e-4.
        assert!((var - true_var).abs() < 1.5e-4, "{var} vs {true_var}");
    }

    #[test]
    fn conjugate_gamma_draws() {
        let mut r = rng(5);
        let spec = PriorSpec::new(PriorVariant::PlainGamma, 1, None);
        // N_k = 10, S_k = 5 via ten ratios of e^0.5.
        let mu = vec![0.5f64.exp(); 10];
        let z = vec![0; 10];
        let n = 100_000;
        let mean = (0..n)
            .map(|_| update_d(&mu, &z, &spec, &Dims::free(vec![1.0]), &mut r).d[0])
            .sum::<f64>()
            / n as f64;
        let sd = (11.0f64).sqrt() / 6.0;
        assert!((mean - 11.0 / 6.0).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn truncated_draws_respect_cap() {
        let mut r = rng(9);
        let spec = PriorSpec::new(PriorVariant::TruncatedGamma, 2, Some(10.0));
        // Posterior mass mostly above the cap for the first component.
        let mu = vec![1.01; 50];
        let z = vec![0; 50];
        for _ in 0..2000 {
            let d = update_d(&mu, &z, &spec, &Dims::free(vec![1.0, 1.0]), &mut r);
            assert!(d.d.iter().all(|&v| v > 0.0 && v <= 10.0));
        }
    }

    #[test]
    fn truncated_inverse_cdf_matches_law() {
        // Gamma(3, 1) on (0, 2]: compare the sample mean with quadrature.
        let mut r = rng(17);
        let n = 50_000;
        let mean = (0..n).map(|_| draw_gamma(3.0, 1.0, Some(2.0), &mut r)).sum::<f64>() / n as f64;
        let m = 20_000;
        let h = 2.0 / m as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..m {
            let x = (i as f64 + 0.5) * h;
            let f = x * x * (-x).exp();
            num += x * f;
            den += f;
        }
        let exact = num / den;
        assert!((mean - exact).abs() < 0.01, "{mean} vs {exact}");
    }

    #[test]
    fn spike_prior_picks_the_cap_for_full_dimensional_data() {
        let mut r = rng(21);
        let spec = PriorSpec::new(PriorVariant::TruncatedGammaWithSpike, 1, Some(4.0));
        // Exact Pareto(1, 4) quantiles: the spike should dominate.
        let n = 400;
        let mu: Vec<f64> = (1..=n).map(|i| (1.0 - i as f64 / (n + 1) as f64).powf(-0.25)).collect();
        let z = vec![0; n];
        let hits = (0..500)
            .filter(|_| update_d(&mu, &z, &spec, &Dims::free(vec![1.0]), &mut r).at_cap[0])
            .count();
        assert!(hits > 400, "{hits}");
    }

    fn pareto_grid(n: usize, d: f64) -> Vec<f64> {
        (1..=n).map(|i| (1.0 - i as f64 / (n + 1) as f64).powf(-1.0 / d)).collect()
    }

    #[test]
    fn repulsive_mh_acceptance() {
        let mut spec = PriorSpec::new(PriorVariant::Repulsive, 2, None);
        spec.tau = 2.0;
        spec.nu = 0.01;

        // Well separated conjugate posteriors (d near 1 and near 8).
        let mut mu = pareto_grid(200, 1.0);
        mu.extend(pareto_grid(200, 8.0));
        let z: Vec<usize> = (0..400).map(|i| i / 200).collect();
        let mut r = rng(33);
        let mut log = Vec::new();
        let mut dims = Dims::free(vec![1.0, 8.0]);
        for _ in 0..2000 {
            dims = update_d_logged(&mu, &z, &spec, &dims, &mut r, &mut log);
        }
        let rate = log.iter().filter(|rec| rec.accepted).count() as f64 / log.len() as f64;
        assert!(rate > 0.99, "{rate}");

        // Overlapping posteriors: proposals closer than tau - 5 nu are
        // almost always refused, as the h-ratio dictates.
        let mu = pareto_grid(200, 3.0);
        let z: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let mut log = Vec::new();
        let mut dims = Dims::free(vec![1.0, 5.0]);
        for _ in 0..3000 {
            dims = update_d_logged(&mu, &z, &spec, &dims, &mut r, &mut log);
        }
        let close: Vec<_> = log.iter().filter(|rec| rec.gap < spec.tau - 5.0 * spec.nu).collect();
        assert!(close.len() > 1000);
        let accepted = close.iter().filter(|rec| rec.accepted).count() as f64 / close.len() as f64;
        assert!(accepted < 0.01, "{accepted}");
        for rec in &log {
            // h ratio evaluated directly from the sigmoid.
            let ratio = crate::model::sigmoid_g(rec.gap, spec.tau, spec.nu)
                / crate::model::sigmoid_g(rec.current_gap, spec.tau, spec.nu);
            assert!((rec.log_ratio.exp() - ratio).abs() <= 1e-9 * ratio.max(1.0));
        }
    }

    fn toy_input() -> (Vec<f64>, AdjacencyMatrix) {
        let mu = vec![1.2, 1.9, 1.05, 3.1, 1.4, 2.2];
        let adj = AdjacencyMatrix::from_rows(
            &[vec![1, 2], vec![0, 2], vec![1, 3], vec![4, 5], vec![3, 5], vec![4, 2]],
            2,
        )
        .unwrap();
        (mu, adj)
    }

    #[test]
    fn single_component_labels_never_move() {
        let (mu, adj) = toy_input();
        let input = ChainInput::new(&mu, &adj).unwrap();
        let mut state = ChainState::new(vec![0; 6], Dims::free(vec![2.0]), vec![1.0], 0.8).unwrap();
        update_assignments(&input, &mut state, true, false, &mut rng(1));
        assert_eq!(state.z, vec![0; 6]);
    }

    #[test]
    fn adjacency_off_reduces_to_responsibilities() {
        let (mu, adj) = toy_input();
        let input = ChainInput::new(&mu, &adj).unwrap();
        let state = ChainState::new(vec![0, 1, 0, 1, 1, 0], Dims::free(vec![1.5, 4.0]), vec![0.4, 0.6], 0.8)
            .unwrap();
        let probs = assignment_probabilities(&input, &state, 3, false);
        let w: Vec<f64> = [(0.4, 1.5), (0.6, 4.0)]
            .iter()
            .map(|&(p, d): &(f64, f64)| p * d * 3.1f64.powf(-(d + 1.0)))
            .collect();
        let total: f64 = w.iter().sum();
        for (a, b) in probs.iter().zip(&w) {
            assert!((a - b / total).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_zeta_is_left_alone() {
        let (_, adj) = toy_input();
        let spec = PriorSpec::new(PriorVariant::PlainGamma, 2, None);
        let z = [0, 0, 0, 1, 1, 1];
        assert_eq!(update_zeta(&adj, &z, &spec, 0.8, &mut rng(2)).unwrap(), 0.8);
    }

    #[test]
    fn log_posterior_parts_add_up() {
        let (mu, adj) = toy_input();
        let input = ChainInput::new(&mu, &adj).unwrap();
        let spec = PriorSpec::new(PriorVariant::PlainGamma, 2, None);
        let state = ChainState::new(vec![0, 0, 0, 1, 1, 1], Dims::free(vec![1.5, 4.0]), vec![0.4, 0.6], 0.8)
            .unwrap();
        let parts = log_posterior(&state, &input, &spec, true).unwrap();
        assert_eq!(parts.total(), parts.mixture + parts.adjacency + parts.prior);
        let adj_ll = adjacency_log_likelihood(&adj, &state.z, 0.8, 2).unwrap();
        assert_eq!(parts.adjacency, adj_ll);
    }

    #[test]
    fn homogeneous_neighborhoods_favor_large_zeta() {
        let (mu, _) = toy_input();
        let spec = PriorSpec::new(PriorVariant::PlainGamma, 2, None);
        // Every neighbor shares its row's label.
        let adj = AdjacencyMatrix::from_rows(
            &[vec![1, 2], vec![0, 2], vec![0, 1], vec![4, 5], vec![3, 5], vec![3, 4]],
            2,
        )
        .unwrap();
        let input = ChainInput::new(&mu, &adj).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for zeta in [0.55, 0.7, 0.85, 0.95, 0.99] {
            let state =
                ChainState::new(vec![0, 0, 0, 1, 1, 1], Dims::free(vec![1.5, 4.0]), vec![0.5, 0.5], zeta)
                    .unwrap();
            let a = log_posterior(&state, &input, &spec, true).unwrap().adjacency;
            assert!(a > prev);
            prev = a;
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let (mu, adj) = toy_input();
        let mut c = SamplerConfig::new(PriorSpec::new(PriorVariant::Repulsive, 2, Some(10.0)));
        c.q = 2;
        c.sweeps = 200;
        c.burn_in = 50;
        c.seed = 11;
        let a = run_chain(&mu, &adj, &c).unwrap();
        let b = run_chain(&mu, &adj, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 150);
        let other = run_chain_stream(&mu, &adj, &c, 1).unwrap();
        assert_ne!(a.checksum(), other.checksum());
    }

    #[test]
    fn mismatched_q_is_rejected() {
        let (mu, adj) = toy_input();
        let c = SamplerConfig::new(PriorSpec::new(PriorVariant::PlainGamma, 2, None));
        assert!(matches!(run_chain(&mu, &adj, &c), Err(Error::Config(_))));
    }
}

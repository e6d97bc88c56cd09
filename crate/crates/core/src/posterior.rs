//! Post-processing of retained sweeps: per-point ID summaries, the posterior
//! similarity matrix, point partitions, k-means on the median IDs, choice of
//! K and rank-sum comparisons.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use kodama::{linkage, Dendrogram, Method};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sampler::PosteriorTrace;

/// Concatenates chains that were run on the same data with the same K.
pub fn pool_traces(traces: &[PosteriorTrace]) -> Result<PosteriorTrace> {
    let first = traces.first().ok_or(Error::EmptyTrace)?;
    let mut pooled = first.clone();
    for t in &traces[1..] {
        if t.data_checksum != first.data_checksum {
            return Err(Error::MismatchedData(first.data_checksum.clone(), t.data_checksum.clone()));
        }
        if t.k() != first.k() {
            return Err(Error::domain(format!("cannot pool K={} with K={}", first.k(), t.k())));
        }
        pooled.samples.extend(t.samples.iter().cloned());
    }
    Ok(pooled)
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdEstimates {
    pub mean_id: Vec<f64>,
    pub median_id: Vec<f64>,
    /// 2.5% and 97.5% quantiles.
    pub credible: Vec<(f64, f64)>,
}

impl IdEstimates {
    pub fn len(&self) -> usize {
        self.mean_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_id.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut writer: W, ids: &[String], checksum: &str) -> Result<()> {
        check_ids(ids, self.len())?;
        writeln!(writer, "# trace_checksum={checksum}")?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "mean_id", "median_id", "lower", "upper"])?;
        for (i, id) in ids.iter().enumerate() {
            let (lo, hi) = self.credible[i];
            w.write_record([
                id.clone(),
                self.mean_id[i].to_string(),
                self.median_id[i].to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_ids(ids: &[String], n: usize) -> Result<()> {
    if ids.len() != n {
        return Err(Error::domain(format!("{} ids for {n} observations", ids.len())));
    }
    Ok(())
}

/// Summaries of `d_{z_i}` over the retained sweeps, for every observation.
pub fn per_observation_id(trace: &PosteriorTrace) -> Result<IdEstimates> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let t = trace.samples.len() as f64;
    let rows: Vec<(f64, f64, (f64, f64))> = (0..trace.n)
        .into_par_iter()
        .map(|i| {
            let mut v: Vec<f64> = trace.samples.iter().map(|s| s.d[s.z[i]]).collect();
            let mean = v.iter().sum::<f64>() / t;
            v.sort_by(f64::total_cmp);
            (
                mean,
                quantile_sorted(&v, 0.5),
                (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975)),
            )
        })
        .collect();
    Ok(IdEstimates {
        mean_id: rows.iter().map(|r| r.0).collect(),
        median_id: rows.iter().map(|r| r.1).collect(),
        credible: rows.iter().map(|r| r.2).collect(),
    })
}

/// Symmetric N x N matrix with unit diagonal, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Checks symmetry, the unit diagonal and the `[0, 1]` range.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::domain(format!("row {i} has {} entries, expected {n}", r.len())));
            }
            values.extend_from_slice(r);
        }
        let m = SimilarityMatrix { n, values };
        for i in 0..n {
            if m.get(i, i) != 1.0 {
                return Err(Error::domain(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !(0.0..=1.0).contains(&v) || v != m.get(j, i) {
                    return Err(Error::domain(format!("entry ({i}, {j}) = {v} is invalid")));
                }
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Upper triangle of `1 - psm`, row by row.
    pub fn condensed_dissimilarity(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(1.0 - self.get(i, j));
            }
        }
        out
    }

    /// Writes the matrix with rows and columns in `order` (identity if
    /// `None`). The header carries the permuted ids.
    pub fn write_csv<W: Write>(
        &self,
        mut writer: W,
        ids: &[String],
        order: Option<&[usize]>,
        checksum: &str,
    ) -> Result<()> {
        check_ids(ids, self.n)?;
        let identity: Vec<usize> = (0..self.n).collect();
        let order = order.unwrap_or(&identity);
        check_permutation(order, self.n)?;
        writeln!(writer, "# trace_checksum={checksum}")?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(order.iter().map(|&j| ids[j].clone()));
        w.write_record(&header)?;
        for &i in order {
            let mut rec = vec![ids[i].clone()];
            rec.extend(order.iter().map(|&j| self.get(i, j).to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::domain("order is not a permutation"));
    }
    for &i in order {
        if i >= n || seen[i] {
            return Err(Error::domain("order is not a permutation"));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Posterior probability that `i` and `j` share a component.
pub fn coclustering_matrix(trace: &PosteriorTrace) -> Result<SimilarityMatrix> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = trace.n;
    let t = trace.samples.len() as f64;
    let mut counts = vec![0u32; n * n];
    counts.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for s in &trace.samples {
            let zi = s.z[i];
            for (j, c) in row.iter_mut().enumerate().skip(i + 1) {
                if s.z[j] == zi {
                    *c += 1;
                }
            }
        }
    });
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = counts[i * n + j] as f64 / t;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Binder,
    #[serde(rename = "vi")]
    VariationOfInformation,
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binder" => Ok(Loss::Binder),
            "vi" => Ok(Loss::VariationOfInformation),
            other => Err(Error::config(format!("unknown loss '{other}' (binder or vi)"))),
        }
    }
}

/// Relabels by order of first appearance, so equal partitions compare equal.
pub fn canonical_labels(z: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    z.iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn count_labels(z: &[usize]) -> usize {
    z.iter().max().map_or(0, |m| m + 1)
}

/// Loss between two partitions given as canonical labels. Binder counts
/// the pairs on which they disagree; VI is in bits.
pub fn partition_loss(a: &[usize], b: &[usize], loss: Loss) -> f64 {
    let (ka, kb) = (count_labels(a), count_labels(b));
    let mut table = vec![0usize; ka * kb];
    let mut ra = vec![0usize; ka];
    let mut rb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    match loss {
        Loss::Binder => {
            let pairs = |c: usize| (c * c.saturating_sub(1) / 2) as f64;
            let sa: f64 = ra.iter().map(|&c| pairs(c)).sum();
            let sb: f64 = rb.iter().map(|&c| pairs(c)).sum();
            let sab: f64 = table.iter().map(|&c| pairs(c)).sum();
            sa + sb - 2.0 * sab
        }
        Loss::VariationOfInformation => {
            let n = a.len() as f64;
            let plogp = |c: usize| {
                if c == 0 {
                    0.0
                } else {
                    let p = c as f64 / n;
                    p * p.log2()
                }
            };
            let ha: f64 = -ra.iter().map(|&c| plogp(c)).sum::<f64>();
            let hb: f64 = -rb.iter().map(|&c| plogp(c)).sum::<f64>();
            let hab: f64 = -table.iter().map(|&c| plogp(c)).sum::<f64>();
            (2.0 * hab - ha - hb).max(0.0)
        }
    }
}

/// Result of [`point_partition`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPartition {
    pub labels: Vec<usize>,
    pub expected_loss: f64,
    pub candidates: usize,
}

/// Distinct sampled partitions with their multiplicities.
fn sampled_partitions(trace: &PosteriorTrace) -> Vec<(Vec<usize>, usize)> {
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for s in &trace.samples {
        *counts.entry(canonical_labels(&s.z)).or_default() += 1;
    }
    counts.into_iter().collect()
}

/// Posterior expected loss of `candidate` against the retained sweeps.
pub fn expected_loss(candidate: &[usize], trace: &PosteriorTrace, loss: Loss) -> Result<f64> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let c = canonical_labels(candidate);
    let sampled = sampled_partitions(trace);
    Ok(weighted_loss(&c, &sampled, trace.samples.len(), loss))
}

fn weighted_loss(c: &[usize], sampled: &[(Vec<usize>, usize)], total: usize, loss: Loss) -> f64 {
    sampled.iter().map(|(z, w)| *w as f64 * partition_loss(c, z, loss)).sum::<f64>() / total as f64
}

/// Minimizes the posterior expected loss over the sampled partitions and
/// the average-linkage cuts of `1 - psm` into 1..=10 groups. Ties keep the
/// candidate with fewer groups, then the earlier one.
pub fn point_partition(psm: &SimilarityMatrix, trace: &PosteriorTrace, loss: Loss) -> Result<PointPartition> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if psm.len() != trace.n {
        return Err(Error::domain("similarity matrix and trace disagree on N"));
    }
    let sampled = sampled_partitions(trace);
    let mut candidates: Vec<Vec<usize>> = sampled.iter().map(|(z, _)| z.clone()).collect();
    let dendrogram = average_linkage(psm);
    for k in 1..=10.min(psm.len()) {
        candidates.push(canonical_labels(&cut_tree(&dendrogram, k)));
    }
    let mut seen = std::collections::HashSet::new();
    candidates.retain(|c| seen.insert(c.clone()));
    candidates.sort_by_key(|c| count_labels(c));
    let losses: Vec<f64> = candidates
        .par_iter()
        .map(|c| weighted_loss(c, &sampled, trace.samples.len(), loss))
        .collect();
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] - 1e-12 * losses[best].abs().max(1.0) {
            best = i;
        }
    }
    Ok(PointPartition {
        labels: candidates[best].clone(),
        expected_loss: losses[best],
        candidates: candidates.len(),
    })
}

/// Average-linkage dendrogram of `1 - psm`.
pub fn average_linkage(psm: &SimilarityMatrix) -> Dendrogram<f64> {
    let mut condensed = psm.condensed_dissimilarity();
    linkage(&mut condensed, psm.len(), Method::Average)
}

/// Labels after applying the first `N - k` merges.
pub fn cut_tree(dendrogram: &Dendrogram<f64>, k: usize) -> Vec<usize> {
    let n = dendrogram.observations();
    let k = k.clamp(1, n.max(1));
    // Union-find over observations plus merged clusters.
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step_idx, step) in dendrogram.steps().iter().take(n - k).enumerate() {
        let merged = n + step_idx;
        let a = find(&mut parent, step.cluster1);
        let b = find(&mut parent, step.cluster2);
        parent[a] = merged;
        parent[b] = merged;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    canonical_labels(&roots)
}

/// Leaf order of the average-linkage dendrogram of `1 - psm`, for drawing
/// a heatmap with the blocks on the diagonal.
pub fn heatmap_order(psm: &SimilarityMatrix) -> Vec<usize> {
    let n = psm.len();
    if n < 2 {
        return (0..n).collect();
    }
    let dendrogram = average_linkage(psm);
    let steps = dendrogram.steps();
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![2 * n - 2];
    while let Some(label) = stack.pop() {
        if label < n {
            order.push(label);
        } else {
            let s = &steps[label - n];
            stack.push(s.cluster2);
            stack.push(s.cluster1);
        }
    }
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub g: usize,
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub wcss: f64,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansSelection {
    pub labels: Vec<usize>,
    pub chosen_g: usize,
    pub centers: Vec<f64>,
    pub table: Vec<QualityRow>,
}

impl KMeansSelection {
    pub fn write_json<W: Write>(&self, writer: W, checksum: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            trace_checksum: &'a str,
            chosen_g: usize,
            centers: &'a [f64],
            table: &'a [QualityRow],
        }
        serde_json::to_writer_pretty(
            writer,
            &Out {
                trace_checksum: checksum,
                chosen_g: self.chosen_g,
                centers: &self.centers,
                table: &self.table,
            },
        )?;
        Ok(())
    }
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's algorithm in one dimension, started from the `(j + 0.5) / G`
/// quantiles. Returns labels, centers and the WCSS after each assignment.
pub fn kmeans_1d(values: &[f64], g: usize) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    if g == 0 || values.len() <= g {
        return Err(Error::config(format!("need N > G, got N={} and G={g}", values.len())));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut centers: Vec<f64> = (0..g)
        .map(|j| quantile_sorted(&sorted, (j as f64 + 0.5) / g as f64))
        .collect();
    let mut labels = vec![usize::MAX; values.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (l, &x) in labels.iter_mut().zip(values) {
            let mut best = 0;
            for (j, c) in centers.iter().enumerate() {
                if (x - c).abs() < (x - centers[best]).abs() {
                    best = j;
                }
            }
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        history.push(wcss(values, &labels, &centers));
        let mut sums = vec![(0.0, 0usize); g];
        for (&l, &x) in labels.iter().zip(values) {
            sums[l].0 += x;
            sums[l].1 += 1;
        }
        let mut taken = Vec::new();
        for (j, &(s, m)) in sums.iter().enumerate() {
            if m > 0 {
                centers[j] = s / m as f64;
            }
        }
        // An empty cluster restarts at the point worst served by its center.
        for j in 0..g {
            if sums[j].1 > 0 {
                continue;
            }
            let far = values
                .iter()
                .zip(&labels)
                .map(|(x, &l)| (x - centers[l]).abs())
                .enumerate()
                .filter(|&(i, dist)| dist > 0.0 && !taken.contains(&i))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = far {
                centers[j] = values[i];
                taken.push(i);
            }
        }
        if !changed && taken.is_empty() {
            break;
        }
    }
    Ok((labels, centers, history))
}

fn wcss(values: &[f64], labels: &[usize], centers: &[f64]) -> f64 {
    values.iter().zip(labels).map(|(x, &l)| (x - centers[l]).powi(2)).sum()
}

/// Mean silhouette width with absolute-difference distance. Points in
/// singleton clusters score 0.
pub fn silhouette(values: &[f64], labels: &[usize]) -> f64 {
    let k = count_labels(labels);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let total: f64 = values
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (&y, &l) in values.iter().zip(labels) {
                sums[l] += (x - y).abs();
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .sum();
    total / values.len() as f64
}

/// Between over within dispersion, each divided by its degrees of freedom.
pub fn calinski_harabasz(values: &[f64], labels: &[usize]) -> f64 {
    let n = values.len();
    let k = count_labels(labels);
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sums = vec![(0.0, 0usize); k];
    for (&l, &x) in labels.iter().zip(values) {
        sums[l].0 += x;
        sums[l].1 += 1;
    }
    let centers: Vec<f64> = sums.iter().map(|&(s, m)| if m > 0 { s / m as f64 } else { 0.0 }).collect();
    let between: f64 = sums.iter().zip(&centers).map(|(&(_, m), c)| m as f64 * (c - mean).powi(2)).sum();
    let within = wcss(values, labels, &centers);
    let used = sums.iter().filter(|s| s.1 > 0).count();
    if used < 2 {
        return 0.0;
    }
    (between / (used - 1) as f64) / (within / (n - used) as f64)
}

/// Runs 1-D k-means for every G in `g_range` and keeps the G with the
/// largest silhouette (ties go to the smaller G).
pub fn kmeans_id_clusters(median_id: &[f64], g_range: &[usize]) -> Result<KMeansSelection> {
    if g_range.is_empty() {
        return Err(Error::config("empty G range"));
    }
    let first = median_id.first().ok_or_else(|| Error::Degenerate("no values".into()))?;
    if median_id.iter().all(|v| v == first) {
        return Err(Error::Degenerate("all values are identical".into()));
    }
    let mut gs = g_range.to_vec();
    gs.sort_unstable();
    gs.dedup();
    let max_g = *gs.last().unwrap();
    if median_id.len() <= max_g {
        return Err(Error::config(format!("need N > {max_g}, got N={}", median_id.len())));
    }
    let runs: Vec<(QualityRow, Vec<usize>, Vec<f64>)> = gs
        .iter()
        .map(|&g| {
            let (labels, centers, history) = kmeans_1d(median_id, g)?;
            let row = QualityRow {
                g,
                silhouette: silhouette(median_id, &labels),
                calinski_harabasz: calinski_harabasz(median_id, &labels),
                wcss: *history.last().unwrap(),
                iterations: history.len(),
                wcss_history: history,
            };
            Ok((row, labels, centers))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.0.silhouette > runs[best].0.silhouette {
            best = i;
        }
    }
    let (row, labels, centers) = &runs[best];
    Ok(KMeansSelection {
        labels: labels.clone(),
        chosen_g: row.g,
        centers: centers.clone(),
        table: runs.iter().map(|r| r.0.clone()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_log_posterior: f64,
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    #[serde(rename = "K")]
    pub best: usize,
    pub table: Vec<KRow>,
}

/// Picks the K with the largest mean retained log-posterior. Several chains
/// for the same K are pooled. Ties go to the smaller K.
pub fn select_k(traces: &[PosteriorTrace]) -> Result<KSelection> {
    let first = traces.first().ok_or(Error::EmptyTrace)?;
    let mut by_k: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for t in traces {
        if t.data_checksum != first.data_checksum {
            return Err(Error::MismatchedData(first.data_checksum.clone(), t.data_checksum.clone()));
        }
        let e = by_k.entry(t.k()).or_default();
        for s in &t.samples {
            e.0 += s.log_posterior;
            e.1 += 1;
        }
    }
    let mut table = Vec::new();
    for (&k, &(sum, count)) in &by_k {
        if count == 0 {
            return Err(Error::EmptyTrace);
        }
        table.push(KRow {
            k,
            mean_log_posterior: sum / count as f64,
            retained: count,
        });
    }
    let mut best = 0;
    for (i, r) in table.iter().enumerate() {
        if r.mean_log_posterior > table[best].mean_log_posterior {
            best = i;
        }
    }
    Ok(KSelection {
        best: table[best].k,
        table,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// `xs` tends to be larger than `ys`.
    Greater,
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    /// Mann-Whitney U of `xs`: pairs with x > y plus half the ties.
    pub u: f64,
    pub p: f64,
    pub method: TestMethod,
}

/// Largest combined sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 16;

/// Mann-Whitney rank-sum test. Exact when the pooled sample has at most 16
/// values and no ties, otherwise normal with tie and continuity corrections.
pub fn mann_whitney(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<RankSumTest> {
    let exact = xs.len() + ys.len() <= EXACT_LIMIT;
    mann_whitney_with(xs, ys, alternative, exact)
}

/// As [`mann_whitney`], but always using the normal approximation.
pub fn mann_whitney_normal(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<RankSumTest> {
    mann_whitney_with(xs, ys, alternative, false)
}

fn mann_whitney_with(xs: &[f64], ys: &[f64], alternative: Alternative, try_exact: bool) -> Result<RankSumTest> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::domain("Mann-Whitney needs two nonempty samples"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::domain("Mann-Whitney samples must be finite"));
    }
    let (n1, n2) = (xs.len(), ys.len());
    let mut pooled: Vec<(f64, bool)> = xs.iter().map(|&x| (x, true)).chain(ys.iter().map(|&y| (y, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum += midrank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    let mean = (n1 * n2) as f64 / 2.0;

    if try_exact && tie_term == 0.0 {
        let dist = rank_sum_distribution(n1, n2);
        let total: f64 = dist.iter().sum();
        let uo = u.round() as usize;
        let upper = dist[uo..].iter().sum::<f64>() / total;
        let lower = dist[..=uo].iter().sum::<f64>() / total;
        let p = match alternative {
            Alternative::Greater => upper,
            Alternative::Less => lower,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        };
        return Ok(RankSumTest { u, p, method: TestMethod::Exact });
    }

    let nf = n as f64;
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        match alternative {
            Alternative::Greater => std_normal.sf((u - mean - 0.5) / sd),
            Alternative::Less => std_normal.cdf((u - mean + 0.5) / sd),
            Alternative::TwoSided => {
                let z = ((u - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * std_normal.sf(z)).min(1.0)
            }
        }
    };
    Ok(RankSumTest { u, p, method: TestMethod::Normal })
}

/// Number of arrangements giving each U value, for U = 0..=n1*n2.
fn rank_sum_distribution(n1: usize, n2: usize) -> Vec<f64> {
    // f[a][b][u]: arrangements of a x's and b y's with statistic u, built by
    // deciding whether the largest value belongs to x (adds b) or y.
    let max_u = n1 * n2;
    let mut f = vec![vec![vec![0.0; max_u + 1]; n2 + 1]; n1 + 1];
    for a in 0..=n1 {
        for b in 0..=n2 {
            if a == 0 || b == 0 {
                f[a][b][0] = 1.0;
                continue;
            }
            for u in 0..=a * b {
                let mut v = f[a][b - 1][u];
                if u >= b {
                    v += f[a - 1][b][u - b];
                }
                f[a][b][u] = v;
            }
        }
    }
    f[n1][n2].clone()
}

/// Writes `id,label` (labels one-based) preceded by the checksum comment.
pub fn write_partition_csv<W: Write>(mut writer: W, ids: &[String], labels: &[usize], checksum: &str) -> Result<()> {
    check_ids(ids, labels.len())?;
    writeln!(writer, "# trace_checksum={checksum}")?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "label"])?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.clone(), (l + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PriorSpec, PriorVariant};
    use crate::sampler::{LogPosteriorParts, Sample, SamplerConfig};

    fn trace_from(zs: &[Vec<usize>], ds: &[Vec<f64>], lp: &[f64]) -> PosteriorTrace {
        let k = ds[0].len();
        let mut config = SamplerConfig::new(PriorSpec::new(PriorVariant::PlainGamma, k, None));
        config.k = k;
        let samples = zs
            .iter()
            .zip(ds)
            .zip(lp)
            .enumerate()
            .map(|(t, ((z, d), &l))| Sample {
                sweep: t,
                z: z.clone(),
                d: d.clone(),
                at_cap: vec![false; k],
                p: vec![1.0 / k as f64; k],
                zeta: 0.8,
                log_posterior: l,
                parts: LogPosteriorParts { mixture: l, adjacency: 0.0, prior: 0.0 },
            })
            .collect();
        PosteriorTrace::from_samples(config, "data".into(), samples).unwrap()
    }

    #[test]
    fn constant_and_alternating_ids() {
        let t = trace_from(&[vec![0, 1], vec![1, 0]], &[vec![7.0, 7.0], vec![7.0, 7.0]], &[0.0, 0.0]);
        let e = per_observation_id(&t).unwrap();
        assert_eq!(e.mean_id, vec![7.0, 7.0]);
        assert_eq!(e.credible[0], (7.0, 7.0));

        let t = trace_from(
            &[vec![0], vec![0], vec![0], vec![0]],
            &[vec![2.0, 9.0], vec![4.0, 9.0], vec![2.0, 9.0], vec![4.0, 9.0]],
            &[0.0; 4],
        );
        let e = per_observation_id(&t).unwrap();
        assert_eq!(e.mean_id[0], 3.0);
        assert_eq!(e.median_id[0], 3.0);
    }

    #[test]
    fn relabeling_leaves_summaries_unchanged() {
        let zs = vec![vec![0, 1, 1], vec![1, 1, 0], vec![0, 0, 1]];
        let ds = vec![vec![1.0, 5.0], vec![2.0, 6.0], vec![3.0, 4.0]];
        let a = trace_from(&zs, &ds, &[0.0; 3]);
        let swapped_z: Vec<Vec<usize>> = zs.iter().map(|z| z.iter().map(|l| 1 - l).collect()).collect();
        let swapped_d: Vec<Vec<f64>> = ds.iter().map(|d| vec![d[1], d[0]]).collect();
        let b = trace_from(&swapped_z, &swapped_d, &[0.0; 3]);
        assert_eq!(per_observation_id(&a).unwrap(), per_observation_id(&b).unwrap());
        assert_eq!(coclustering_matrix(&a).unwrap(), coclustering_matrix(&b).unwrap());
    }

    #[test]
    fn hand_coclustering() {
        let t = trace_from(
            &[vec![0, 0, 1], vec![0, 1, 1], vec![1, 1, 1]],
            &vec![vec![1.0, 2.0]; 3],
            &[0.0; 3],
        );
        let psm = coclustering_matrix(&t).unwrap();
        assert_eq!(psm.get(0, 1), 2.0 / 3.0);
        assert_eq!(psm.get(0, 2), 1.0 / 3.0);
        assert_eq!(psm.get(1, 2), 2.0 / 3.0);
        assert_eq!(psm.get(2, 2), 1.0);
        assert_eq!(psm.get(2, 0), psm.get(0, 2));
    }

    #[test]
    fn empty_trace_errors() {
        let mut t = trace_from(&[vec![0]], &[vec![1.0]], &[0.0]);
        t.samples.clear();
        assert!(matches!(per_observation_id(&t), Err(Error::EmptyTrace)));
        assert!(matches!(coclustering_matrix(&t), Err(Error::EmptyTrace)));
    }

    fn binder_pairs(a: &[usize], b: &[usize]) -> f64 {
        let mut c = 0.0;
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                if (a[i] == a[j]) != (b[i] == b[j]) {
                    c += 1.0;
                }
            }
        }
        c
    }

    fn vi_direct(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let mut vi = 0.0;
        for x in 0..=*a.iter().max().unwrap() {
            for y in 0..=*b.iter().max().unwrap() {
                let nxy = a.iter().zip(b).filter(|(&p, &q)| p == x && q == y).count() as f64;
                if nxy == 0.0 {
                    continue;
                }
                let nx = a.iter().filter(|&&p| p == x).count() as f64;
                let ny = b.iter().filter(|&&q| q == y).count() as f64;
                vi -= nxy / n * ((nxy / nx).log2() + (nxy / ny).log2());
            }
        }
        vi
    }

    #[test]
    fn losses_match_direct_formulas() {
        let a = vec![0, 0, 1, 1, 2, 2, 2];
        let b = vec![0, 1, 1, 1, 0, 2, 2];
        assert_eq!(partition_loss(&a, &b, Loss::Binder), binder_pairs(&a, &b));
        assert!((partition_loss(&a, &b, Loss::VariationOfInformation) - vi_direct(&a, &b)).abs() < 1e-12);
        assert_eq!(partition_loss(&a, &a, Loss::VariationOfInformation), 0.0);
    }

    #[test]
    fn degenerate_trace_returns_its_partition() {
        let z = vec![0, 0, 1, 1, 1];
        let t = trace_from(&vec![z.clone(); 4], &vec![vec![1.0, 2.0]; 4], &[0.0; 4]);
        let psm = coclustering_matrix(&t).unwrap();
        for loss in [Loss::Binder, Loss::VariationOfInformation] {
            let p = point_partition(&psm, &t, loss).unwrap();
            assert_eq!(p.labels, z);
            assert_eq!(p.expected_loss, 0.0);
        }
    }

    #[test]
    fn two_candidate_minimum_by_brute_force() {
        let a = vec![0, 0, 0, 1, 1, 1];
        let b = vec![0, 0, 1, 1, 1, 1];
        let zs = vec![a.clone(), a.clone(), b.clone()];
        let t = trace_from(&zs, &vec![vec![1.0, 2.0]; 3], &[0.0; 3]);
        let psm = coclustering_matrix(&t).unwrap();
        for (loss, direct) in [
            (Loss::Binder, binder_pairs as fn(&[usize], &[usize]) -> f64),
            (Loss::VariationOfInformation, vi_direct),
        ] {
            let p = point_partition(&psm, &t, loss).unwrap();
            let exp = |c: &[usize]| zs.iter().map(|z| direct(c, z)).sum::<f64>() / 3.0;
            assert!(exp(&a) < exp(&b));
            assert_eq!(p.labels, a);
            assert!((p.expected_loss - exp(&a)).abs() < 1e-12);
        }
        let permuted: Vec<Vec<usize>> = zs.iter().map(|z| z.iter().map(|l| 1 - l).collect()).collect();
        let t2 = trace_from(&permuted, &vec![vec![1.0, 2.0]; 3], &[0.0; 3]);
        assert_eq!(point_partition(&psm, &t2, Loss::Binder).unwrap().labels, a);
    }

    /// Textbook O(N^3) average linkage; returns the sorted merge heights.
    fn naive_average_heights(d: &[Vec<f64>]) -> Vec<f64> {
        let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
        let mut heights = Vec::new();
        while clusters.len() > 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut s = 0.0;
                    for &i in &clusters[a] {
                        for &j in &clusters[b] {
                            s += d[i][j];
                        }
                    }
                    let avg = s / (clusters[a].len() * clusters[b].len()) as f64;
                    if avg < best.0 {
                        best = (avg, a, b);
                    }
                }
            }
            let merged = clusters.remove(best.2);
            clusters[best.1].extend(merged);
            heights.push(best.0);
        }
        heights
    }

    fn random_psm(n: usize, seed: u64) -> SimilarityMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v: f64 = rng.random();
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        SimilarityMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn linkage_heights_match_naive() {
        let psm = random_psm(15, 3);
        let d: Vec<Vec<f64>> = (0..15).map(|i| psm.row(i).iter().map(|v| 1.0 - v).collect()).collect();
        let mut expected = naive_average_heights(&d);
        expected.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = average_linkage(&psm).steps().iter().map(|s| s.dissimilarity).collect();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn block_psm_gives_contiguous_order() {
        let n = 8;
        let block = [0, 1, 0, 1, 1, 0, 0, 1];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if block[i] == block[j] { 1.0 } else { 0.0 }).collect())
            .collect();
        let psm = SimilarityMatrix::from_rows(&rows).unwrap();
        let order = heatmap_order(&psm);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let seq: Vec<usize> = order.iter().map(|&i| block[i]).collect();
        let switches = seq.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1);
        assert_eq!(cut_tree(&average_linkage(&psm), 2), canonical_labels(&block));
    }

    #[test]
    fn kmeans_separated_values() {
        let v = [1.0, 1.1, 9.0, 9.1];
        let r = kmeans_id_clusters(&v, &[2, 3]).unwrap();
        assert_eq!(r.chosen_g, 2);
        assert_eq!(r.labels, vec![0, 0, 1, 1]);
        // Direct silhouette: a = 0.1, b = mean distance to the other pair.
        let s = |a: f64, b: f64| (b - a) / a.max(b);
        let expected = (s(0.1, 8.05) + s(0.1, 7.95) + s(0.1, 7.95) + s(0.1, 8.05)) / 4.0;
        assert!((r.table[0].silhouette - expected).abs() < 1e-9);
        assert!(kmeans_id_clusters(&[2.0; 5], &[2]).is_err());
        assert!(kmeans_id_clusters(&v, &[4]).is_err());
    }

    #[test]
    fn kmeans_wcss_never_increases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..300).map(|i| (i % 3) as f64 * 2.0 + rng.random::<f64>() * 3.0).collect();
        for g in 2..=8 {
            let (_, _, h) = kmeans_1d(&v, g).unwrap();
            assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{h:?}");
        }
    }

    #[test]
    fn kmeans_refills_empty_clusters() {
        // Tied quantile starts leave a cluster empty at first.
        let mut v = vec![1.0; 8];
        v.extend([5.0, 9.0]);
        let (labels, _, h) = kmeans_1d(&v, 3).unwrap();
        assert_eq!(count_labels(&labels), 3);
        assert!(labels.iter().all(|&l| l < 3));
        assert!(h.last().unwrap().abs() < 1e-12);
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{h:?}");
    }

    #[test]
    fn calinski_harabasz_by_hand() {
        let v = [0.0, 2.0, 10.0, 12.0];
        let labels = [0, 0, 1, 1];
        // Between: 2 * 25 * 2 = 100 over 1; within: 4 over 2.
        assert!((calinski_harabasz(&v, &labels) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn select_k_rules() {
        let one = trace_from(&[vec![0]], &[vec![1.0]], &[-3.0]);
        assert_eq!(select_k(std::slice::from_ref(&one)).unwrap().best, 1);
        let two = trace_from(&[vec![0]], &[vec![1.0, 2.0]], &[-3.0]);
        assert_eq!(select_k(&[two.clone(), one.clone()]).unwrap().best, 1);
        let better = trace_from(&[vec![0]], &[vec![1.0, 2.0]], &[-1.0]);
        let sel = select_k(&[one.clone(), better]).unwrap();
        assert_eq!(sel.best, 2);
        assert_eq!(sel.table.len(), 2);
        let mut other = one.clone();
        other.data_checksum = "else".into();
        assert!(matches!(select_k(&[one, other]), Err(Error::MismatchedData(..))));
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0], Alternative::Less).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p - 0.05).abs() < 1e-12);
        let r = mann_whitney(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0], Alternative::Greater).unwrap();
        assert_eq!(r.u, 9.0);
        assert_eq!(r.method, TestMethod::Exact);
        assert!((r.p - 0.05).abs() < 1e-12);

        let xs = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney(&xs, &xs, Alternative::TwoSided).unwrap();
        assert_eq!(r.u, 8.0);
        assert_eq!(r.method, TestMethod::Normal);
        assert!(r.p > 0.99);
        assert!(mann_whitney(&[], &xs, Alternative::Less).is_err());
    }

    /// Brute-force p-value over all C(n1+n2, n1) splits of the ranks.
    fn enumerate_upper(n1: usize, n2: usize, u_obs: f64) -> f64 {
        let n = n1 + n2;
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            let r: usize = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).sum();
            let u = r as f64 - (n1 * (n1 + 1)) as f64 / 2.0;
            total += 1;
            if u >= u_obs {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn exact_distribution_matches_enumeration() {
        let xs = [0.3, 2.5, 4.1, 7.7, 9.0];
        let ys = [1.0, 1.5, 3.3, 5.2, 6.0, 8.1];
        let r = mann_whitney(&xs, &ys, Alternative::Greater).unwrap();
        assert!((r.p - enumerate_upper(5, 6, r.u)).abs() < 1e-12);
        let rev = mann_whitney(&ys, &xs, Alternative::Greater).unwrap();
        let dist = rank_sum_distribution(5, 6);
        let point = dist[r.u as usize] / dist.iter().sum::<f64>();
        assert!((r.p + rev.p - 1.0 - point).abs() < 1e-12);
    }

    #[test]
    fn normal_one_sided_p_values_cover_one() {
        let xs = [1.0, 4.0, 5.5, 8.0, 9.0, 11.0, 12.0, 13.5, 20.0];
        let ys = [2.0, 3.0, 6.0, 7.0, 10.0, 14.0, 15.0, 16.0, 17.0, 18.0];
        let a = mann_whitney(&xs, &ys, Alternative::Greater).unwrap();
        let b = mann_whitney(&ys, &xs, Alternative::Greater).unwrap();
        assert_eq!(a.method, TestMethod::Normal);
        assert!(a.p + b.p >= 1.0);
    }

    #[test]
    fn exports_carry_checksum() {
        let t = trace_from(&[vec![0, 1, 1]], &[vec![1.0, 2.0]], &[0.0]);
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut out = Vec::new();
        per_observation_id(&t).unwrap().write_csv(&mut out, &ids, "abc").unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("# trace_checksum=abc\nid,mean_id"));
        let mut out = Vec::new();
        let psm = coclustering_matrix(&t).unwrap();
        psm.write_csv(&mut out, &ids, Some(&[2, 1, 0]), "abc").unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("id,c,b,a"));
        assert!(psm.write_csv(Vec::new(), &ids, Some(&[0, 0, 1]), "x").is_err());
    }
}

//! Exact nearest-neighbor structure over a point cloud.
//!
//! Everything downstream is driven by two objects built here: the two-NN
//! ratio `mu_i = r_i2 / r_i1` and the q-NN adjacency matrix. Both are built
//! from a [`NeighborGraph`], which holds the first `q_max` neighbors of every
//! point with distance ties broken by ascending row index.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N observations in R^D, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    points: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if rows.len() < 3 {
            return Err(Error::InvalidDataset(format!(
                "need at least 3 observations, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidDataset("ambient dimension is zero".into()));
        }
        let mut points = Vec::with_capacity(rows.len() * dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "row {r} has {} columns, expected {dim}",
                    row.len()
                )));
            }
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: r, col: c });
                }
            }
            points.extend_from_slice(row);
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate row label {id:?}")));
            }
        }
        Ok(Dataset { ids, points, dim })
    }

    /// Rows labelled by their zero-based position.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// Largest per-coordinate range; the reference length for jitter.
    pub fn scale(&self) -> f64 {
        (0..self.dim)
            .map(|c| {
                let (lo, hi) = self.rows().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[c]), hi.max(r[c]))
                });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Copy with uniform noise of magnitude `1e-8 * scale` on every coordinate.
    ///
    /// Used to break exact coincidences that would otherwise make the two-NN
    /// ratio undefined.
    pub fn jittered(&self, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = self.scale();
        let magnitude = 1e-8 * if scale > 0.0 { scale } else { 1.0 };
        let points = self
            .points
            .iter()
            .map(|v| v + rng.random_range(-magnitude..=magnitude))
            .collect();
        Dataset {
            ids: self.ids.clone(),
            points,
            dim: self.dim,
        }
    }

    /// Reads a CSV with a header row. A leading `id` column, if present,
    /// supplies row labels; lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let has_id = headers
            .get(0)
            .map(|h| h.eq_ignore_ascii_case("id"))
            .unwrap_or(false);
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (n, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(n as u64 + 2);
            let mut fields = record.iter();
            let id = if has_id {
                fields.next().unwrap_or_default().to_string()
            } else {
                n.to_string()
            };
            let row = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        msg: format!("{f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ids.push(id);
            rows.push(row);
        }
        Self::new(ids, rows)
    }

    /// Reads a JSON array of arrays; rows are labelled by position.
    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_reader(reader)?;
        Self::from_rows(rows)
    }

    /// Dispatches on the file extension (`.json` or anything else as CSV).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::read_json(file),
            _ => Self::read_csv(file),
        }
    }

    /// Writes `id,x1..xD`. Values use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.dim).map(|c| format!("x{c}")));
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Chebyshev => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "manhattan" | "l1" => Ok(Metric::Manhattan),
            "chebyshev" | "linf" => Ok(Metric::Chebyshev),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
        };
        f.write_str(s)
    }
}

/// How neighbors are searched. Both strategies return identical graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Search {
    #[default]
    BruteForce,
    KdTree,
}

/// First `q_max` neighbors of every point, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    nn_index: Vec<usize>,
    nn_dist: Vec<f64>,
    q_max: usize,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.nn_index.len() / self.q_max
    }

    pub fn is_empty(&self) -> bool {
        self.nn_index.is_empty()
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.nn_index[i * self.q_max..(i + 1) * self.q_max]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.nn_dist[i * self.q_max..(i + 1) * self.q_max]
    }
}

pub fn build_knn_graph(data: &Dataset, q_max: usize, metric: Metric) -> Result<NeighborGraph> {
    build_knn_graph_with(data, q_max, metric, Search::BruteForce)
}

pub fn build_knn_graph_with(
    data: &Dataset,
    q_max: usize,
    metric: Metric,
    search: Search,
) -> Result<NeighborGraph> {
    let n = data.len();
    if q_max < 2 {
        return Err(Error::config(format!("q_max must be at least 2, got {q_max}")));
    }
    if n <= q_max {
        return Err(Error::config(format!(
            "need more than q_max={q_max} points, got {n}"
        )));
    }

    let rows: Vec<Vec<(f64, usize)>> = match search {
        Search::BruteForce => (0..n)
            .into_par_iter()
            .map(|i| brute_force_row(data, i, q_max, metric))
            .collect(),
        Search::KdTree => {
            let tree = KdTree::build(data);
            (0..n)
                .into_par_iter()
                .map(|i| tree.query(data, i, q_max, metric))
                .collect()
        }
    };

    let mut nn_index = Vec::with_capacity(n * q_max);
    let mut nn_dist = Vec::with_capacity(n * q_max);
    for (i, row) in rows.into_iter().enumerate() {
        if row[0].0 == 0.0 {
            return Err(Error::DuplicatePoints(i.min(row[0].1), i.max(row[0].1)));
        }
        for (d, j) in row {
            nn_dist.push(d);
            nn_index.push(j);
        }
    }
    Ok(NeighborGraph {
        nn_index,
        nn_dist,
        q_max,
    })
}

/// Keeps `best` sorted by (distance, index) and at most `k` long.
#[inline]
fn offer(best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    if best.len() == k {
        let worst = best[k - 1];
        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
            return;
        }
        best.pop();
    }
    let pos = best
        .iter()
        .position(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1))
        .unwrap_or(best.len());
    best.insert(pos, cand);
}

fn brute_force_row(data: &Dataset, i: usize, k: usize, metric: Metric) -> Vec<(f64, usize)> {
    let xi = data.row(i);
    let mut best = Vec::with_capacity(k + 1);
    for j in 0..data.len() {
        if j != i {
            offer(&mut best, k, (metric.distance(xi, data.row(j)), j));
        }
    }
    best
}

const LEAF_SIZE: usize = 16;

enum KdNode {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: Box<KdNode>,
        right: Box<KdNode>,
    },
}

struct KdTree {
    root: KdNode,
}

impl KdTree {
    fn build(data: &Dataset) -> Self {
        let idx: Vec<usize> = (0..data.len()).collect();
        KdTree {
            root: Self::build_node(data, idx),
        }
    }

    fn build_node(data: &Dataset, mut idx: Vec<usize>) -> KdNode {
        if idx.len() <= LEAF_SIZE {
            return KdNode::Leaf(idx);
        }
        let (axis, spread) = (0..data.dim())
            .map(|c| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = data.row(i)[c];
                    (lo.min(v), hi.max(v))
                });
                (c, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if spread <= 0.0 {
            return KdNode::Leaf(idx);
        }
        idx.sort_by(|&a, &b| data.row(a)[axis].total_cmp(&data.row(b)[axis]));
        let mid = idx.len() / 2;
        let value = data.row(idx[mid])[axis];
        let right = idx.split_off(mid);
        KdNode::Split {
            axis,
            value,
            left: Box::new(Self::build_node(data, idx)),
            right: Box::new(Self::build_node(data, right)),
        }
    }

    fn query(&self, data: &Dataset, i: usize, k: usize, metric: Metric) -> Vec<(f64, usize)> {
        let mut best = Vec::with_capacity(k + 1);
        Self::visit(&self.root, data, i, k, metric, &mut best);
        best
    }

    fn visit(
        node: &KdNode,
        data: &Dataset,
        i: usize,
        k: usize,
        metric: Metric,
        best: &mut Vec<(f64, usize)>,
    ) {
        match node {
            KdNode::Leaf(points) => {
                let xi = data.row(i);
                for &j in points {
                    if j != i {
                        offer(best, k, (metric.distance(xi, data.row(j)), j));
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = data.row(i)[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                Self::visit(near, data, i, k, metric, best);
                // Per-axis gap is a lower bound for all three metrics; shrink it
                // slightly so rounding can never prune an exact tie.
                let bound = diff.abs() * (1.0 - 1e-12);
                if best.len() < k || bound <= best[k - 1].0 {
                    Self::visit(far, data, i, k, metric, best);
                }
            }
        }
    }
}

/// Two-NN ratios `r_i2 / r_i1`.
pub fn compute_mu(graph: &NeighborGraph) -> Result<Vec<f64>> {
    if graph.q_max() < 2 {
        return Err(Error::config("two-NN ratio needs at least two neighbors"));
    }
    (0..graph.len())
        .map(|i| {
            let d = graph.distances(i);
            if d[0] == 0.0 {
                Err(Error::DuplicatePoints(i, graph.indices(i)[0]))
            } else {
                Ok(d[1] / d[0])
            }
        })
        .collect()
}

/// Binary q-NN matrix stored as the q neighbor indices of each row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    neighbors: Vec<usize>,
    q: usize,
}

impl AdjacencyMatrix {
    /// Builds directly from neighbor lists. Every row must hold exactly `q`
    /// distinct indices, none equal to the row itself.
    pub fn from_rows(rows: &[Vec<usize>], q: usize) -> Result<Self> {
        let n = rows.len();
        let mut neighbors = Vec::with_capacity(n * q);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != q {
                return Err(Error::config(format!("row {i} has {} neighbors, expected {q}", row.len())));
            }
            let mut seen = HashSet::new();
            for &j in row {
                if j >= n || j == i || !seen.insert(j) {
                    return Err(Error::config(format!("row {i} has invalid neighbor {j}")));
                }
            }
            neighbors.extend_from_slice(row);
        }
        Ok(AdjacencyMatrix { neighbors, q })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len().checked_div(self.q).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.q..(i + 1) * self.q]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).contains(&j)
    }

    /// For every point, the rows that list it as a neighbor.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.len()];
        for i in 0..self.len() {
            for &j in self.row(i) {
                inc[j].push(i);
            }
        }
        inc
    }

    pub fn write_csv<W: Write>(&self, writer: W, ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.q).map(|j| format!("nn_{j}")));
        w.write_record(&header)?;
        for (i, id) in ids.iter().enumerate().take(self.len()) {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|j| j.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_adjacency(graph: &NeighborGraph, q: usize) -> Result<AdjacencyMatrix> {
    if q == 0 {
        return Err(Error::config("q must be at least 1"));
    }
    if q > graph.q_max() {
        return Err(Error::config(format!(
            "q={q} exceeds the {} neighbors computed",
            graph.q_max()
        )));
    }
    let neighbors = (0..graph.len())
        .flat_map(|i| graph.indices(i)[..q].iter().copied())
        .collect();
    Ok(AdjacencyMatrix { neighbors, q })
}

pub fn write_mu_csv<W: Write>(writer: W, ids: &[String], mu: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "mu"])?;
    for (id, m) in ids.iter().zip(mu) {
        w.write_record([id.as_str(), &m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

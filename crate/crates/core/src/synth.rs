//! Point clouds with known intrinsic dimension, and the classical two-NN
//! estimators used to cross-check the Bayesian fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{Dataset, Metric};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    /// Uniform on `[0, scale]^d`.
    Hypercube,
    /// Isotropic normal with standard deviation `scale`.
    Gaussian,
    /// Uniform on a segment of length `scale`.
    Line,
    /// Uniform on a circle of radius `scale`.
    Circle,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub n: usize,
    pub d_true: usize,
    #[serde(rename = "D")]
    pub ambient_dim: usize,
    /// Translation applied last; empty means the origin.
    #[serde(default)]
    pub offset: Vec<f64>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub rotate: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, n: usize, d_true: usize, ambient_dim: usize, seed: u64) -> Self {
        ManifoldSpec {
            kind,
            n,
            d_true,
            ambient_dim,
            offset: Vec::new(),
            scale: 1.0,
            rotate: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_true == 0 {
            return Err(Error::config("d_true must be at least 1"));
        }
        if self.d_true > self.ambient_dim {
            return Err(Error::config(format!(
                "d_true ({}) exceeds D ({})",
                self.d_true, self.ambient_dim
            )));
        }
        if self.n < 3 {
            return Err(Error::config(format!("n must be at least 3, got {}", self.n)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config(format!("scale must be positive, got {}", self.scale)));
        }
        if !self.offset.is_empty() && self.offset.len() != self.ambient_dim {
            return Err(Error::config(format!(
                "offset has {} entries for D = {}",
                self.offset.len(),
                self.ambient_dim
            )));
        }
        match self.kind {
            ManifoldKind::Line | ManifoldKind::Circle if self.d_true != 1 => Err(Error::config(
                format!("{:?} is one-dimensional, got d_true = {}", self.kind, self.d_true),
            )),
            ManifoldKind::Circle if self.ambient_dim < 2 => {
                Err(Error::config("a circle needs D >= 2"))
            }
            _ => Ok(()),
        }
    }
}

/// Random orthogonal matrix (rows) by Gram-Schmidt on a Gaussian matrix.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn sample_points(spec: &ManifoldSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.ambient_dim;
    let s = spec.scale;
    let mut rows: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| {
            let mut x = vec![0.0; dim];
            match spec.kind {
                ManifoldKind::Hypercube => {
                    x.iter_mut().take(spec.d_true).for_each(|v| *v = s * rng.random::<f64>());
                }
                ManifoldKind::Gaussian => {
                    x.iter_mut()
                        .take(spec.d_true)
                        .for_each(|v| *v = s * rng.sample::<f64, _>(StandardNormal));
                }
                ManifoldKind::Line => x[0] = s * rng.random::<f64>(),
                ManifoldKind::Circle => {
                    let t = std::f64::consts::TAU * rng.random::<f64>();
                    x[0] = s * t.cos();
                    x[1] = s * t.sin();
                }
            }
            x
        })
        .collect();
    if spec.rotate {
        let rot = random_rotation(dim, &mut rng);
        for x in rows.iter_mut() {
            *x = rot.iter().map(|r| r.iter().zip(x.iter()).map(|(a, b)| a * b).sum()).collect();
        }
    }
    if !spec.offset.is_empty() {
        for x in rows.iter_mut() {
            x.iter_mut().zip(&spec.offset).for_each(|(v, o)| *v += o);
        }
    }
    rows
}

/// Samples one manifold. Every label is 0.
pub fn generate(spec: &ManifoldSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let rows = sample_points(spec);
    let labels = vec![0; rows.len()];
    Ok((Dataset::from_rows(rows)?, labels))
}

/// Concatenates several manifolds, labelled by their position in `specs`.
///
/// Every pair of manifolds must be at least 5 times the largest `scale`
/// apart (closest pair of points, Euclidean).
pub fn multi_manifold(specs: &[ManifoldSpec]) -> Result<(Dataset, Vec<usize>)> {
    if specs.is_empty() {
        return Err(Error::config("no manifolds given"));
    }
    let dim = specs[0].ambient_dim;
    for s in specs {
        s.validate()?;
        if s.ambient_dim != dim {
            return Err(Error::config("all manifolds must share the ambient dimension"));
        }
    }
    let clouds: Vec<Vec<Vec<f64>>> = specs.iter().map(sample_points).collect();
    let required = 5.0 * specs.iter().map(|s| s.scale).fold(0.0, f64::max);
    for a in 0..clouds.len() {
        for b in a + 1..clouds.len() {
            let gap = min_cross_distance(&clouds[a], &clouds[b]);
            if gap < required {
                return Err(Error::SeparationViolated { a, b, gap, required });
            }
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (label, cloud) in clouds.into_iter().enumerate() {
        labels.extend(std::iter::repeat_n(label, cloud.len()));
        rows.extend(cloud);
    }
    Ok((Dataset::from_rows(rows)?, labels))
}

fn min_cross_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    use rayon::prelude::*;
    a.par_iter()
        .map(|x| {
            b.iter()
                .map(|y| Metric::Euclidean.distance(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Writes the `id,label` sidecar for a generated dataset.
pub fn write_labels_csv<W: std::io::Write>(writer: W, data: &Dataset, labels: &[usize]) -> Result<()> {
    if labels.len() != data.len() {
        return Err(Error::config(format!(
            "{} labels for {} points",
            labels.len(),
            data.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "label"])?;
    for (id, label) in data.ids().iter().zip(labels) {
        w.write_record([id.as_str(), &label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Maximum-likelihood shape of Pareto(1, d): `N / sum log mu_i`.
///
/// Ratios equal to 1 (exact ties) carry no information about d and are
/// dropped with a warning as long as they are under 1% of the sample;
/// otherwise the estimate is refused.
pub fn twonn_mle(mu: &[f64]) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::Degenerate("no ratios".into()));
    }
    if let Some(m) = mu.iter().find(|m| !(**m >= 1.0)) {
        return Err(Error::domain(format!("ratio {m} is below 1")));
    }
    let ties = mu.iter().filter(|&&m| m == 1.0).count();
    if ties > 0 {
        if ties as f64 >= 0.01 * mu.len() as f64 {
            return Err(Error::Degenerate(format!(
                "{ties} of {} ratios equal 1",
                mu.len()
            )));
        }
        log::warn!("excluding {ties} tied ratios (mu = 1) from the two-NN MLE");
    }
    let used = mu.len() - ties;
    let total: f64 = mu.iter().filter(|&&m| m > 1.0).map(|m| m.ln()).sum();
    Ok(used as f64 / total)
}

/// Linearized least-squares two-NN estimate.
///
/// Sorts the ratios, drops the largest `discard_fraction` of them, and
/// regresses `-log(1 - F(mu))` on `log mu` through the origin, where
/// `F(mu_(i)) = i / N` is the empirical CDF. The point with `F = 1` is never
/// used.
pub fn twonn_linear_fit(mu: &[f64], discard_fraction: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&discard_fraction) {
        return Err(Error::config(format!(
            "discard_fraction must lie in [0, 0.5), got {discard_fraction}"
        )));
    }
    let mut sorted = mu.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let keep = ((n as f64) * (1.0 - discard_fraction)).floor() as usize;
    let keep = keep.min(n.saturating_sub(1));
    if keep < 10 {
        return Err(Error::Degenerate(format!("only {keep} ratios left for the fit")));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, m) in sorted.iter().take(keep).enumerate() {
        let x = m.ln();
        let y = -(1.0 - (i + 1) as f64 / n as f64).ln();
        sxy += x * y;
        sxx += x * x;
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("all retained ratios equal 1".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::{build_knn_graph, compute_mu};

    fn mu_of(d: &Dataset) -> Vec<f64> {
        compute_mu(&build_knn_graph(d, 2, Metric::Euclidean).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_mle() {
        let e = std::f64::consts::E;
        assert!((twonn_mle(&[e, e, e]).unwrap() - 1.0).abs() < 1e-15);
        let half = 0.5f64.exp();
        assert!((twonn_mle(&[half; 8]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ties_are_dropped_or_refused() {
        let mut mu = vec![2.0; 200];
        mu[0] = 1.0;
        assert!((twonn_mle(&mu).unwrap() - 1.0 / 2f64.ln()).abs() < 1e-12);
        mu[1] = 1.0;
        assert!(twonn_mle(&mu).is_err());
    }

    #[test]
    fn linear_fit_on_exact_quantiles() {
        let n = 10_000;
        let grid: Vec<f64> = (1..=n).map(|i| (1.0 - i as f64 / (n + 1) as f64).powf(-0.5)).collect();
        assert!((twonn_linear_fit(&grid, 0.1).unwrap() - 2.0).abs() < 1e-3);
        assert!((twonn_linear_fit(&grid, 0.0).unwrap() - 2.0).abs() < 1e-2);
        assert!(twonn_linear_fit(&grid[..10], 0.0).is_err());
        assert!(twonn_linear_fit(&grid, 0.5).is_err());
    }

    #[test]
    fn line_is_collinear_after_derotation() {
        let mut spec = ManifoldSpec::new(ManifoldKind::Line, 50, 1, 3, 4);
        spec.rotate = true;
        let (d, _) = generate(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let _: f64 = rng.random();
        }
        let rot = random_rotation(3, &mut rng);
        for row in d.rows() {
            // R^T x recovers the unrotated point (t, 0, 0).
            let back: Vec<f64> = (0..3).map(|c| (0..3).map(|r| rot[r][c] * row[r]).sum()).collect();
            assert!(back[1].abs() < 1e-9 && back[2].abs() < 1e-9);
        }
    }

    #[test]
    fn circle_radius() {
        let mut spec = ManifoldSpec::new(ManifoldKind::Circle, 100, 1, 5, 8);
        spec.scale = 2.5;
        spec.rotate = true;
        spec.offset = vec![1.0, -2.0, 3.0, 0.0, 7.0];
        let (d, _) = generate(&spec).unwrap();
        for row in d.rows() {
            let r: f64 = row.iter().zip(&spec.offset).map(|(x, o)| (x - o).powi(2)).sum::<f64>().sqrt();
            assert!((r - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_errors() {
        assert!(generate(&ManifoldSpec::new(ManifoldKind::Hypercube, 10, 4, 3, 0)).is_err());
        assert!(generate(&ManifoldSpec::new(ManifoldKind::Line, 10, 2, 3, 0)).is_err());
        assert!(generate(&ManifoldSpec::new(ManifoldKind::Hypercube, 2, 1, 3, 0)).is_err());
        let json = r#"{"kind":"hypercube","n":20,"d_true":2,"D":4,"seed":3}"#;
        let spec: ManifoldSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.scale, 1.0);
        assert_eq!(generate(&spec).unwrap().0, generate(&spec).unwrap().0);
    }

    #[test]
    fn separation_is_enforced() {
        let line = ManifoldSpec::new(ManifoldKind::Line, 100, 1, 6, 1);
        let mut gauss = ManifoldSpec::new(ManifoldKind::Gaussian, 100, 6, 6, 2);
        gauss.offset = vec![10.0; 6];
        let (d, labels) = multi_manifold(&[line.clone(), gauss.clone()]).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 100);
        gauss.offset = vec![0.5; 6];
        assert!(matches!(
            multi_manifold(&[line.clone(), gauss]),
            Err(Error::SeparationViolated { .. })
        ));
        let (single, _) = multi_manifold(std::slice::from_ref(&line)).unwrap();
        assert_eq!(single, generate(&line).unwrap().0);
    }

    #[test]
    fn square_mle_near_two() {
        let (d, _) = generate(&ManifoldSpec::new(ManifoldKind::Hypercube, 2000, 2, 2, 12)).unwrap();
        let est = twonn_mle(&mu_of(&d)).unwrap();
        assert!((1.8..=2.2).contains(&est), "{est}");
    }

    #[test]
    fn five_dimensional_cube() {
        let (d, labels) = generate(&ManifoldSpec::new(ManifoldKind::Hypercube, 2500, 5, 10, 21)).unwrap();
        let mu = mu_of(&d);
        let mle = twonn_mle(&mu).unwrap();
        let fit = twonn_linear_fit(&mu, 0.1).unwrap();
        assert!((4.5..=5.5).contains(&mle), "{mle}");
        assert!((fit - mle).abs() / mle < 0.15, "{fit} vs {mle}");
        let mut out = Vec::new();
        write_labels_csv(&mut out, &d, &labels).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("id,label\n"));
        assert_eq!(text.lines().count(), 2501);
    }

    #[test]
    fn rotation_leaves_estimates_unchanged() {
        let mut spec = ManifoldSpec::new(ManifoldKind::Hypercube, 500, 3, 6, 5);
        let (plain, _) = generate(&spec).unwrap();
        spec.rotate = true;
        let (rotated, _) = generate(&spec).unwrap();
        let a = twonn_mle(&mu_of(&plain)).unwrap();
        let b = twonn_mle(&mu_of(&rotated)).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn nested_hypercubes_are_ordered() {
        let est: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&d| {
                let (data, _) = generate(&ManifoldSpec::new(ManifoldKind::Hypercube, 1500, d, 10, 7)).unwrap();
                twonn_mle(&mu_of(&data)).unwrap()
            })
            .collect();
        assert!(est[0] < est[1] && est[1] < est[2], "{est:?}");
    }
}

//! Two manifolds of different dimension in the same space: a circle and a
//! 6-dimensional Gaussian blob in R^12. Fits K = 2 and reports how many
//! points land on the right dimension.
//!
//! cargo run --release --example segment_manifolds [K] [sweeps] [truncated|repulsive]

use std::time::Instant;

use hidalgo::neighbors::{build_adjacency, build_knn_graph, compute_mu};
use hidalgo::posterior::{coclustering_matrix, per_observation_id, point_partition, Loss};
use hidalgo::sampler::run_chain;
use hidalgo::synth::{multi_manifold, ManifoldKind, ManifoldSpec};
use hidalgo::{Metric, PriorSpec, PriorVariant, SamplerConfig};

fn main() -> hidalgo::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(2, |s| s.parse().expect("K"));
    let sweeps: usize = args.next().map_or(2000, |s| s.parse().expect("sweeps"));
    let variant = match args.next().as_deref() {
        None | Some("truncated") => PriorVariant::TruncatedGamma,
        Some("repulsive") => PriorVariant::Repulsive,
        Some(other) => panic!("unknown prior {other}"),
    };

    let dim = 12;
    let mut circle = ManifoldSpec::new(ManifoldKind::Circle, 1000, 1, dim, 1);
    circle.rotate = true;
    let mut blob = ManifoldSpec::new(ManifoldKind::Gaussian, 1000, 6, dim, 2);
    blob.rotate = true;
    blob.offset = vec![10.0; dim];
    let (data, truth) = multi_manifold(&[circle, blob])?;
    let true_dim = [1.0, 6.0];

    let start = Instant::now();
    let graph = build_knn_graph(&data, 3, Metric::Euclidean)?;
    let mu = compute_mu(&graph)?;
    let adj = build_adjacency(&graph, 3)?;

    let mut config = SamplerConfig::new(PriorSpec::new(variant, k, Some(dim as f64)));
    config.k = k;
    config.sweeps = sweeps;
    config.burn_in = sweeps / 2;
    config.seed = 3;
    let trace = run_chain(&mu, &adj, &config)?;
    let ids = per_observation_id(&trace)?;
    let psm = coclustering_matrix(&trace)?;
    let partition = point_partition(&psm, &trace, Loss::Binder)?;
    let elapsed = start.elapsed();

    let closer = ids
        .median_id
        .iter()
        .zip(&truth)
        .filter(|(m, &t)| (*m - true_dim[t]).abs() < (*m - true_dim[1 - t]).abs())
        .count();
    let last = trace.samples.last().expect("retained sweeps");
    println!("K = {k}, {} retained sweeps in {elapsed:.2?}", trace.len());
    let mut sizes = vec![0; k];
    last.z.iter().for_each(|&l| sizes[l] += 1);
    println!("last draw of d: {:?}", last.d);
    println!("component sizes: {sizes:?}");
    println!("points closer to their true dimension: {closer} / {}", truth.len());
    println!(
        "groups in the Binder partition: {}",
        partition.labels.iter().max().map_or(0, |m| m + 1)
    );
    for (label, name) in [(0, "circle"), (1, "gaussian")] {
        let mut m: Vec<f64> = ids
            .median_id
            .iter()
            .zip(&truth)
            .filter(|(_, &t)| t == label)
            .map(|(v, _)| *v)
            .collect();
        m.sort_by(f64::total_cmp);
        println!("median ID on the {name}: {:.3}", m[m.len() / 2]);
    }
    Ok(())
}

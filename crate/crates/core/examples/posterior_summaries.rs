//! Summaries of a fitted trace: per-point IDs with credible intervals, the
//! co-clustering matrix in dendrogram order, Binder and VI partitions, and
//! k-means groups of the median IDs.
//!
//! cargo run --release --example posterior_summaries

use hidalgo::neighbors::{build_adjacency, build_knn_graph, compute_mu};
use hidalgo::posterior::{
    coclustering_matrix, heatmap_order, kmeans_id_clusters, per_observation_id, point_partition, Loss,
};
use hidalgo::sampler::run_chain;
use hidalgo::synth::{multi_manifold, ManifoldKind, ManifoldSpec};
use hidalgo::{Metric, PriorSpec, PriorVariant, SamplerConfig};

fn main() -> hidalgo::Result<()> {
    let dim = 6;
    let plane = ManifoldSpec::new(ManifoldKind::Hypercube, 150, 2, dim, 1);
    let mut blob = ManifoldSpec::new(ManifoldKind::Gaussian, 150, 5, dim, 2);
    blob.offset = vec![15.0; dim];
    let (data, truth) = multi_manifold(&[plane, blob])?;
    let graph = build_knn_graph(&data, 3, Metric::Euclidean)?;
    let mu = compute_mu(&graph)?;
    let adj = build_adjacency(&graph, 3)?;

    let mut config = SamplerConfig::new(PriorSpec::new(PriorVariant::TruncatedGamma, 2, Some(dim as f64)));
    config.k = 2;
    let trace = run_chain(&mu, &adj, &config)?;

    let ids = per_observation_id(&trace)?;
    for i in [0, 1, 150, 151] {
        let (lo, hi) = ids.credible[i];
        println!(
            "point {i} (true d = {}): median {:.2}, 95% interval [{lo:.2}, {hi:.2}]",
            [2, 5][truth[i]],
            ids.median_id[i]
        );
    }

    let psm = coclustering_matrix(&trace)?;
    let order = heatmap_order(&psm);
    let switches = order.windows(2).filter(|w| truth[w[0]] != truth[w[1]]).count();
    println!("heatmap order crosses between manifolds {switches} time(s)");
    let within = psm.get(0, 1);
    let across = psm.get(0, 150);
    println!("co-clustering: same manifold {within:.2}, different manifolds {across:.2}");

    for loss in [Loss::Binder, Loss::VariationOfInformation] {
        let p = point_partition(&psm, &trace, loss)?;
        let groups = p.labels.iter().max().map_or(0, |m| m + 1);
        println!(
            "{loss:?}: {groups} groups, expected loss {:.3}, {} candidates",
            p.expected_loss, p.candidates
        );
    }

    let km = kmeans_id_clusters(&ids.median_id, &[2, 3, 4])?;
    println!("k-means on median IDs picks G = {} with centers {:.2?}", km.chosen_g, km.centers);
    for row in &km.table {
        println!(
            "  G = {}: silhouette {:.3}, Calinski-Harabasz {:.1}",
            row.g, row.silhouette, row.calinski_harabasz
        );
    }
    Ok(())
}

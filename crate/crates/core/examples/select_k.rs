//! Compares K = 1..4 by the mean log-posterior of the retained sweeps.
//!
//! cargo run --release --example select_k

use hidalgo::neighbors::{build_adjacency, build_knn_graph, compute_mu};
use hidalgo::posterior::select_k;
use hidalgo::sampler::run_chains;
use hidalgo::synth::{multi_manifold, ManifoldKind, ManifoldSpec};
use hidalgo::{Metric, PriorSpec, PriorVariant, SamplerConfig};

fn main() -> hidalgo::Result<()> {
    let dim = 8;
    let line = ManifoldSpec::new(ManifoldKind::Line, 400, 1, dim, 1);
    let mut cube = ManifoldSpec::new(ManifoldKind::Hypercube, 400, 4, dim, 2);
    cube.offset = vec![20.0; dim];
    let (data, _) = multi_manifold(&[line, cube])?;
    let graph = build_knn_graph(&data, 3, Metric::Euclidean)?;
    let mu = compute_mu(&graph)?;
    let adj = build_adjacency(&graph, 3)?;

    let mut traces = Vec::new();
    for k in 1..=4 {
        let mut config = SamplerConfig::new(PriorSpec::new(PriorVariant::TruncatedGamma, k, Some(dim as f64)));
        config.k = k;
        config.sweeps = 1500;
        config.burn_in = 750;
        traces.extend(run_chains(&mu, &adj, &config, 2, 2)?);
    }
    let selection = select_k(&traces)?;
    for row in &selection.table {
        println!("K = {}: mean log-posterior {:.2} over {} sweeps", row.k, row.mean_log_posterior, row.retained);
    }
    println!("selected K = {}", selection.best);
    Ok(())
}

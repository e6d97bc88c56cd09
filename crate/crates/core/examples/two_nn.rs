//! The two-NN ratio on uniform hypercubes: the closed-form MLE, the
//! linear fit on the empirical CDF, and the one-component Bayesian
//! posterior should all land near the true dimension.
//!
//! cargo run --release --example two_nn

use hidalgo::neighbors::{build_adjacency, build_knn_graph, compute_mu};
use hidalgo::posterior::per_observation_id;
use hidalgo::sampler::run_chain;
use hidalgo::synth::{generate, twonn_linear_fit, twonn_mle, ManifoldKind, ManifoldSpec};
use hidalgo::{Metric, PriorSpec, PriorVariant, SamplerConfig};

fn main() -> hidalgo::Result<()> {
    println!("{:>4} {:>4} {:>8} {:>8} {:>10}", "d", "D", "MLE", "fit", "posterior");
    for (d, dim) in [(1, 3), (2, 5), (4, 8), (8, 12)] {
        let spec = ManifoldSpec::new(ManifoldKind::Hypercube, 2000, d, dim, d as u64);
        let (data, _) = generate(&spec)?;
        let graph = build_knn_graph(&data, 3, Metric::Euclidean)?;
        let mu = compute_mu(&graph)?;
        let adj = build_adjacency(&graph, 3)?;

        let mut config = SamplerConfig::new(PriorSpec::new(PriorVariant::TruncatedGamma, 1, Some(dim as f64)));
        config.sweeps = 1000;
        config.burn_in = 500;
        let trace = run_chain(&mu, &adj, &config)?;
        let ids = per_observation_id(&trace)?;
        println!(
            "{d:>4} {dim:>4} {:>8.3} {:>8.3} {:>10.3}",
            twonn_mle(&mu)?,
            twonn_linear_fit(&mu, 0.1)?,
            ids.median_id[0]
        );
    }
    Ok(())
}

//! Shot charts: player positions at the release of every shot, their
//! intrinsic dimension, success rate per cluster and a rank-sum test of
//! made against missed shots.
//!
//! cargo run --release --example shot_charts [tracking.csv pbp.csv]

use std::fs::File;
use std::path::PathBuf;

use hidalgo::ingest::{build_plays, build_shot_charts, parse_tracking_csv, read_pbp_csv, ChartMode};
use hidalgo::neighbors::{build_adjacency, build_knn_graph, compute_mu};
use hidalgo::posterior::{coclustering_matrix, mann_whitney, per_observation_id, point_partition, Alternative, Loss};
use hidalgo::sampler::run_chain;
use hidalgo::{Dataset, Metric, PriorSpec, PriorVariant, SamplerConfig};

fn main() -> hidalgo::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/shots");
    let mut args = std::env::args().skip(1);
    let tracking = args.next().map_or(fixtures.join("tracking.csv"), PathBuf::from);
    let pbp = args.next().map_or(fixtures.join("pbp.csv"), PathBuf::from);

    let parsed = parse_tracking_csv(File::open(tracking)?)?;
    let set = build_plays(&parsed.frames, &read_pbp_csv(File::open(pbp)?)?)?;
    let charts = build_shot_charts(&set.plays, ChartMode::TwoTeam, None)?;
    println!("{} shots, {} coordinates each", charts.len(), charts.dim());

    let data = Dataset::new(charts.row_ids(), charts.matrix.clone())?;
    let graph = build_knn_graph(&data, 3, Metric::Euclidean)?;
    let mu = compute_mu(&graph)?;
    let adj = build_adjacency(&graph, 3)?;
    let mut config = SamplerConfig::new(PriorSpec::new(PriorVariant::TruncatedGamma, 2, Some(charts.dim() as f64)));
    config.k = 2;
    let trace = run_chain(&mu, &adj, &config)?;
    let ids = per_observation_id(&trace)?;
    let partition = point_partition(&coclustering_matrix(&trace)?, &trace, Loss::Binder)?;

    let groups = partition.labels.iter().max().map_or(0, |m| m + 1);
    for g in 0..groups {
        let members: Vec<usize> = (0..charts.len()).filter(|&i| partition.labels[i] == g).collect();
        let made = members.iter().filter(|&&i| charts.outcomes[i] == 1).count();
        let mut m: Vec<f64> = members.iter().map(|&i| ids.median_id[i]).collect();
        m.sort_by(f64::total_cmp);
        println!(
            "cluster {}: {} shots, {made} made ({:.0}%), median ID {:.2}",
            g + 1,
            members.len(),
            100.0 * made as f64 / members.len() as f64,
            m[m.len() / 2]
        );
    }

    let (made, missed): (Vec<usize>, Vec<usize>) = (0..charts.len()).partition(|&i| charts.outcomes[i] == 1);
    let pick = |v: &[usize]| v.iter().map(|&i| ids.median_id[i]).collect::<Vec<_>>();
    let test = mann_whitney(&pick(&made), &pick(&missed), Alternative::TwoSided)?;
    println!(
        "made vs missed median IDs: U = {}, p = {:.4} ({:?})",
        test.u, test.p, test.method
    );
    Ok(())
}

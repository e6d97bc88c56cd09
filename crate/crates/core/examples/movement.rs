//! Per-frame intrinsic dimension of one possession: court normalization,
//! the offensive-half filter, downsampling to 2.5 Hz and a Hidalgo fit on
//! the 20 player coordinates.
//!
//! cargo run --release --example movement [tracking.csv pbp.csv event]

use std::fs::File;
use std::path::PathBuf;

use hidalgo::ingest::{
    build_plays, downsample, movement_matrix, offensive_half_filter, parse_tracking_csv, read_pbp_csv, shot_moment,
    speed_angle,
};
use hidalgo::neighbors::{build_adjacency, build_knn_graph, compute_mu};
use hidalgo::posterior::per_observation_id;
use hidalgo::sampler::run_chain;
use hidalgo::{Dataset, Metric, PriorSpec, PriorVariant, SamplerConfig};

fn main() -> hidalgo::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/game");
    let mut args = std::env::args().skip(1);
    let tracking = args.next().map_or(fixtures.join("tracking.csv"), PathBuf::from);
    let pbp = args.next().map_or(fixtures.join("pbp.csv"), PathBuf::from);
    let event = args.next().unwrap_or_else(|| "1".into());

    let parsed = parse_tracking_csv(File::open(tracking)?)?;
    let set = build_plays(&parsed.frames, &read_pbp_csv(File::open(pbp)?)?)?;
    let play = set
        .plays
        .iter()
        .find(|p| p.event_id == event)
        .ok_or_else(|| hidalgo::Error::Ingest(format!("no play {event}")))?;
    println!(
        "play {event}: {} frames, {:.2} s, offense {}, reflected: {}",
        play.len(),
        play.duration(),
        play.offense_team,
        play.reflected
    );
    if play.outcome.is_shot() {
        println!("release at frame {}", shot_moment(play)?);
    }

    let small = downsample(&offensive_half_filter(play), 10)?;
    let rows = movement_matrix(&small)?;
    let (speed, _) = speed_angle(&small)?;
    println!("{} frames x {} coordinates, {} speed rows", rows.len(), rows[0].len(), speed.len());

    let data = Dataset::from_rows(rows)?;
    let graph = build_knn_graph(&data, 3, Metric::Euclidean)?;
    let mu = compute_mu(&graph)?;
    let adj = build_adjacency(&graph, 3)?;
    let mut config = SamplerConfig::new(PriorSpec::new(PriorVariant::Repulsive, 3, Some(20.0)));
    config.k = 3;
    let ids = per_observation_id(&run_chain(&mu, &adj, &config)?)?;
    println!("frame  time    median ID  95% interval");
    for (i, f) in small.frames.iter().enumerate() {
        let (lo, hi) = ids.credible[i];
        println!(
            "{:>5}  {:>6.2}  {:>9.2}  [{lo:.2}, {hi:.2}]",
            f.frame_index,
            f.timestamp - small.frames[0].timestamp,
            ids.median_id[i]
        );
    }
    Ok(())
}

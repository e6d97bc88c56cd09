#![allow(dead_code)]

use std::path::PathBuf;

use hidalgo::ingest::{build_plays, parse_tracking_csv, read_pbp_csv, Play};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Headerless numeric CSV, parsed with the standard float parser.
pub fn read_matrix(rel: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(fixture(rel)).expect("fixture readable");
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().expect("number")).collect())
        .collect()
}

pub fn fixture_plays(dir: &str) -> Vec<Play> {
    let tracking = std::fs::File::open(fixture(&format!("{dir}/tracking.csv"))).unwrap();
    let pbp = std::fs::File::open(fixture(&format!("{dir}/pbp.csv"))).unwrap();
    let parsed = parse_tracking_csv(tracking).unwrap();
    let rows = read_pbp_csv(pbp).unwrap();
    build_plays(&parsed.frames, &rows).unwrap().plays
}

/// Pareto(1, d) draws by inversion.
pub fn pareto_sample(n: usize, d: f64, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / d)).collect()
}

/// Normalized mutual information with the arithmetic-mean normalization.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    let n = a.len() as f64;
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    let mut cab: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
        *cab.entry((x, y)).or_default() += 1.0;
    }
    let h = |c: &HashMap<usize, f64>| -c.values().map(|v| v / n * (v / n).ln()).sum::<f64>();
    let (ha, hb) = (h(&ca), h(&cb));
    let mi: f64 = cab
        .iter()
        .map(|(&(x, y), &v)| v / n * (v * n / (ca[&x] * cb[&y])).ln())
        .sum();
    if ha + hb == 0.0 {
        1.0
    } else {
        mi / ((ha + hb) / 2.0)
    }
}

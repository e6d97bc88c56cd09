//! The `hidalgo` command line: `simulate`, `estimate`, `analyze-movement`,
//! `analyze-shotcharts` and `verify`.
//!
//! Every command writes only inside `--out` and finishes by writing
//! `manifest.json`, which lists the configuration, the inputs and every
//! output with its SHA-256.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{
    self, build_plays, build_shot_charts, categorize_shot, downsample, duration_split, movement_matrix,
    offensive_half_filter, parse_tracking_csv, read_pbp_csv, shot_moment, speed_angle, ChartMode, MarginBand, Play,
};
use crate::model::{PriorSpec, PriorVariant, ZetaMode};
use crate::neighbors::{build_adjacency, build_knn_graph, compute_mu, write_mu_csv, Dataset, Metric};
use crate::posterior::{
    coclustering_matrix, heatmap_order, kmeans_id_clusters, mann_whitney, per_observation_id, point_partition,
    pool_traces, quantile_sorted, select_k, write_partition_csv, Alternative, IdEstimates, KMeansSelection,
    KSelection, Loss, PointPartition, SimilarityMatrix,
};
use crate::sampler::{hex, run_chains, PosteriorTrace, SamplerConfig};
use crate::synth::{multi_manifold, write_labels_csv, ManifoldSpec};

pub const JOBS_ENV: &str = "HIDALGO_JOBS";

#[derive(Debug, Parser)]
#[command(name = "hidalgo", version, about = "Heterogeneous intrinsic dimension estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample synthetic manifolds from a JSON spec (one spec or a list).
    Simulate(SimulateArgs),
    /// Fit the mixture to a dataset and export estimates.
    Estimate(EstimateArgs),
    /// Per-frame ID of possessions from tracking data.
    AnalyzeMovement(MovementArgs),
    /// ID of shot charts, clusters, success rates and group tests.
    AnalyzeShotcharts(ShotChartArgs),
    /// Re-check the checksums recorded in a manifest.
    Verify {
        manifest: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorArg {
    Plain,
    Truncated,
    Spike,
    Repulsive,
}

impl From<PriorArg> for PriorVariant {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Plain => PriorVariant::PlainGamma,
            PriorArg::Truncated => PriorVariant::TruncatedGamma,
            PriorArg::Spike => PriorVariant::TruncatedGammaWithSpike,
            PriorArg::Repulsive => PriorVariant::Repulsive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Binder,
    Vi,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Binder => Loss::Binder,
            LossArg::Vi => Loss::VariationOfInformation,
        }
    }
}

/// Hyperparameters read from `--prior-config`; anything left out keeps
/// its default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorOverrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub rho_hat: Option<f64>,
    pub tau: Option<f64>,
    pub nu: Option<f64>,
    /// Dirichlet concentration shared by all components.
    pub c: Option<f64>,
    #[serde(rename = "D_cap")]
    pub d_cap: Option<f64>,
}

/// Sampler and post-processing flags shared by every fitting command.
#[derive(Clone, Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long = "K", default_value_t = 2)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = PriorArg::Truncated)]
    pub prior: PriorArg,
    #[arg(long)]
    pub prior_config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub q: usize,
    /// A fixed value in (0.5, 1), or `sample` / `sample:F1,F0` for a Beta prior.
    #[arg(long, default_value = "0.8")]
    pub zeta: String,
    /// Drop the neighborhood term from the likelihood.
    #[arg(long)]
    pub no_adjacency: bool,
    #[arg(long, default_value_t = 2000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Worker threads; 0 means one per core.
    #[arg(long, env = JOBS_ENV, default_value_t = 0)]
    #[serde(skip)]
    pub jobs: usize,
    /// Add noise of relative size 1e-8 to break exact duplicates.
    #[arg(long)]
    pub jitter: bool,
    #[arg(long, value_enum, default_value_t = LossArg::Binder)]
    pub loss: LossArg,
    #[arg(long, default_value = "euclidean")]
    pub metric: Metric,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Range `a..b` (inclusive) of K values compared by mean log-posterior.
    #[arg(long = "K-scan")]
    pub k_scan: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Features {
    Xy,
    Speed,
    Angle,
}

#[derive(Debug, Args)]
pub struct MovementArgs {
    pub tracking: PathBuf,
    pub pbp: PathBuf,
    #[arg(long)]
    pub game: Option<String>,
    /// Event id of a single play; all plays when omitted.
    #[arg(long)]
    pub play: Option<String>,
    #[arg(long, value_enum, default_value_t = Features::Xy)]
    pub features: Features,
    #[arg(long, default_value_t = 10)]
    pub downsample: usize,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    TwoTeam,
    SingleAttack,
    SingleDefense,
}

impl From<ModeArg> for ChartMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TwoTeam => ChartMode::TwoTeam,
            ModeArg::SingleAttack => ChartMode::SingleAttack,
            ModeArg::SingleDefense => ChartMode::SingleDefense,
        }
    }
}

#[derive(Debug, Args)]
pub struct ShotChartArgs {
    pub tracking: PathBuf,
    pub pbp: PathBuf,
    #[arg(long)]
    pub game: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::TwoTeam)]
    pub mode: ModeArg,
    #[arg(long)]
    pub team: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    /// Recomputes every output checksum (and every input that is still
    /// readable) and fails on the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in &self.outputs {
            let got = sha256_file(&dir.join(&f.path))?;
            if got != f.sha256 {
                return Err(Error::MismatchedData(f.sha256.clone(), format!("{got} ({})", f.path)));
            }
        }
        for f in &self.inputs {
            let p = Path::new(&f.path);
            if p.exists() {
                let got = sha256_file(p)?;
                if got != f.sha256 {
                    return Err(Error::MismatchedData(f.sha256.clone(), format!("{got} ({})", f.path)));
                }
            }
        }
        Ok(())
    }
}

/// Output directory that remembers what was written into it.
struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.root.join(name))?);
        body(&mut w)?;
        w.flush()?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(
        mut self,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        inputs: &[&Path],
    ) -> Result<RunManifest> {
        let mut outputs = Vec::new();
        for f in &self.files {
            outputs.push(FileDigest {
                path: f.clone(),
                sha256: sha256_file(&self.root.join(f))?,
            });
        }
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs,
            outputs,
        };
        self.files.clear();
        self.write_json(MANIFEST_NAME, &manifest)?;
        Ok(manifest)
    }
}

/// File-name-safe version of an event id.
fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn parse_zeta(s: &str) -> Result<ZetaMode> {
    let bad = || Error::config(format!("--zeta: expected a value in (0.5, 1), `sample` or `sample:F1,F0`, got {s:?}"));
    if s == "sample" {
        return Ok(ZetaMode::Sampled { f1: 1.0, f0: 1.0 });
    }
    if let Some(rest) = s.strip_prefix("sample:") {
        let (f1, f0) = rest.split_once(',').ok_or_else(bad)?;
        let f1: f64 = f1.trim().parse().map_err(|_| bad())?;
        let f0: f64 = f0.trim().parse().map_err(|_| bad())?;
        if !(f1 > 0.0 && f0 > 0.0) {
            return Err(bad());
        }
        return Ok(ZetaMode::Sampled { f1, f0 });
    }
    let z: f64 = s.parse().map_err(|_| bad())?;
    if !(z > 0.5 && z < 1.0) {
        return Err(bad());
    }
    Ok(ZetaMode::Fixed(z))
}

/// Parses `a..b` (inclusive).
pub fn parse_k_scan(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::config(format!("--K-scan: expected a range like 1..3, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

impl FitArgs {
    fn jobs(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    /// Sampler configuration for `k` components on data of dimension `dim`.
    pub fn sampler_config(&self, k: usize, dim: usize) -> Result<SamplerConfig> {
        if k == 0 {
            return Err(Error::config("--K must be at least 1"));
        }
        if self.q == 0 {
            return Err(Error::config("--q must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("--thin must be at least 1"));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::config(format!(
                "--sweeps ({}) must exceed --burn-in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if (self.sweeps - self.burn_in) / self.thin == 0 {
            return Err(Error::config("--thin leaves no retained sweeps"));
        }
        if self.chains == 0 {
            return Err(Error::config("--chains must be at least 1"));
        }
        let overrides: PriorOverrides = match &self.prior_config {
            Some(p) => serde_json::from_reader(File::open(p)?)
                .map_err(|e| Error::config(format!("--prior-config: {e}")))?,
            None => PriorOverrides::default(),
        };
        let variant = PriorVariant::from(self.prior);
        let cap = overrides.d_cap.or(Some(dim as f64));
        let mut prior = PriorSpec::new(variant, k, if variant == PriorVariant::PlainGamma { None } else { cap });
        if let Some(a) = overrides.a {
            prior.a = a;
        }
        if let Some(b) = overrides.b {
            prior.b = b;
        }
        if let Some(r) = overrides.rho_hat {
            prior.rho_hat = r;
        }
        if let Some(t) = overrides.tau {
            prior.tau = t;
        }
        if let Some(n) = overrides.nu {
            prior.nu = n;
        }
        if let Some(c) = overrides.c {
            prior.c = vec![c; k];
        }
        prior.zeta_mode = parse_zeta(&self.zeta)?;
        prior
            .validate()
            .map_err(|e| Error::config(format!("--prior/--prior-config: {e}")))?;
        let mut config = SamplerConfig::new(prior);
        config.k = k;
        config.sweeps = self.sweeps;
        config.burn_in = self.burn_in;
        config.thin = self.thin;
        config.seed = self.seed;
        config.q = self.q;
        config.adjacency_on = !self.no_adjacency;
        config.validate()?;
        Ok(config)
    }
}

/// Everything one fit produces.
pub struct Fit {
    pub data: Dataset,
    pub mu: Vec<f64>,
    pub traces: Vec<PosteriorTrace>,
    pub pooled: PosteriorTrace,
    pub ids: IdEstimates,
    pub psm: SimilarityMatrix,
    pub order: Vec<usize>,
    pub partition: PointPartition,
    pub kmeans: Option<KMeansSelection>,
    pub k_selection: Option<KSelection>,
}

impl Fit {
    pub fn checksum(&self) -> String {
        self.pooled.checksum()
    }
}

/// Runs the whole estimation pipeline on `data`, optionally comparing
/// several K.
pub fn fit_dataset(data: Dataset, args: &FitArgs, k_values: &[usize]) -> Result<Fit> {
    let data = if args.jitter { data.jittered(args.seed) } else { data };
    let q_max = args.q.max(2);
    if data.len() <= q_max {
        return Err(Error::InvalidDataset(format!(
            "{} points are too few for q={} (need more than {q_max})",
            data.len(),
            args.q
        )));
    }
    let graph = build_knn_graph(&data, q_max, args.metric)?;
    let mu = compute_mu(&graph)?;
    let adj = build_adjacency(&graph, args.q)?;
    let jobs = args.jobs();

    let configs = k_values
        .iter()
        .map(|&k| args.sampler_config(k, data.dim()))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Vec<PosteriorTrace>> = configs
        .iter()
        .map(|c| run_chains(&mu, &adj, c, args.chains, jobs))
        .collect::<Result<_>>()?;
    let (traces, k_selection) = if k_values.len() > 1 {
        let all: Vec<PosteriorTrace> = runs.iter().flatten().cloned().collect();
        let sel = select_k(&all)?;
        let best = runs.into_iter().find(|r| r[0].k() == sel.best).expect("selected K was run");
        (best, Some(sel))
    } else {
        (runs.into_iter().next().expect("one K"), None)
    };

    let pooled = pool_traces(&traces)?;
    let ids = per_observation_id(&pooled)?;
    let psm = coclustering_matrix(&pooled)?;
    let order = heatmap_order(&psm);
    let partition = point_partition(&psm, &pooled, args.loss.into())?;
    let g_range: Vec<usize> = (2..=8).filter(|&g| g < data.len()).collect();
    let kmeans = if g_range.is_empty() {
        None
    } else {
        match kmeans_id_clusters(&ids.median_id, &g_range) {
            Ok(k) => Some(k),
            Err(e) => {
                log::info!("k-means on median IDs skipped: {e}");
                None
            }
        }
    };
    Ok(Fit {
        data,
        mu,
        traces,
        pooled,
        ids,
        psm,
        order,
        partition,
        kmeans,
        k_selection,
    })
}

/// Writes the standard fit artifacts, each name prefixed by `prefix`.
fn write_fit(out: &mut OutDir, prefix: &str, fit: &Fit) -> Result<()> {
    let ids = fit.data.ids();
    let checksum = fit.checksum();
    out.write(&format!("{prefix}mu.csv"), |w| write_mu_csv(w, ids, &fit.mu))?;
    for t in &fit.traces {
        out.write(&format!("{prefix}trace_chain{}.csv", t.chain), |w| t.write_csv(w))?;
        out.write(&format!("{prefix}labels_chain{}.csv", t.chain), |w| t.write_labels(w))?;
    }
    out.write(&format!("{prefix}id_estimates.csv"), |w| fit.ids.write_csv(w, ids, &checksum))?;
    out.write(&format!("{prefix}psm.csv"), |w| fit.psm.write_csv(w, ids, Some(&fit.order), &checksum))?;
    out.write(&format!("{prefix}partition.csv"), |w| {
        write_partition_csv(w, ids, &fit.partition.labels, &checksum)
    })?;
    if let Some(k) = &fit.kmeans {
        out.write(&format!("{prefix}kmeans.json"), |w| k.write_json(w, &checksum))?;
    }
    if let Some(sel) = &fit.k_selection {
        let value = serde_json::json!({ "trace_checksum": checksum, "K": sel.best, "table": sel.table });
        out.write_json(&format!("{prefix}k_scan.json"), &value)?;
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let text = fs::read_to_string(&args.spec)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let specs: Vec<ManifoldSpec> = if value.is_array() {
        serde_json::from_value(value.clone())?
    } else {
        vec![serde_json::from_value(value.clone())?]
    };
    let (data, labels) = multi_manifold(&specs)?;
    let mut out = OutDir::new(&args.out)?;
    out.write("dataset.csv", |w| data.write_csv(w))?;
    out.write("labels.csv", |w| write_labels_csv(w, &data, &labels))?;
    let seed = specs.first().map(|s| s.seed);
    out.finish("simulate", seed, value, &[&args.spec])
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<RunManifest> {
    let data = Dataset::load(&args.data)?;
    let k_values = match &args.k_scan {
        Some(s) => parse_k_scan(s)?,
        None => vec![args.fit.k],
    };
    let fit = fit_dataset(data, &args.fit, &k_values)?;
    let mut out = OutDir::new(&args.out)?;
    write_fit(&mut out, "", &fit)?;
    let mut config = serde_json::to_value(&args.fit)?;
    config["K_scan"] = serde_json::to_value(&args.k_scan)?;
    config["sampler"] = serde_json::to_value(&fit.pooled.config)?;
    out.finish("estimate", Some(args.fit.seed), config, &[&args.data])
}

fn load_plays(tracking: &Path, pbp: &Path, game: Option<&str>) -> Result<ingest::PlaySet> {
    let parsed = parse_tracking_csv(File::open(tracking)?)?;
    let pbp_rows = read_pbp_csv(File::open(pbp)?)?;
    let frames: Vec<_> = parsed
        .frames
        .into_iter()
        .filter(|f| game.is_none_or(|g| f.game_id == g))
        .collect();
    if frames.is_empty() {
        return Err(Error::Ingest("no frames for the requested game".into()));
    }
    build_plays(&frames, &pbp_rows)
}

#[derive(Debug, Serialize)]
struct PlaySummary {
    event_id: String,
    features: Features,
    rows: usize,
    duration: f64,
    duration_class: ingest::DurationClass,
    outcome: ingest::Outcome,
    shot_distance: Option<f64>,
    shot_class: Option<ingest::ShotClass>,
    median_id: f64,
    trace_checksum: String,
}

/// Rows of the analysis matrix and, per row, the frame it is anchored to.
fn movement_features(play: &Play, features: Features) -> Result<Vec<Vec<f64>>> {
    Ok(match features {
        Features::Xy => movement_matrix(play)?,
        Features::Speed => speed_angle(play)?.0,
        Features::Angle => speed_angle(play)?.1,
    })
}

const AUTOCORRELATION_WARNING: &str =
    "frames within a play are autocorrelated; the neighbor ratios are not independent draws";

pub fn cmd_analyze_movement(args: &MovementArgs) -> Result<RunManifest> {
    let set = load_plays(&args.tracking, &args.pbp, args.game.as_deref())?;
    let plays: Vec<&Play> = match &args.play {
        Some(ev) => {
            let p: Vec<&Play> = set.plays.iter().filter(|p| &p.event_id == ev).collect();
            if p.is_empty() {
                return Err(Error::Ingest(format!("--play {ev}: no such valid play")));
            }
            p
        }
        None => set.plays.iter().collect(),
    };
    log::warn!("{AUTOCORRELATION_WARNING}");

    let analyzed: Vec<(String, Result<(Play, Vec<Vec<f64>>, Fit)>)> = plays
        .par_iter()
        .map(|play| {
            let run = || -> Result<(Play, Vec<Vec<f64>>, Fit)> {
                let kept = offensive_half_filter(play);
                let small = downsample(&kept, args.downsample)?;
                let rows = movement_features(&small, args.features)?;
                let ids = (1..=rows.len()).map(|i| format!("frame{i}")).collect();
                let data = Dataset::new(ids, rows.clone())?;
                let fit = fit_dataset(data, &args.fit, &[args.fit.k])?;
                Ok((small, rows, fit))
            };
            (play.event_id.clone(), run())
        })
        .collect();

    let mut out = OutDir::new(&args.out)?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (event, result) in analyzed {
        let (small, rows, fit) = match result {
            Ok(r) => r,
            Err(e) => {
                if args.play.is_some() {
                    return Err(e);
                }
                log::warn!("play {event} skipped: {e}");
                failures.push(serde_json::json!({ "event_id": event, "error": e.to_string() }));
                continue;
            }
        };
        let prefix = format!("play_{}_", safe_name(&event));
        let checksum = fit.checksum();
        out.write(&format!("{prefix}matrix.csv"), |w| ingest::write_matrix_csv(w, fit.data.ids(), &rows))?;
        out.write(&format!("{prefix}id_curve.csv"), |w| {
            writeln!(w, "# trace_checksum={checksum}")?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["row", "frame", "timestamp", "mean_id", "median_id", "lower", "upper"])?;
            for i in 0..rows.len() {
                let f = &small.frames[i];
                let (lo, hi) = fit.ids.credible[i];
                c.write_record([
                    (i + 1).to_string(),
                    f.frame_index.to_string(),
                    f.timestamp.to_string(),
                    fit.ids.mean_id[i].to_string(),
                    fit.ids.median_id[i].to_string(),
                    lo.to_string(),
                    hi.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
        write_fit(&mut out, &prefix, &fit)?;

        let play = set.plays.iter().find(|p| p.event_id == event).expect("analyzed play");
        let shot = if play.outcome.is_shot() {
            shot_moment(play).ok().map(|i| {
                let f = &play.frames[i];
                let shooter = play
                    .shooter_id
                    .as_ref()
                    .and_then(|id| f.players.iter().find(|p| &p.player_id == id));
                shooter.map(|s| (s.x - ingest::HOOP.0).hypot(s.y - ingest::HOOP.1))
            })
        } else {
            None
        }
        .flatten();
        let mut medians = fit.ids.median_id.clone();
        medians.sort_by(f64::total_cmp);
        summaries.push(PlaySummary {
            event_id: event.clone(),
            features: args.features,
            rows: rows.len(),
            duration: small.duration(),
            duration_class: duration_split(&small),
            outcome: play.outcome,
            shot_distance: shot,
            shot_class: shot.map(categorize_shot).transpose()?,
            median_id: quantile_sorted(&medians, 0.5),
            trace_checksum: checksum,
        });
    }
    if summaries.is_empty() {
        return Err(Error::Ingest("no play could be analyzed".into()));
    }
    let summary = serde_json::json!({
        "plays": summaries,
        "failed": failures,
        "unmatched_events": set.unmatched,
        "warnings": std::iter::once(AUTOCORRELATION_WARNING.to_string())
            .chain(set.warnings.iter().cloned())
            .collect::<Vec<_>>(),
    });
    out.write_json("movement_summary.json", &summary)?;
    let mut config = serde_json::to_value(&args.fit)?;
    config["features"] = serde_json::to_value(args.features)?;
    config["downsample"] = args.downsample.into();
    config["game"] = serde_json::to_value(&args.game)?;
    config["play"] = serde_json::to_value(&args.play)?;
    out.finish("analyze-movement", Some(args.fit.seed), config, &[&args.tracking, &args.pbp])
}

#[derive(Debug, Serialize)]
struct GroupRow {
    grouping: String,
    group: String,
    n: usize,
    median_id: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GroupTest {
    grouping: String,
    first: String,
    second: String,
    alternative: Alternative,
    u: f64,
    p: f64,
    method: crate::posterior::TestMethod,
}

fn median_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|x| x.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn cmd_analyze_shotcharts(args: &ShotChartArgs) -> Result<RunManifest> {
    let set = load_plays(&args.tracking, &args.pbp, args.game.as_deref())?;
    let mode = ChartMode::from(args.mode);
    let charts = build_shot_charts(&set.plays, mode, args.team.as_deref()).map_err(|e| match e {
        Error::Config(m) => Error::config(format!("--mode/--team: {m}")),
        other => other,
    })?;
    let data = Dataset::new(charts.row_ids(), charts.matrix.clone())?;
    let fit = fit_dataset(data, &args.fit, &[args.fit.k])?;
    let checksum = fit.checksum();
    let median = &fit.ids.median_id;

    let mut out = OutDir::new(&args.out)?;
    out.write("shotcharts.csv", |w| charts.write_matrix_csv(w))?;
    out.write("shotcharts.json", |w| charts.write_sidecar_json(w))?;
    write_fit(&mut out, "", &fit)?;

    // Success rate per cluster of the point partition.
    let labels = &fit.partition.labels;
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    out.write("success.csv", |w| {
        writeln!(w, "# trace_checksum={checksum}")?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["cluster", "n", "made", "proportion", "median_id"])?;
        for k in 0..clusters {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            let made = members.iter().filter(|&&i| charts.outcomes[i] == 1).count();
            let ids: Vec<f64> = members.iter().map(|&i| median[i]).collect();
            c.write_record([
                (k + 1).to_string(),
                members.len().to_string(),
                made.to_string(),
                (made as f64 / members.len() as f64).to_string(),
                median_of(&ids).map_or(String::new(), |m| m.to_string()),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;

    // The charted team: the offense, except in defense mode.
    let charted_won: Vec<Option<bool>> = charts
        .offense_won
        .iter()
        .map(|w| if mode == ChartMode::SingleDefense { w.map(|x| !x) } else { *w })
        .collect();
    let group = |key: &dyn Fn(usize) -> Option<String>, names: &[String]| -> Vec<(String, Vec<f64>)> {
        names
            .iter()
            .map(|n| {
                let v = (0..median.len())
                    .filter(|&i| key(i).as_deref() == Some(n.as_str()))
                    .map(|i| median[i])
                    .collect();
                (n.clone(), v)
            })
            .collect()
    };
    let shot_names = ["short", "mid_range", "three_points"].map(String::from);
    let margin_names: Vec<String> = MarginBand::ALL.iter().map(snake).collect();
    let outcome_names = ["made", "missed"].map(String::from);
    let result_names = ["winner", "loser"].map(String::from);
    let groupings: Vec<(&str, Vec<(String, Vec<f64>)>)> = vec![
        ("shot_class", group(&|i| Some(snake(&charts.shot_class[i])), &shot_names)),
        ("margin_band", group(&|i| Some(snake(&charts.margin_band[i])), &margin_names)),
        (
            "outcome",
            group(
                &|i| Some(if charts.outcomes[i] == 1 { "made" } else { "missed" }.to_string()),
                &outcome_names,
            ),
        ),
        (
            "result",
            group(
                &|i| charted_won[i].map(|w| if w { "winner" } else { "loser" }.to_string()),
                &result_names,
            ),
        ),
    ];
    let mut table = Vec::new();
    for (name, groups) in &groupings {
        for (g, v) in groups {
            table.push(GroupRow {
                grouping: name.to_string(),
                group: g.clone(),
                n: v.len(),
                median_id: median_of(v),
            });
        }
    }
    out.write("categories.csv", |w| {
        writeln!(w, "# trace_checksum={checksum}")?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["grouping", "group", "n", "median_id"])?;
        for r in &table {
            c.write_record([
                r.grouping.clone(),
                r.group.clone(),
                r.n.to_string(),
                r.median_id.map_or(String::new(), |m| m.to_string()),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;

    let mut tests = Vec::new();
    let mut push_test = |grouping: &str, a: &(String, Vec<f64>), b: &(String, Vec<f64>), alt: Alternative| {
        if a.1.is_empty() || b.1.is_empty() {
            return Ok::<(), Error>(());
        }
        let r = mann_whitney(&a.1, &b.1, alt)?;
        tests.push(GroupTest {
            grouping: grouping.into(),
            first: a.0.clone(),
            second: b.0.clone(),
            alternative: alt,
            u: r.u,
            p: r.p,
            method: r.method,
        });
        Ok(())
    };
    let results = &groupings[3].1;
    push_test("result", &results[0], &results[1], Alternative::TwoSided)?;
    let margins = &groupings[1].1;
    for i in 0..margins.len() {
        for j in i + 1..margins.len() {
            // Smaller margins against larger ones, as in the paper's table.
            push_test("margin_band", &margins[i], &margins[j], Alternative::Greater)?;
        }
    }
    let value = serde_json::json!({ "trace_checksum": checksum, "tests": tests });
    out.write_json("tests.json", &value)?;

    let mut config = serde_json::to_value(&args.fit)?;
    config["mode"] = serde_json::to_value(mode)?;
    config["team"] = serde_json::to_value(&args.team)?;
    config["game"] = serde_json::to_value(&args.game)?;
    out.finish("analyze-shotcharts", Some(args.fit.seed), config, &[&args.tracking, &args.pbp])
}

pub fn cmd_verify(manifest: &Path) -> Result<RunManifest> {
    let m = RunManifest::read(manifest)?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    m.verify(dir)?;
    Ok(m)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::AnalyzeMovement(a) => cmd_analyze_movement(a),
        Command::AnalyzeShotcharts(a) => cmd_analyze_shotcharts(a),
        Command::Verify { manifest } => cmd_verify(manifest),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_flag() {
        assert_eq!(parse_zeta("0.8").unwrap(), ZetaMode::Fixed(0.8));
        assert_eq!(parse_zeta("sample").unwrap(), ZetaMode::Sampled { f1: 1.0, f0: 1.0 });
        assert_eq!(parse_zeta("sample:2,3").unwrap(), ZetaMode::Sampled { f1: 2.0, f0: 3.0 });
        for bad in ["0.5", "1", "x", "sample:1"] {
            assert!(parse_zeta(bad).unwrap_err().to_string().contains("--zeta"));
        }
    }

    #[test]
    fn k_scan_flag() {
        assert_eq!(parse_k_scan("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_k_scan("2..=2").unwrap(), vec![2]);
        assert!(parse_k_scan("3..1").is_err());
        assert!(parse_k_scan("0..2").is_err());
    }

    #[test]
    fn flag_errors_name_the_flag() {
        let cli = Cli::try_parse_from(["hidalgo", "estimate", "x.csv", "--out", "o", "--sweeps", "10", "--burn-in", "20"])
            .unwrap();
        let Command::Estimate(a) = cli.command else { panic!() };
        let err = a.fit.sampler_config(2, 5).unwrap_err().to_string();
        assert!(err.contains("--sweeps"), "{err}");
    }

    #[test]
    fn safe_names() {
        assert_eq!(safe_name("12/a b"), "12_a_b");
    }
}

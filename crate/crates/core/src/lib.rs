//! Heterogeneous intrinsic-dimension estimation.
//!
//! The two-NN ratio `mu_i = r_i2 / r_i1` of a point lying on a d-dimensional
//! manifold is Pareto(1, d) distributed. A finite mixture of Pareto
//! components, coupled through a q-nearest-neighbor adjacency term that
//! rewards neighbors sharing a component, lets each observation pick up its
//! own dimension. This crate builds the neighbor structure, samples the
//! mixture posterior, summarizes it per observation, and turns player
//! tracking data into the matrices the mixture is fitted on.
//!
//! Module map:
//!
//! * [`neighbors`]: exact kNN graph, two-NN ratios, adjacency matrix.
//! * [`model`]: densities, the adjacency normalizer and the priors over `d`.
//! * [`sampler`]: the Gibbs / Metropolis-Hastings chain.
//! * [`posterior`]: per-observation IDs, similarity matrices, partitions,
//!   k-means on IDs, K selection and rank-sum tests.
//! * [`synth`]: manifold generators and classical two-NN estimators.
//! * [`ingest`]: tracking and play-by-play parsing, play matrices, shot charts.
//! * [`cli`]: the `hidalgo` command-line pipelines.

pub mod cli;
pub mod error;
pub mod ingest;
pub mod model;
pub mod neighbors;
pub mod posterior;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
pub use model::{MixtureParams, PriorSpec, PriorVariant, ZetaMode};
pub use neighbors::{AdjacencyMatrix, Dataset, Metric, NeighborGraph};
pub use sampler::{PosteriorTrace, SamplerConfig};

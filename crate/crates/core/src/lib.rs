//! Trust- and reliability-aware discovery of device-to-device data-exchange
//! graphs for federated learning.
//!
//! The crate is organised along the simulation pipeline:
//!
//! * [`net`]: RSS, drop probabilities, reliable clusters, energy.
//! * [`data`]: datasets, label skew, trust matrices, count vectors.
//! * [`partition`]: label / PCA + label propagation / PCA + K-means partitions.
//! * [`exchange`]: the supervised and unsupervised message-passing protocols.
//! * [`diversity`]: Wasserstein, Jensen-Shannon, trace ratio, Gaussian KL.
//! * [`rl`]: per-device Q-tables, rewards, training loop, baselines, brute force.
//! * [`fl`]: desk-scale federated training used to measure downstream effect.
//! * [`harness`]: configuration, scenarios, end-to-end pipeline, summaries.

// `!(x > 0.0)` style checks are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diversity;
pub mod error;
pub mod exchange;
pub mod fl;
pub mod harness;
pub mod linalg;
pub mod net;
pub mod partition;
pub mod rl;
pub mod rng;

pub use data::{CountVector, LocalDataset, SkewSpec, ThresholdVector, TrustMatrix, TrustPattern};
pub use diversity::{DiscreteDistribution, DistanceMetric};
pub use error::{Error, Result};
pub use exchange::{DeliveryMode, UspMessage};
pub use fl::{Arch, ModelParams, Scheme, TrainConfig};
pub use harness::{ExperimentConfig, ResultRow};
pub use net::{DropMatrix, EnergyLedger, LinkKind, RadioModel, ReliableClustering, RssMatrix};
pub use partition::{ClusterSummary, Projection, Subspace};
pub use rl::{AgentPolicy, DiscoveredGraph, PolicyHyper};

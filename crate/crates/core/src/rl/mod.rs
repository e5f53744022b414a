//! Per-device tabular policies over transmitter choices, reward assembly,
//! the greedy multi-edge training loop, heuristic baselines and an
//! exhaustive oracle for tiny systems.

pub mod env;
pub mod policy;
pub mod reward;
pub mod toy;
pub mod train;

pub use env::{Channel, Evaluation, GraphEnv, Move, SupEnv, UspEnv};
pub use policy::{write_policies_csv, AgentPolicy, PolicyEntry, PolicyHyper};
pub use reward::{global_reward, local_reward, objective, overall_reward, round_rewards};
pub use train::{
    baseline_graph, baseline_selections, brute_force_optimal, selection_objective, train_graph,
    BaselineKind, CommitCost, DiscoveredGraph, Discovery,
};

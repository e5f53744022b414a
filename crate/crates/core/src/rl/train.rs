use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{GraphEnv, Move};
use super::policy::{AgentPolicy, PolicyHyper};
use super::reward::{objective, round_rewards};
use crate::error::{invalid, Error, Result};
use crate::exchange::DeliveryMode;
use crate::net::{EnergyLedger, LinkKind, RadioModel};
use crate::rng::{stream, tag, SimRng};

/// Union of committed edges; `adjacency[tx][rx]` is set when `rx`
/// received from `tx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredGraph {
    pub adjacency: Vec<Vec<bool>>,
    pub edges_per_device: usize,
}

impl DiscoveredGraph {
    pub fn empty(n: usize, edges_per_device: usize) -> Self {
        Self {
            adjacency: vec![vec![false; n]; n],
            edges_per_device,
        }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn add(&mut self, tx: usize, rx: usize) {
        self.adjacency[tx][rx] = true;
    }

    pub fn transmitters_of(&self, rx: usize) -> Vec<usize> {
        (0..self.n()).filter(|&tx| self.adjacency[tx][rx]).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().flatten().filter(|&&e| e).count()
    }

    /// No self edges and at most `edges_per_device` transmitters per receiver.
    pub fn is_valid(&self) -> bool {
        (0..self.n()).all(|i| {
            !self.adjacency[i][i] && self.transmitters_of(i).len() <= self.edges_per_device
        })
    }
}

/// Everything a discovery run produces.
#[derive(Debug, Clone)]
pub struct Discovery {
    pub graph: DiscoveredGraph,
    /// Committed selection per greedy round.
    pub rounds: Vec<Vec<Option<usize>>>,
    pub moves: Vec<Move>,
    /// Policies at the end of the last round (empty for baselines).
    pub policies: Vec<AgentPolicy>,
    /// D2D protocol bits spent during training.
    pub rl_bits: u64,
    /// Protocol messages and committed data transfers.
    pub energy: EnergyLedger,
}

/// Heuristic link choices used for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    Uniform,
    Closest,
    MostTrusted,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::None => "none",
            BaselineKind::Uniform => "uniform",
            BaselineKind::Closest => "closest",
            BaselineKind::MostTrusted => "most_trusted",
        }
    }
}

/// Costs of a committed exchange: per-point payload bits and the radio.
#[derive(Debug, Clone, Copy)]
pub struct CommitCost<'a> {
    pub radio: &'a RadioModel,
    pub point_bits: u64,
}

fn charge_moves<E: GraphEnv>(
    env: &E,
    moves: &[Move],
    cost: &CommitCost,
    ledger: &mut EnergyLedger,
) -> Result<()> {
    for m in moves {
        let bits = m.sent.len() as u64 * cost.point_bits;
        ledger.record_transfer(
            bits,
            env.channel().rss().distance(m.rx, m.tx),
            LinkKind::D2d,
            cost.radio,
        )?;
    }
    Ok(())
}

fn commit_round<E: GraphEnv>(
    env: &mut E,
    selections: &[Option<usize>],
    mode: DeliveryMode,
    rng: &mut SimRng,
    cost: &CommitCost,
    out: &mut Discovery,
) -> Result<()> {
    let moves = env.commit(selections, mode, rng)?;
    charge_moves(env, &moves, cost, &mut out.energy)?;
    for (rx, sel) in selections.iter().enumerate() {
        if let Some(tx) = *sel {
            out.graph.add(tx, rx);
        }
    }
    out.rounds.push(selections.to_vec());
    out.moves.extend(moves);
    Ok(())
}

/// Greedy multi-edge discovery. Each of the `edges` rounds trains fresh
/// policies for `hyper.t_rl` steps on hypothetical expected-mode
/// exchanges, then commits every device's most probable transmitter not
/// used in an earlier round.
pub fn train_graph<E: GraphEnv>(
    env: &mut E,
    hyper: &PolicyHyper,
    edges: usize,
    mode: DeliveryMode,
    cost: &CommitCost,
    seed: u64,
) -> Result<Discovery> {
    let n = env.n();
    if edges == 0 || edges >= n {
        return Err(invalid(format!("edges per device must lie in 1..{n}")));
    }
    hyper.validate()?;
    let mut out = Discovery {
        graph: DiscoveredGraph::empty(n, edges),
        rounds: Vec::new(),
        moves: Vec::new(),
        policies: Vec::new(),
        rl_bits: 0,
        energy: EnergyLedger::default(),
    };
    let mut channel_rng = stream(seed, &[tag("channel")]);
    let mut eval_rng = stream(seed, &[tag("evaluate")]);
    let mut commit_rng = stream(seed, &[tag("commit")]);
    let bits = env.message_bits();
    for round in 0..edges {
        let mut policies = (0..n)
            .map(|i| AgentPolicy::new(i, n, hyper.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut action_rngs: Vec<SimRng> = (0..n)
            .map(|i| stream(seed, &[tag("action"), round as u64, i as u64]))
            .collect();
        let used: Vec<Vec<usize>> = (0..n).map(|i| out.graph.transmitters_of(i)).collect();
        for _ in 0..hyper.t_rl {
            env.channel_mut().resample(&mut channel_rng)?;
            let states: Vec<u128> = (0..n).map(|i| env.channel().state(i)).collect();
            let selections: Vec<Option<usize>> = (0..n)
                .map(|i| {
                    policies[i].sample_action_excluding(states[i], &used[i], &mut action_rngs[i])
                })
                .collect();
            let eval = env.evaluate(&selections, &mut eval_rng)?;
            let rewards = round_rewards(&eval, &selections, env.channel(), hyper)?;
            for i in 0..n {
                if let Some(j) = selections[i] {
                    policies[i].update(states[i], j, rewards[i])?;
                    out.rl_bits += bits;
                    let d = env.channel().rss().distance(i, j);
                    out.energy
                        .record_transfer(bits, d, LinkKind::D2d, cost.radio)?;
                }
            }
        }
        let selections: Vec<Option<usize>> = (0..n)
            .map(|i| policies[i].greedy(env.channel().state(i), &used[i]))
            .collect();
        commit_round(env, &selections, mode, &mut commit_rng, cost, &mut out)?;
        out.policies = policies;
    }
    Ok(out)
}

/// One round of heuristic choices. Transmitters in `used[i]` are skipped.
pub fn baseline_selections<E: GraphEnv, R: Rng + ?Sized>(
    kind: BaselineKind,
    env: &E,
    used: &[Vec<usize>],
    rng: &mut R,
) -> Vec<Option<usize>> {
    let n = env.n();
    (0..n)
        .map(|i| {
            let options: Vec<usize> = (0..n)
                .filter(|&j| j != i && !used[i].contains(&j))
                .collect();
            if options.is_empty() {
                return None;
            }
            match kind {
                BaselineKind::None => None,
                BaselineKind::Uniform => Some(options[rng.random_range(0..options.len())]),
                BaselineKind::Closest => options.iter().copied().reduce(|best, j| {
                    if env.channel().drop().get(i, j) < env.channel().drop().get(i, best) {
                        j
                    } else {
                        best
                    }
                }),
                BaselineKind::MostTrusted => options.iter().copied().reduce(|best, j| {
                    if env.trust()[j].row_weight(i) > env.trust()[best].row_weight(i) {
                        j
                    } else {
                        best
                    }
                }),
            }
        })
        .collect()
}

/// Commits `edges` rounds of a baseline.
pub fn baseline_graph<E: GraphEnv>(
    kind: BaselineKind,
    env: &mut E,
    edges: usize,
    mode: DeliveryMode,
    cost: &CommitCost,
    seed: u64,
) -> Result<Discovery> {
    let n = env.n();
    if edges == 0 || edges >= n {
        return Err(invalid(format!("edges per device must lie in 1..{n}")));
    }
    let mut out = Discovery {
        graph: DiscoveredGraph::empty(n, edges),
        rounds: Vec::new(),
        moves: Vec::new(),
        policies: Vec::new(),
        rl_bits: 0,
        energy: EnergyLedger::default(),
    };
    if kind == BaselineKind::None {
        return Ok(out);
    }
    let mut pick_rng = stream(seed, &[tag(kind.name())]);
    let mut commit_rng = stream(seed, &[tag("commit")]);
    for _ in 0..edges {
        let used: Vec<Vec<usize>> = (0..n).map(|i| out.graph.transmitters_of(i)).collect();
        let selections = baseline_selections(kind, env, &used, &mut pick_rng);
        commit_round(env, &selections, mode, &mut commit_rng, cost, &mut out)?;
    }
    Ok(out)
}

/// Objective of one selection vector under an expected-mode evaluation.
pub fn selection_objective<E: GraphEnv>(
    env: &E,
    selections: &[Option<usize>],
    hyper: &PolicyHyper,
    seed: u64,
) -> Result<f64> {
    let eval = env.evaluate(selections, &mut stream(seed, &[tag("objective")]))?;
    objective(&eval, selections, env.channel(), hyper)
}

pub const BRUTE_FORCE_MAX_DEVICES: usize = 6;

/// Exhaustive search over all single-edge mappings for tiny systems.
/// Ties keep the lexicographically smallest mapping.
pub fn brute_force_optimal<E: GraphEnv>(
    env: &E,
    hyper: &PolicyHyper,
    seed: u64,
) -> Result<(DiscoveredGraph, f64)> {
    let n = env.n();
    if n > BRUTE_FORCE_MAX_DEVICES {
        return Err(Error::TooLarge(format!(
            "{n} devices; exhaustive search is limited to {BRUTE_FORCE_MAX_DEVICES}"
        )));
    }
    if n < 2 {
        return Err(invalid("need at least two devices"));
    }
    // digit k of the counter indexes the (n-1) choices of device k, device 0 most significant
    let total = (n - 1).pow(n as u32);
    let mut best: Option<(Vec<Option<usize>>, f64)> = None;
    for code in 0..total {
        let mut rest = code;
        let mut digits = vec![0; n];
        for i in (0..n).rev() {
            digits[i] = rest % (n - 1);
            rest /= n - 1;
        }
        let selections: Vec<Option<usize>> = digits
            .iter()
            .enumerate()
            .map(|(i, &d)| Some(if d >= i { d + 1 } else { d }))
            .collect();
        let value = selection_objective(env, &selections, hyper, seed)?;
        if best.as_ref().is_none_or(|b| value > b.1) {
            best = Some((selections, value));
        }
    }
    let (selections, value) = best.expect("at least one mapping");
    let mut graph = DiscoveredGraph::empty(n, 1);
    for (rx, s) in selections.iter().enumerate() {
        graph.add(s.unwrap(), rx);
    }
    Ok((graph, value))
}

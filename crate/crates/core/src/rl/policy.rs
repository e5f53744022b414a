use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Learning and reward hyperparameters shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyHyper {
    /// Training steps per greedy round.
    pub t_rl: usize,
    /// Reward buffer length.
    pub h: usize,
    pub gamma: f64,
    pub delta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self {
            t_rl: 5000,
            h: 256,
            gamma: 0.5,
            delta: 0.9,
            alpha1: 10.0,
            alpha2: 10.0,
            alpha3: 0.01,
        }
    }
}

impl PolicyHyper {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(invalid("buffer length must be positive"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(invalid("delta must lie in [0, 1]"));
        }
        if ![self.gamma, self.alpha1, self.alpha2, self.alpha3]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(invalid("reward weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Ring {
    items: VecDeque<f64>,
}

impl Ring {
    fn push(&mut self, v: f64, cap: usize) {
        if self.items.len() == cap {
            self.items.pop_front();
        }
        self.items.push_back(v);
    }

    fn sum(&self) -> f64 {
        self.items.iter().sum()
    }

    fn mean(&self) -> f64 {
        if self.items.is_empty() {
            0.0
        } else {
            self.sum() / self.items.len() as f64
        }
    }
}

/// Softmax of `scores` with entry `skip` forced to probability 0.
pub fn softmax_excluding(scores: &[f64], skip: usize) -> Vec<f64> {
    let top = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(j, v)| if j == skip { 0.0 } else { (v - top).exp() })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Tabular softmax policy of one receiver over transmitters.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    device: usize,
    n: usize,
    hyper: PolicyHyper,
    q_reward: BTreeMap<u128, Vec<f64>>,
    q_count: BTreeMap<u128, Vec<u32>>,
    action_buffers: BTreeMap<(u128, usize), Ring>,
    device_buffer: Ring,
}

/// One row of a policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub device: usize,
    pub state: String,
    pub action: usize,
    pub psi_r: f64,
    pub psi_c: u32,
}

impl AgentPolicy {
    pub fn new(device: usize, n: usize, hyper: PolicyHyper) -> Result<Self> {
        if n < 2 {
            return Err(invalid("a policy needs at least two devices"));
        }
        if device >= n {
            return Err(invalid(format!("device {device} outside 0..{n}")));
        }
        hyper.validate()?;
        Ok(Self {
            device,
            n,
            hyper,
            q_reward: BTreeMap::new(),
            q_count: BTreeMap::new(),
            action_buffers: BTreeMap::new(),
            device_buffer: Ring::default(),
        })
    }

    pub fn device(&self) -> usize {
        self.device
    }

    pub fn hyper(&self) -> &PolicyHyper {
        &self.hyper
    }

    pub fn psi_r(&self, q: u128, j: usize) -> f64 {
        self.q_reward.get(&q).map_or(0.0, |v| v[j])
    }

    pub fn psi_c(&self, q: u128, j: usize) -> u32 {
        self.q_count.get(&q).map_or(0, |v| v[j])
    }

    /// Average reward per action; unvisited actions count as 0.
    pub fn averages(&self, q: u128) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let c = self.psi_c(q, j);
                if c == 0 {
                    0.0
                } else {
                    self.psi_r(q, j) / c as f64
                }
            })
            .collect()
    }

    /// Softmax over average rewards with the self action removed.
    pub fn probabilities(&self, q: u128) -> Vec<f64> {
        softmax_excluding(&self.averages(q), self.device)
    }

    /// As [`Self::probabilities`] with further actions masked out; `None`
    /// when nothing is left.
    pub fn probabilities_excluding(&self, q: u128, exclude: &[usize]) -> Option<Vec<f64>> {
        if exclude.is_empty() {
            return Some(self.probabilities(q));
        }
        let mut avg = self.averages(q);
        for &j in exclude {
            avg[j] = f64::NEG_INFINITY;
        }
        if (0..self.n).all(|j| j == self.device || avg[j] == f64::NEG_INFINITY) {
            return None;
        }
        Some(softmax_excluding(&avg, self.device))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, q: u128, rng: &mut R) -> usize {
        self.sample_action_excluding(q, &[], rng)
            .expect("n >= 2 leaves an action")
    }

    pub fn sample_action_excluding<R: Rng + ?Sized>(
        &self,
        q: u128,
        exclude: &[usize],
        rng: &mut R,
    ) -> Option<usize> {
        let p = self.probabilities_excluding(q, exclude)?;
        let mut u = rng.random::<f64>();
        let mut last = usize::MAX;
        for (j, &pj) in p.iter().enumerate() {
            if pj > 0.0 {
                last = j;
                if u < pj {
                    return Some(j);
                }
                u -= pj;
            }
        }
        Some(last)
    }

    /// Most probable action outside `exclude`, ties to the lowest index.
    pub fn greedy(&self, q: u128, exclude: &[usize]) -> Option<usize> {
        let p = self.probabilities(q);
        let mut best: Option<usize> = None;
        for j in 0..self.n {
            if j == self.device || exclude.contains(&j) {
                continue;
            }
            if best.is_none_or(|b| p[j] > p[b]) {
                best = Some(j);
            }
        }
        best
    }

    /// Records reward `r` for action `j` in state `q`. A reward below the
    /// device's running mean is discounted by `delta` before it enters the
    /// action buffer.
    pub fn update(&mut self, q: u128, j: usize, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(Error::Numeric(format!("reward {r} is not finite")));
        }
        if j >= self.n || j == self.device {
            return Err(invalid(format!("action {j} is not a valid transmitter")));
        }
        let stored = if r < self.device_buffer.mean() {
            r - self.hyper.delta * r.abs()
        } else {
            r
        };
        let h = self.hyper.h;
        let ring = self.action_buffers.entry((q, j)).or_default();
        ring.push(stored, h);
        let (sum, len) = (ring.sum(), ring.items.len() as u32);
        self.device_buffer.push(r, h);
        let n = self.n;
        self.q_reward.entry(q).or_insert_with(|| vec![0.0; n])[j] = sum;
        self.q_count.entry(q).or_insert_with(|| vec![0; n])[j] = len;
        Ok(())
    }

    /// Stored (scaled) rewards of one state-action pair, oldest first.
    pub fn action_buffer(&self, q: u128, j: usize) -> Vec<f64> {
        self.action_buffers
            .get(&(q, j))
            .map_or_else(Vec::new, |r| r.items.iter().copied().collect())
    }

    pub fn snapshot(&self) -> Vec<PolicyEntry> {
        self.q_reward
            .iter()
            .flat_map(|(&q, row)| {
                (0..self.n)
                    .filter(move |&j| j != self.device)
                    .map(move |j| PolicyEntry {
                        device: self.device,
                        state: q.to_string(),
                        action: j,
                        psi_r: row[j],
                        psi_c: self.q_count[&q][j],
                    })
            })
            .collect()
    }
}

/// Writes snapshots of several policies as CSV.
pub fn write_policies_csv<W: std::io::Write>(policies: &[AgentPolicy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in policies {
        for e in p.snapshot() {
            w.serialize(e).map_err(|e| Error::Io(e.into()))?;
        }
    }
    w.flush()?;
    Ok(())
}

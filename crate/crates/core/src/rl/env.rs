use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{CountVector, ThresholdVector, TrustMatrix};
use crate::diversity::{agreement_from_gaussians, score_g, trace_ratio, DistanceMetric, Gaussian};
use crate::error::{ensure_len, invalid, Result};
use crate::exchange::{
    deliver, deliver_vec, requesters_of, sup_allocate, sup_grants, sup_message_bits,
    usp_allocate_masked, usp_exchange, usp_request_bits, usp_request_total, usp_response_bits,
    DeliveryMode, UspMessage,
};
use crate::linalg::{sq_dist, Vector};
use crate::net::{
    cluster_reliable, compute_drop_matrix, quantize_state, DropMatrix, ReliableClustering,
    RssMatrix, RssSpec,
};
use crate::partition::ClusterSummary;
use crate::rng::SimRng;

/// Wireless side of the environment: current RSS and drop matrices,
/// reliable clusters with their budgets, and the per-device RL state.
#[derive(Debug, Clone)]
pub struct Channel {
    rss: RssMatrix,
    drop: DropMatrix,
    clustering: ReliableClustering,
    rate: f64,
    noise: f64,
    resolution: usize,
    range: (f64, f64),
    dynamic: Option<RssSpec>,
    states: Vec<u128>,
}

impl Channel {
    /// Clusters are formed once from the initial drop matrix. With
    /// `dynamic` set, [`Channel::resample`] redraws the RSS every step.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rss: RssMatrix,
        rate: f64,
        noise: f64,
        alpha_d: f64,
        budget: u64,
        resolution: usize,
        range: (f64, f64),
        dynamic: Option<RssSpec>,
    ) -> Result<Self> {
        if !(alpha_d > 0.0 && alpha_d < 1.0) {
            return Err(invalid("alpha_d must lie in (0, 1)"));
        }
        let drop = compute_drop_matrix(&rss, rate, noise)?;
        let clustering = cluster_reliable(&drop, alpha_d).with_uniform_budget(budget);
        let mut ch = Self {
            rss,
            drop,
            clustering,
            rate,
            noise,
            resolution,
            range,
            dynamic,
            states: Vec::new(),
        };
        ch.refresh_states()?;
        Ok(ch)
    }

    /// A channel with a fixed drop matrix, mainly for tests.
    pub fn from_drop(drop: DropMatrix, alpha_d: f64, budget: u64) -> Result<Self> {
        let n = drop.n();
        let clustering = cluster_reliable(&drop, alpha_d).with_uniform_budget(budget);
        Ok(Self {
            rss: RssMatrix::uniform(n, 1.0)?,
            drop,
            clustering,
            rate: 1.0,
            noise: 1.0,
            resolution: 1,
            range: (0.0, 1.0),
            dynamic: None,
            states: vec![0; n],
        })
    }

    fn refresh_states(&mut self) -> Result<()> {
        self.states = (0..self.n())
            .map(|i| {
                quantize_state(
                    &self.rss.row_without_self(i),
                    self.resolution,
                    self.range.0,
                    self.range.1,
                )
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if let Some(spec) = self.dynamic {
            self.rss = spec.sample(self.rss.distances(), rng)?;
            self.drop = compute_drop_matrix(&self.rss, self.rate, self.noise)?;
            self.refresh_states()?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.drop.n()
    }

    pub fn drop(&self) -> &DropMatrix {
        &self.drop
    }

    pub fn rss(&self) -> &RssMatrix {
        &self.rss
    }

    pub fn clustering(&self) -> &ReliableClustering {
        &self.clustering
    }

    pub fn state(&self, device: usize) -> u128 {
        self.states[device]
    }

    pub fn is_dynamic(&self) -> bool {
        self.dynamic.is_some()
    }

    pub(crate) fn charge(&mut self, rx: usize, tx: usize, points: u64) {
        if !self.clustering.same_cluster(rx, tx) {
            let k = self.clustering.cluster_of(rx);
            self.clustering.spent[k] += points;
        }
    }
}

/// Result of a hypothetical round.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Diversity gain per receiver (score g or trace ratio).
    pub gain: Vec<f64>,
    /// System agreement of the round, unsupervised only.
    pub agreement: Option<f64>,
    /// Points requested over inter-cluster links, per receiving cluster.
    pub inter_cluster: Vec<u64>,
}

/// Real points moved along one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub tx: usize,
    pub rx: usize,
    pub sent: Vec<usize>,
    pub received: Vec<usize>,
}

pub trait GraphEnv {
    fn channel(&self) -> &Channel;
    fn channel_mut(&mut self) -> &mut Channel;
    /// Hypothetical round for `selections[i]` = transmitter of receiver `i`.
    fn evaluate(&self, selections: &[Option<usize>], rng: &mut SimRng) -> Result<Evaluation>;
    /// Real exchange; updates holdings and cluster spending.
    fn commit(
        &mut self,
        selections: &[Option<usize>],
        mode: DeliveryMode,
        rng: &mut SimRng,
    ) -> Result<Vec<Move>>;
    /// Protocol bits exchanged over one selected edge in one RL step.
    fn message_bits(&self) -> u64;
    /// Point ids per device and partition.
    fn holdings(&self) -> &[Vec<Vec<usize>>];
    fn trust(&self) -> &[TrustMatrix];

    fn n(&self) -> usize {
        self.channel().n()
    }
}

fn check_holdings(holdings: &[Vec<Vec<usize>>], n: usize) -> Result<usize> {
    ensure_len(n, holdings.len())?;
    let parts = holdings.first().map_or(0, Vec::len);
    for h in holdings {
        ensure_len(parts, h.len())?;
    }
    Ok(parts)
}

fn take_random(pool: &mut Vec<usize>, count: usize, rng: &mut SimRng) -> Vec<usize> {
    let (picked, _) = pool.partial_shuffle(rng, count);
    let mut picked = picked.to_vec();
    let keep: std::collections::HashSet<usize> = picked.iter().copied().collect();
    pool.retain(|id| !keep.contains(id));
    pool.sort_unstable();
    picked.sort_unstable();
    picked
}

fn inter_cluster(channel: &Channel, grants: &[(usize, usize, u64)]) -> Vec<u64> {
    let c = channel.clustering();
    let mut out = vec![0; c.num_clusters()];
    for &(tx, rx, total) in grants {
        if !c.same_cluster(rx, tx) {
            out[c.cluster_of(rx)] += total;
        }
    }
    out
}

/// Label-partitioned environment (supervised and semi-supervised).
#[derive(Debug, Clone)]
pub struct SupEnv {
    channel: Channel,
    holdings: Vec<Vec<Vec<usize>>>,
    thresholds: Vec<ThresholdVector>,
    trust: Vec<TrustMatrix>,
    l_hat: usize,
    metric: DistanceMetric,
}

impl SupEnv {
    pub fn new(
        channel: Channel,
        holdings: Vec<Vec<Vec<usize>>>,
        thresholds: Vec<ThresholdVector>,
        trust: Vec<TrustMatrix>,
        l_hat: usize,
        metric: DistanceMetric,
    ) -> Result<Self> {
        let n = channel.n();
        let l = check_holdings(&holdings, n)?;
        ensure_len(n, thresholds.len())?;
        ensure_len(n, trust.len())?;
        for (b, t) in thresholds.iter().zip(&trust) {
            ensure_len(l, b.len())?;
            ensure_len(l, t.partitions())?;
            ensure_len(n, t.devices())?;
        }
        if l_hat > l {
            return Err(invalid(format!("L_hat {l_hat} exceeds {l} partitions")));
        }
        Ok(Self {
            channel,
            holdings,
            thresholds,
            trust,
            l_hat,
            metric,
        })
    }

    pub fn counts(&self) -> Vec<CountVector> {
        self.holdings
            .iter()
            .map(|h| CountVector::new(h.iter().map(|p| p.len() as u64).collect()))
            .collect()
    }

    pub fn thresholds(&self) -> &[ThresholdVector] {
        &self.thresholds
    }

    /// Count vectors after an expected-mode round.
    pub fn expected_counts(
        &self,
        selections: &[Option<usize>],
    ) -> Result<(Vec<CountVector>, Vec<crate::exchange::Grant>)> {
        let counts = self.counts();
        let grants = sup_grants(&counts, &self.thresholds, &self.trust, selections)?;
        let mut post: Vec<Vec<i128>> = counts
            .iter()
            .map(|c| c.as_slice().iter().map(|&v| v as i128).collect())
            .collect();
        let mut rng = crate::rng::stream(0, &[]);
        for (tx, rx, g) in &grants {
            let got = deliver_vec(
                g,
                self.channel.drop().get(*rx, *tx),
                DeliveryMode::Expected,
                &mut rng,
            )?;
            for l in 0..g.len() {
                post[*tx][l] -= g[l] as i128;
                post[*rx][l] += got[l] as i128;
            }
        }
        let post = post
            .into_iter()
            .map(|v| CountVector::new(v.into_iter().map(|x| x as u64).collect()))
            .collect();
        Ok((post, grants))
    }
}

fn gain_or_zero(
    pre: &CountVector,
    post: &CountVector,
    b: &ThresholdVector,
    l_hat: usize,
    metric: DistanceMetric,
) -> Result<f64> {
    if pre.total() == 0 || post.total() == 0 {
        return Ok(0.0);
    }
    score_g(pre, post, b, l_hat, metric)
}

impl GraphEnv for SupEnv {
    fn channel(&self) -> &Channel {
        &self.channel
    }

    fn channel_mut(&mut self) -> &mut Channel {
        &mut self.channel
    }

    fn holdings(&self) -> &[Vec<Vec<usize>>] {
        &self.holdings
    }

    fn trust(&self) -> &[TrustMatrix] {
        &self.trust
    }

    fn evaluate(&self, selections: &[Option<usize>], _rng: &mut SimRng) -> Result<Evaluation> {
        let pre = self.counts();
        let (post, grants) = self.expected_counts(selections)?;
        let gain = (0..pre.len())
            .map(|i| match selections[i] {
                Some(_) => gain_or_zero(
                    &pre[i],
                    &post[i],
                    &self.thresholds[i],
                    self.l_hat,
                    self.metric,
                ),
                None => Ok(0.0),
            })
            .collect::<Result<Vec<_>>>()?;
        let totals: Vec<(usize, usize, u64)> = grants
            .iter()
            .map(|(tx, rx, g)| (*tx, *rx, g.iter().sum()))
            .collect();
        Ok(Evaluation {
            gain,
            agreement: None,
            inter_cluster: inter_cluster(&self.channel, &totals),
        })
    }

    fn commit(
        &mut self,
        selections: &[Option<usize>],
        mode: DeliveryMode,
        rng: &mut SimRng,
    ) -> Result<Vec<Move>> {
        let grants = sup_grants(&self.counts(), &self.thresholds, &self.trust, selections)?;
        let mut moves = Vec::with_capacity(grants.len());
        let mut arrivals: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for (tx, rx, g) in grants {
            let p = self.channel.drop().get(rx, tx);
            let (mut sent, mut received) = (Vec::new(), Vec::new());
            for (l, &u) in g.iter().enumerate() {
                if u == 0 {
                    continue;
                }
                let mut ids = take_random(&mut self.holdings[tx][l], u as usize, rng);
                let got = deliver(u, p, mode, rng)? as usize;
                sent.extend_from_slice(&ids);
                ids.shuffle(rng);
                ids.truncate(got);
                ids.sort_unstable();
                received.extend_from_slice(&ids);
                arrivals.push((rx, l, ids));
            }
            self.channel.charge(rx, tx, g.iter().sum());
            moves.push(Move {
                tx,
                rx,
                sent,
                received,
            });
        }
        for (rx, l, ids) in arrivals {
            self.holdings[rx][l].extend(ids);
            self.holdings[rx][l].sort_unstable();
        }
        Ok(moves)
    }

    fn message_bits(&self) -> u64 {
        // availability, request and grant vectors
        3 * sup_message_bits(self.holdings[0].len())
    }
}

/// Cluster-partitioned environment in the shared PCA subspace.
#[derive(Debug, Clone)]
pub struct UspEnv {
    channel: Channel,
    points: Vec<Vec<f64>>,
    holdings: Vec<Vec<Vec<usize>>>,
    summaries: Vec<Vec<ClusterSummary>>,
    gaussians: Vec<Vec<Gaussian>>,
    thresholds: Vec<ThresholdVector>,
    trust: Vec<TrustMatrix>,
    dim: usize,
}

impl UspEnv {
    /// `points` holds the projected coordinates of every point id.
    pub fn new(
        channel: Channel,
        points: Vec<Vec<f64>>,
        holdings: Vec<Vec<Vec<usize>>>,
        thresholds: Vec<ThresholdVector>,
        trust: Vec<TrustMatrix>,
    ) -> Result<Self> {
        let n = channel.n();
        let k = check_holdings(&holdings, n)?;
        if k == 0 {
            return Err(invalid("devices need at least one cluster"));
        }
        ensure_len(n, thresholds.len())?;
        ensure_len(n, trust.len())?;
        for (b, t) in thresholds.iter().zip(&trust) {
            ensure_len(k, b.len())?;
            ensure_len(k, t.partitions())?;
        }
        let dim = points.first().map_or(0, Vec::len);
        let mut env = Self {
            channel,
            points,
            holdings,
            summaries: Vec::new(),
            gaussians: Vec::new(),
            thresholds,
            trust,
            dim,
        };
        env.refresh()?;
        Ok(env)
    }

    fn refresh(&mut self) -> Result<()> {
        self.summaries = self
            .holdings
            .iter()
            .map(|dev| {
                dev.iter()
                    .map(|ids| {
                        ClusterSummary::from_points(
                            ids.iter().map(|&i| self.points[i].as_slice()),
                            self.dim,
                        )
                    })
                    .collect()
            })
            .collect();
        self.gaussians = self
            .summaries
            .iter()
            .map(|dev| dev.iter().map(Gaussian::from_summary).collect())
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn summaries(&self) -> &[Vec<ClusterSummary>] {
        &self.summaries
    }

    fn cluster_counts(&self, device: usize) -> Vec<usize> {
        self.holdings[device].iter().map(Vec::len).collect()
    }

    /// Per-cluster grants of every transmitter, computed from the current
    /// summaries.
    fn grants(&self, selections: &[Option<usize>]) -> Result<Vec<(usize, usize, Vec<u64>)>> {
        let n = self.channel.n();
        ensure_len(n, selections.len())?;
        let mut out = Vec::new();
        for (tx, rxs) in requesters_of(selections).iter().enumerate() {
            if rxs.is_empty() {
                continue;
            }
            if rxs.contains(&tx) {
                return Err(invalid(format!("device {tx} selected itself")));
            }
            let tx_counts =
                CountVector::new(self.cluster_counts(tx).iter().map(|&c| c as u64).collect());
            let tx_centroids: Vec<Vector> = self.summaries[tx]
                .iter()
                .map(|s| s.centroid.clone())
                .collect();
            let requests = rxs
                .iter()
                .map(|&rx| {
                    let q_total =
                        usp_request_total(&self.cluster_counts(rx), &self.thresholds[rx])?;
                    let allowed: Vec<bool> = (0..tx_centroids.len())
                        .map(|l| self.trust[tx].get(rx, l) && tx_counts[l] > self.thresholds[tx][l])
                        .collect();
                    let rx_centroids: Vec<Vector> = self.summaries[rx]
                        .iter()
                        .map(|s| s.centroid.clone())
                        .collect();
                    usp_allocate_masked(q_total, &rx_centroids, &tx_centroids, &allowed)
                })
                .collect::<Result<Vec<_>>>()?;
            for (&rx, g) in
                rxs.iter()
                    .zip(sup_allocate(&requests, &tx_counts, &self.thresholds[tx])?)
            {
                out.push((tx, rx, g));
            }
        }
        out.sort_by_key(|t| (t.1, t.0));
        Ok(out)
    }

    fn nearest_cluster(&self, device: usize, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, s) in self.summaries[device].iter().enumerate() {
            let d = sq_dist(s.centroid.as_slice(), x);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }
}

impl GraphEnv for UspEnv {
    fn channel(&self) -> &Channel {
        &self.channel
    }

    fn channel_mut(&mut self) -> &mut Channel {
        &mut self.channel
    }

    fn holdings(&self) -> &[Vec<Vec<usize>>] {
        &self.holdings
    }

    fn trust(&self) -> &[TrustMatrix] {
        &self.trust
    }

    fn evaluate(&self, selections: &[Option<usize>], rng: &mut SimRng) -> Result<Evaluation> {
        let n = self.channel.n();
        let grants = self.grants(selections)?;
        let mut post_summaries: Vec<Option<Vec<ClusterSummary>>> = vec![None; n];
        for (tx, rx, g) in &grants {
            let arrived = deliver_vec(
                g,
                self.channel.drop().get(*rx, *tx),
                DeliveryMode::Expected,
                rng,
            )?;
            let msg = UspMessage::new(self.summaries[*tx].clone(), arrived)?;
            post_summaries[*rx] = Some(usp_exchange(&self.summaries[*rx], &msg, rng)?);
        }
        let mut gain = vec![0.0; n];
        let mut after = self.gaussians.clone();
        for i in 0..n {
            if let Some(post) = &post_summaries[i] {
                gain[i] = trace_ratio(post, &self.summaries[i])?;
                after[i] = post
                    .iter()
                    .map(Gaussian::from_summary)
                    .collect::<Result<_>>()?;
            } else if selections[i].is_some() {
                gain[i] = self.summaries[i].len() as f64;
            }
        }
        let agreement = agreement_from_gaussians(&self.gaussians, &after)?;
        let totals: Vec<(usize, usize, u64)> = grants
            .iter()
            .map(|(tx, rx, g)| (*tx, *rx, g.iter().sum()))
            .collect();
        Ok(Evaluation {
            gain,
            agreement: Some(agreement),
            inter_cluster: inter_cluster(&self.channel, &totals),
        })
    }

    fn commit(
        &mut self,
        selections: &[Option<usize>],
        mode: DeliveryMode,
        rng: &mut SimRng,
    ) -> Result<Vec<Move>> {
        let grants = self.grants(selections)?;
        let mut moves = Vec::with_capacity(grants.len());
        let mut arrivals: Vec<(usize, usize)> = Vec::new();
        for (tx, rx, g) in grants {
            let p = self.channel.drop().get(rx, tx);
            let (mut sent, mut received) = (Vec::new(), Vec::new());
            for (l, &u) in g.iter().enumerate() {
                if u == 0 {
                    continue;
                }
                let mut ids = take_random(&mut self.holdings[tx][l], u as usize, rng);
                let got = deliver(u, p, mode, rng)? as usize;
                sent.extend_from_slice(&ids);
                ids.shuffle(rng);
                ids.truncate(got);
                ids.sort_unstable();
                arrivals.extend(ids.iter().map(|&id| (rx, id)));
                received.extend(ids);
            }
            self.channel.charge(rx, tx, g.iter().sum());
            moves.push(Move {
                tx,
                rx,
                sent,
                received,
            });
        }
        // arrivals join the nearest pre-round centroid of the receiver
        let targets: Vec<(usize, usize, usize)> = arrivals
            .iter()
            .map(|&(rx, id)| (rx, self.nearest_cluster(rx, &self.points[id]), id))
            .collect();
        for (rx, c, id) in targets {
            self.holdings[rx][c].push(id);
            self.holdings[rx][c].sort_unstable();
        }
        self.refresh()?;
        Ok(moves)
    }

    fn message_bits(&self) -> u64 {
        let k = self.holdings[0].len();
        usp_request_bits(k, self.dim) + usp_response_bits(k, self.dim)
    }
}

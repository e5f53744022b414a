//! Message passing over selected edges. The supervised protocol moves
//! per-label counts (availability, request, grant, delivery); the
//! unsupervised one moves Gaussian cluster summaries from which the
//! receiver samples synthetic points.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::data::{largest_remainder, CountVector, ThresholdVector, TrustMatrix};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::linalg::{dist, sq_dist, Vector};
use crate::net::DropMatrix;
use crate::partition::ClusterSummary;

/// How many granted points survive the link.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    /// `floor((1 - P_D) * U)`, used for hypothetical evaluation.
    Expected,
    /// `Binomial(U, 1 - P_D)` per partition.
    #[default]
    Sampled,
}

/// `V[l] = 1` iff the receiver is trusted with partition `l`, asked for an
/// edge, and the transmitter holds strictly more than its threshold.
pub fn sup_availability(
    trust_j: &TrustMatrix,
    d_j: &CountVector,
    b_j: &ThresholdVector,
    receiver: usize,
    requesters: &[usize],
) -> Result<Vec<bool>> {
    ensure_len(d_j.len(), b_j.len())?;
    ensure_len(d_j.len(), trust_j.partitions())?;
    if !requesters.contains(&receiver) {
        return Err(Error::Protocol(format!(
            "device {receiver} did not request from this transmitter"
        )));
    }
    Ok((0..d_j.len())
        .map(|l| trust_j.get(receiver, l) && d_j[l] > b_j[l])
        .collect())
}

/// `Q[l] = max(b_i[l] - D_i[l], 0)` where `V[l]` is set.
pub fn sup_request(v: &[bool], d_i: &CountVector, b_i: &ThresholdVector) -> Result<Vec<u64>> {
    ensure_len(v.len(), d_i.len())?;
    ensure_len(v.len(), b_i.len())?;
    Ok((0..v.len())
        .map(|l| {
            if v[l] {
                b_i[l].saturating_sub(d_i[l])
            } else {
                0
            }
        })
        .collect())
}

/// Grants of one transmitter to all of its requesters (same order as
/// `requests`). Per partition the whole demand is served when it fits in
/// the surplus `D_j - b_j`, otherwise the surplus is split in proportion
/// to demand with largest-remainder rounding (ties to the lower index).
pub fn sup_allocate(
    requests: &[Vec<u64>],
    d_j: &CountVector,
    b_j: &ThresholdVector,
) -> Result<Vec<Vec<u64>>> {
    let l_count = d_j.len();
    ensure_len(l_count, b_j.len())?;
    for q in requests {
        ensure_len(l_count, q.len())?;
    }
    let mut grants = vec![vec![0u64; l_count]; requests.len()];
    for l in 0..l_count {
        let surplus = d_j[l].saturating_sub(b_j[l]);
        let demand: u64 = requests.iter().map(|q| q[l]).sum();
        if demand == 0 {
            continue;
        }
        if demand <= surplus {
            for (g, q) in grants.iter_mut().zip(requests) {
                g[l] = q[l];
            }
        } else {
            let weights: Vec<f64> = requests.iter().map(|q| q[l] as f64).collect();
            for (g, share) in grants.iter_mut().zip(largest_remainder(surplus, &weights)) {
                g[l] = share;
            }
        }
    }
    Ok(grants)
}

/// Number of points that arrive out of `sent` over a link with drop
/// probability `p_drop`.
pub fn deliver<R: Rng + ?Sized>(
    sent: u64,
    p_drop: f64,
    mode: DeliveryMode,
    rng: &mut R,
) -> Result<u64> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(invalid(format!("drop probability {p_drop} outside [0, 1]")));
    }
    if sent == 0 {
        return Ok(0);
    }
    Ok(match mode {
        // the small offset keeps products like 0.7 * 10 from landing on 6.999...
        DeliveryMode::Expected => (((1.0 - p_drop) * sent as f64) + 1e-9)
            .floor()
            .min(sent as f64) as u64,
        DeliveryMode::Sampled => Binomial::new(sent, 1.0 - p_drop)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .sample(rng),
    })
}

pub fn deliver_vec<R: Rng + ?Sized>(
    sent: &[u64],
    p_drop: f64,
    mode: DeliveryMode,
    rng: &mut R,
) -> Result<Vec<u64>> {
    sent.iter()
        .map(|&u| deliver(u, p_drop, mode, rng))
        .collect()
}

/// `D_i + sum(received) - sum(sent)`; a negative entry means the caller
/// granted more than the device held.
pub fn apply_exchange(
    d_i: &CountVector,
    received: &[Vec<u64>],
    sent: &[Vec<u64>],
) -> Result<CountVector> {
    let mut out: Vec<i128> = d_i.as_slice().iter().map(|&v| v as i128).collect();
    for r in received {
        ensure_len(out.len(), r.len())?;
        out.iter_mut().zip(r).for_each(|(o, &v)| *o += v as i128);
    }
    for s in sent {
        ensure_len(out.len(), s.len())?;
        out.iter_mut().zip(s).for_each(|(o, &v)| *o -= v as i128);
    }
    if let Some(l) = out.iter().position(|&v| v < 0) {
        return Err(Error::Protocol(format!(
            "partition {l} would hold {} points",
            out[l]
        )));
    }
    Ok(CountVector::new(
        out.into_iter().map(|v| v as u64).collect(),
    ))
}

/// One granted edge of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub tx: usize,
    pub rx: usize,
    pub granted: Vec<u64>,
    pub received: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub counts: Vec<CountVector>,
    pub transfers: Vec<Transfer>,
}

/// Receivers of each transmitter, ascending.
pub fn requesters_of(selections: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); selections.len()];
    for (rx, sel) in selections.iter().enumerate() {
        if let Some(tx) = *sel {
            out[tx].push(rx);
        }
    }
    out
}

fn check_selections(selections: &[Option<usize>], n: usize) -> Result<()> {
    ensure_len(n, selections.len())?;
    for (rx, sel) in selections.iter().enumerate() {
        if let Some(tx) = *sel {
            if tx >= n || tx == rx {
                return Err(Error::Protocol(format!(
                    "device {rx} cannot request from {tx}"
                )));
            }
        }
    }
    Ok(())
}

/// `(tx, rx, granted per partition)`.
pub type Grant = (usize, usize, Vec<u64>);

/// Supervised grants for a round where receiver `i` asks `selections[i]`.
/// Everything is computed from the pre-round counts.
pub fn sup_grants(
    counts: &[CountVector],
    thresholds: &[ThresholdVector],
    trust: &[TrustMatrix],
    selections: &[Option<usize>],
) -> Result<Vec<Grant>> {
    let n = counts.len();
    ensure_len(n, thresholds.len())?;
    ensure_len(n, trust.len())?;
    check_selections(selections, n)?;
    let mut out = Vec::new();
    for (tx, rxs) in requesters_of(selections).iter().enumerate() {
        if rxs.is_empty() {
            continue;
        }
        let requests = rxs
            .iter()
            .map(|&rx| {
                let v = sup_availability(&trust[tx], &counts[tx], &thresholds[tx], rx, rxs)?;
                sup_request(&v, &counts[rx], &thresholds[rx])
            })
            .collect::<Result<Vec<_>>>()?;
        for (&rx, g) in rxs
            .iter()
            .zip(sup_allocate(&requests, &counts[tx], &thresholds[tx])?)
        {
            out.push((tx, rx, g));
        }
    }
    out.sort_by_key(|t| (t.1, t.0));
    Ok(out)
}

/// Full supervised round: grants, delivery and atomic application.
pub fn sup_round<R: Rng + ?Sized>(
    counts: &[CountVector],
    thresholds: &[ThresholdVector],
    trust: &[TrustMatrix],
    selections: &[Option<usize>],
    drop: &DropMatrix,
    mode: DeliveryMode,
    rng: &mut R,
) -> Result<RoundOutcome> {
    ensure_len(counts.len(), drop.n())?;
    let grants = sup_grants(counts, thresholds, trust, selections)?;
    let mut received = vec![Vec::new(); counts.len()];
    let mut sent = vec![Vec::new(); counts.len()];
    let mut transfers = Vec::with_capacity(grants.len());
    for (tx, rx, granted) in grants {
        let got = deliver_vec(&granted, drop.get(rx, tx), mode, rng)?;
        received[rx].push(got.clone());
        sent[tx].push(granted.clone());
        transfers.push(Transfer {
            tx,
            rx,
            granted,
            received: got,
        });
    }
    let counts = counts
        .iter()
        .enumerate()
        .map(|(i, d)| apply_exchange(d, &received[i], &sent[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundOutcome { counts, transfers })
}

/// Bits of one supervised message vector over `l` partitions.
pub fn sup_message_bits(l: usize) -> u64 {
    8 * l as u64
}

/// Bits of an unsupervised request: the receiver's centroids plus the
/// requested total.
pub fn usp_request_bits(clusters: usize, d: usize) -> u64 {
    (clusters * 32 * d) as u64 + 8
}

/// Bits of an unsupervised response: one `(mu, Sigma, count)` per cluster.
pub fn usp_response_bits(clusters: usize, d: usize) -> u64 {
    (clusters * (32 * (d + d * d) + 8)) as u64
}

/// Splits `q_total` over transmitter clusters in proportion to each
/// cluster's summed distance from all receiver centroids.
pub fn usp_allocate(q_total: u64, receiver: &[Vector], transmitter: &[Vector]) -> Result<Vec<u64>> {
    let allowed = vec![true; transmitter.len()];
    usp_allocate_masked(q_total, receiver, transmitter, &allowed)
}

/// As [`usp_allocate`] but only clusters with `allowed[l]` receive a share.
/// Identical centroid sets fall back to a uniform split.
pub fn usp_allocate_masked(
    q_total: u64,
    receiver: &[Vector],
    transmitter: &[Vector],
    allowed: &[bool],
) -> Result<Vec<u64>> {
    if receiver.is_empty() || transmitter.is_empty() {
        return Err(invalid("centroid lists must be nonempty"));
    }
    ensure_len(transmitter.len(), allowed.len())?;
    let idx: Vec<usize> = (0..transmitter.len()).filter(|&l| allowed[l]).collect();
    let mut out = vec![0; transmitter.len()];
    if idx.is_empty() {
        return Ok(out);
    }
    let weights: Vec<f64> = idx
        .iter()
        .map(|&l| {
            receiver
                .iter()
                .map(|mu| dist(mu.as_slice(), transmitter[l].as_slice()))
                .sum()
        })
        .collect();
    for (&l, share) in idx.iter().zip(largest_remainder(q_total, &weights)) {
        out[l] = share;
    }
    Ok(out)
}

/// Requested total in the unsupervised flow: summed shortfall of the
/// receiver's clusters below their thresholds.
pub fn usp_request_total(counts: &[usize], b: &ThresholdVector) -> Result<u64> {
    ensure_len(counts.len(), b.len())?;
    Ok(counts
        .iter()
        .zip(b.as_slice())
        .map(|(&c, &t)| t.saturating_sub(c as u64))
        .sum())
}

/// What one transmitter sends one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct UspMessage {
    pub clusters: Vec<ClusterSummary>,
    pub counts: Vec<u64>,
}

impl UspMessage {
    pub fn new(clusters: Vec<ClusterSummary>, counts: Vec<u64>) -> Result<Self> {
        ensure_len(clusters.len(), counts.len())?;
        Ok(Self { clusters, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn nearest_centroid(summaries: &[ClusterSummary], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, s) in summaries.iter().enumerate() {
        let d = sq_dist(s.centroid.as_slice(), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Folds points into the receiver clusters by nearest centroid.
pub fn absorb_points(receiver: &[ClusterSummary], points: &[Vec<f64>]) -> Vec<ClusterSummary> {
    let mut buckets = vec![Vec::new(); receiver.len()];
    for p in points {
        buckets[nearest_centroid(receiver, p)].push(p.clone());
    }
    receiver
        .iter()
        .zip(&buckets)
        .map(|(s, b)| s.absorb(b))
        .collect()
}

/// Samples the requested counts from each remote Gaussian and merges them
/// into the receiver's summaries.
pub fn usp_exchange<R: Rng + ?Sized>(
    receiver: &[ClusterSummary],
    message: &UspMessage,
    rng: &mut R,
) -> Result<Vec<ClusterSummary>> {
    if receiver.is_empty() {
        return Err(invalid("receiver has no clusters"));
    }
    let mut points = Vec::with_capacity(message.total() as usize);
    for (cluster, &count) in message.clusters.iter().zip(&message.counts) {
        ensure_len(receiver[0].dim(), cluster.dim())?;
        points.extend(cluster.sample(count as usize, rng)?);
    }
    Ok(absorb_points(receiver, &points))
}

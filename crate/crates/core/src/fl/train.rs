use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{accuracy, linear_eval, mse, FlData, Targets};
use super::model::{local_step, make_triplets, Arch, Loss, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, tag, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    FedAvg,
    FedProx,
    /// FedAvg with one local step per aggregation.
    FedSgd,
    Decentralized,
    SemiDecentralized,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::FedAvg => "fedavg",
            Scheme::FedProx => "fedprox",
            Scheme::FedSgd => "fedsgd",
            Scheme::Decentralized => "decentralized",
            Scheme::SemiDecentralized => "semidecentralized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Local steps between aggregations.
    pub tau_a: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub prox_mu: f64,
    pub margin: f64,
    pub sigma_aug: f64,
    pub straggler_frac: f64,
    pub scheme: Scheme,
    /// Peers averaged per round in the decentralized scheme.
    pub neighbors: usize,
    pub subset_size: usize,
    pub intra_every: usize,
    pub global_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            tau_a: 4,
            rounds: 50,
            batch_size: 32,
            prox_mu: 0.1,
            margin: 1.0,
            sigma_aug: 0.1,
            straggler_frac: 0.0,
            scheme: Scheme::FedAvg,
            neighbors: 7,
            subset_size: 5,
            intra_every: 2,
            global_every: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.tau_a == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "tau_a and batch_size must be at least 1".into(),
            ));
        }
        if !(self.prox_mu >= 0.0) || !(self.margin > 0.0) || !(self.sigma_aug >= 0.0) {
            return Err(Error::Config(
                "prox_mu, sigma_aug must be nonnegative and margin positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.straggler_frac) {
            return Err(Error::Config("straggler_frac must lie in [0, 1)".into()));
        }
        if self.scheme == Scheme::SemiDecentralized
            && (self.subset_size == 0 || self.intra_every == 0 || self.global_every == 0)
        {
            return Err(Error::Config(
                "semi-decentralized schedule needs positive sizes".into(),
            ));
        }
        Ok(())
    }

    /// Local steps per recorded round.
    pub fn steps_per_round(&self) -> usize {
        match self.scheme {
            Scheme::FedSgd => 1,
            Scheme::SemiDecentralized => self.global_every,
            _ => self.tau_a,
        }
    }
}

/// Size-weighted parameter mean. All-zero sizes fall back to equal weights.
pub fn aggregate(models: &[&ModelParams], sizes: &[f64]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Aggregation("no participating models".into()))?;
    if sizes.len() != models.len() {
        return Err(Error::Aggregation(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Aggregation("negative or non-finite size".into()));
    }
    if models.iter().any(|m| m.arch() != first.arch()) {
        return Err(Error::Aggregation("architectures differ".into()));
    }
    let total: f64 = sizes.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        sizes.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / models.len() as f64; models.len()]
    };
    // offsets from the first model keep identical inputs exact
    let base = first.weights();
    let mut out = base.to_vec();
    for (m, w) in models.iter().zip(&weights).skip(1) {
        for ((o, v), b) in out.iter_mut().zip(m.weights()).zip(base) {
            *o += w * (v - b);
        }
    }
    first.with_weights(out)
}

fn mean_of(models: &[&ModelParams]) -> Result<ModelParams> {
    aggregate(models, &vec![1.0; models.len()])
}

/// Every active device replaces its model by the plain mean of its own and
/// `neighbor_count` other active models drawn without replacement. All
/// draws see the models from before the round. Inactive devices keep
/// their model and are never drawn.
pub fn run_round_decentralized<R: Rng + ?Sized>(
    models: &[ModelParams],
    neighbor_count: usize,
    active: &[bool],
    rng: &mut R,
) -> Result<Vec<ModelParams>> {
    let n = models.len();
    if neighbor_count >= n.max(1) {
        return Err(invalid(format!(
            "neighbor count {neighbor_count} must be below {n}"
        )));
    }
    let pool: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    (0..n)
        .map(|i| {
            if !active[i] || neighbor_count == 0 {
                return Ok(models[i].clone());
            }
            let others: Vec<usize> = pool.iter().copied().filter(|&j| j != i).collect();
            let k = neighbor_count.min(others.len());
            let mut group = vec![&models[i]];
            group.extend(
                index::sample(rng, others.len(), k)
                    .into_iter()
                    .map(|p| &models[others[p]]),
            );
            mean_of(&group)
        })
        .collect()
}

/// Disjoint consecutive subsets of `size` devices.
pub fn make_subsets(n: usize, size: usize) -> Result<Vec<Vec<usize>>> {
    if size == 0 || !n.is_multiple_of(size) {
        return Err(Error::Config(format!(
            "{n} devices cannot be split into subsets of {size}"
        )));
    }
    Ok((0..n / size)
        .map(|s| (s * size..(s + 1) * size).collect())
        .collect())
}

fn check_subsets(subsets: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &d in subsets.iter().flatten() {
        if d >= n || seen[d] {
            return Err(Error::Config(format!(
                "device {d} is missing from the device range or repeated"
            )));
        }
        seen[d] = true;
    }
    if seen.iter().any(|s| !s) || subsets.iter().any(Vec::is_empty) {
        return Err(Error::Config("subsets must partition the devices".into()));
    }
    Ok(())
}

/// `global_every` local steps of the semi-decentralized scheme.
/// `step(device, k, model)` performs local step `k` of the round. Active
/// members of each subset are averaged (size-weighted) after every
/// `intra_every` steps; at the end the server averages one random active
/// model per subset and broadcasts it to every device.
#[allow(clippy::too_many_arguments)]
pub fn run_round_semidecentralized<F, R>(
    models: &mut [ModelParams],
    subsets: &[Vec<usize>],
    sizes: &[f64],
    intra_every: usize,
    global_every: usize,
    active: &[bool],
    step: F,
    rng: &mut R,
) -> Result<()>
where
    F: Fn(usize, usize, &ModelParams) -> Result<ModelParams> + Sync,
    R: Rng + ?Sized,
{
    check_subsets(subsets, models.len())?;
    if intra_every == 0 || global_every == 0 {
        return Err(Error::Config("schedule intervals must be positive".into()));
    }
    for k in 0..global_every {
        let next: Vec<ModelParams> = models
            .par_iter()
            .enumerate()
            .map(|(d, m)| step(d, k, m))
            .collect::<Result<_>>()?;
        models.clone_from_slice(&next);
        if (k + 1) % intra_every == 0 {
            for s in subsets {
                let members: Vec<usize> = s.iter().copied().filter(|&d| active[d]).collect();
                if members.len() < 2 {
                    continue;
                }
                let avg = aggregate(
                    &members.iter().map(|&d| &models[d]).collect::<Vec<_>>(),
                    &members.iter().map(|&d| sizes[d]).collect::<Vec<_>>(),
                )?;
                for &d in &members {
                    models[d] = avg.clone();
                }
            }
        }
    }
    let picks: Vec<usize> = subsets
        .iter()
        .filter_map(|s| {
            let members: Vec<usize> = s.iter().copied().filter(|&d| active[d]).collect();
            members.choose(rng).copied()
        })
        .collect();
    if picks.is_empty() {
        return Ok(());
    }
    let global = mean_of(&picks.iter().map(|&d| &models[d]).collect::<Vec<_>>())?;
    for m in models.iter_mut() {
        *m = global.clone();
    }
    Ok(())
}

/// Random subset of `round(frac * n)` devices (at most `n - 1`) that skip
/// the aggregation.
pub fn draw_stragglers<R: Rng + ?Sized>(n: usize, frac: f64, rng: &mut R) -> Vec<bool> {
    let count = ((frac * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut active = vec![true; n];
    for i in index::sample(rng, n, count) {
        active[i] = false;
    }
    active
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mse,
    LinearEvalAccuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mse => "mse",
            MetricKind::LinearEvalAccuracy => "linear_eval_accuracy",
        }
    }
}

/// Per-round record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub metric: MetricKind,
    pub values: Vec<f64>,
    /// Models sent to the server in each round.
    pub uploads: Vec<u64>,
    /// Models exchanged between devices in each round.
    pub peer_transfers: Vec<u64>,
}

fn batch_indices(len: usize, batch: usize, rng: &mut SimRng) -> Vec<usize> {
    if batch >= len {
        return (0..len).collect();
    }
    let mut idx = index::sample(rng, len, batch).into_vec();
    idx.sort_unstable();
    idx
}

/// One local step of `device` in `round`. Randomness comes from a stream
/// keyed by (seed, device, round, step) so trajectories never depend on
/// thread scheduling or on other devices.
pub fn device_step(
    model: &ModelParams,
    data: &FlData,
    global: Option<&ModelParams>,
    cfg: &TrainConfig,
    device: usize,
    round: usize,
    k: usize,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Ok(model.clone());
    }
    let mut rng = stream(
        cfg.seed,
        &[tag("batch"), device as u64, round as u64, k as u64],
    );
    let idx = batch_indices(data.len(), cfg.batch_size, &mut rng);
    let x: Vec<Vec<f64>> = idx.iter().map(|&i| data.features[i].clone()).collect();
    if let Arch::Encoder { .. } = model.arch() {
        let (pos, neg) = make_triplets(&x, cfg.sigma_aug, &mut rng)?;
        return local_step(
            model,
            &x,
            &Loss::Triplet {
                positives: &pos,
                negatives: &neg,
                margin: cfg.margin,
            },
            cfg.lr,
        );
    }
    match &data.targets {
        Targets::Classes(labels) => {
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            match (cfg.scheme, global) {
                (Scheme::FedProx, Some(g)) => local_step(
                    model,
                    &x,
                    &Loss::CrossEntropyProx {
                        labels: &y,
                        global: g,
                        mu: cfg.prox_mu,
                    },
                    cfg.lr,
                ),
                _ => local_step(model, &x, &Loss::CrossEntropy { labels: &y }, cfg.lr),
            }
        }
        Targets::Values(values) => {
            let y: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            local_step(model, &x, &Loss::Mse { targets: &y }, cfg.lr)
        }
        Targets::Unlabeled => Err(invalid("supervised model on unlabeled data")),
    }
}

/// Local phase of one round for every device, before any aggregation.
pub fn local_phase(
    models: &[ModelParams],
    data: &[FlData],
    global: Option<&ModelParams>,
    cfg: &TrainConfig,
    round: usize,
    steps: usize,
) -> Result<Vec<ModelParams>> {
    models
        .par_iter()
        .zip(data)
        .enumerate()
        .map(|(d, (m, ds))| {
            let mut cur = m.clone();
            for k in 0..steps {
                cur = device_step(&cur, ds, global, cfg, d, round, k)?;
            }
            Ok(cur)
        })
        .collect()
}

fn metric_of(model: &ModelParams, test: &FlData) -> Result<(MetricKind, f64)> {
    if let Arch::Encoder { .. } = model.arch() {
        // even-indexed test points fit the head, odd ones score it
        let train = test.subset(&(0..test.len()).step_by(2).collect::<Vec<_>>())?;
        let held = test.subset(&(1..test.len()).step_by(2).collect::<Vec<_>>())?;
        return Ok((
            MetricKind::LinearEvalAccuracy,
            linear_eval(model, &train, &held)?,
        ));
    }
    match test.targets {
        Targets::Values(_) => Ok((MetricKind::Mse, mse(model, test)?)),
        _ => Ok((MetricKind::Accuracy, accuracy(model, test)?)),
    }
}

fn mean_metric(models: &[ModelParams], test: &FlData) -> Result<(MetricKind, f64)> {
    let all = models
        .iter()
        .map(|m| metric_of(m, test))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        all[0].0,
        all.iter().map(|v| v.1).sum::<f64>() / all.len() as f64,
    ))
}

/// Federated training from a shared `init` model. Centralised schemes
/// record the global model's metric per round, decentralized records the
/// mean over devices.
pub fn run_training(
    data: &[FlData],
    test: &FlData,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainingTrace> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(invalid("no devices"));
    }
    let (metric, _) = metric_of(init, test)?;
    let mut trace = TrainingTrace {
        metric,
        values: Vec::new(),
        uploads: Vec::new(),
        peer_transfers: Vec::new(),
    };
    let sizes: Vec<f64> = data.iter().map(|d| d.len() as f64).collect();
    let steps = cfg.steps_per_round();
    let subsets = if cfg.scheme == Scheme::SemiDecentralized {
        make_subsets(n, cfg.subset_size)?
    } else {
        Vec::new()
    };
    if cfg.scheme == Scheme::Decentralized && cfg.neighbors >= n {
        return Err(Error::Config(format!(
            "{} neighbors need more than {n} devices",
            cfg.neighbors
        )));
    }
    let mut global = init.clone();
    let mut models = vec![init.clone(); n];
    for round in 0..cfg.rounds {
        let mut rng = stream(cfg.seed, &[tag("aggregate"), round as u64]);
        let active = draw_stragglers(n, cfg.straggler_frac, &mut rng);
        let participants = active.iter().filter(|&&a| a).count() as u64;
        let value = match cfg.scheme {
            Scheme::FedAvg | Scheme::FedProx | Scheme::FedSgd => {
                let local = local_phase(
                    &vec![global.clone(); n],
                    data,
                    Some(&global),
                    cfg,
                    round,
                    steps,
                )?;
                let ids: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
                global = aggregate(
                    &ids.iter().map(|&i| &local[i]).collect::<Vec<_>>(),
                    &ids.iter().map(|&i| sizes[i]).collect::<Vec<_>>(),
                )?;
                trace.uploads.push(participants);
                trace.peer_transfers.push(0);
                metric_of(&global, test)?.1
            }
            Scheme::Decentralized => {
                let local = local_phase(&models, data, None, cfg, round, steps)?;
                models = run_round_decentralized(&local, cfg.neighbors, &active, &mut rng)?;
                trace.uploads.push(0);
                trace.peer_transfers.push(
                    participants
                        * cfg.neighbors.min(participants.saturating_sub(1) as usize) as u64,
                );
                mean_metric(&models, test)?.1
            }
            Scheme::SemiDecentralized => {
                let step = |d: usize, k: usize, m: &ModelParams| {
                    device_step(m, &data[d], None, cfg, d, round, k)
                };
                run_round_semidecentralized(
                    &mut models,
                    &subsets,
                    &sizes,
                    cfg.intra_every,
                    cfg.global_every,
                    &active,
                    step,
                    &mut rng,
                )?;
                let intra_rounds = (cfg.global_every / cfg.intra_every) as u64;
                let peer: u64 = subsets
                    .iter()
                    .map(|s| {
                        let m = s.iter().filter(|&&d| active[d]).count() as u64;
                        if m >= 2 {
                            m * (m - 1)
                        } else {
                            0
                        }
                    })
                    .sum();
                trace.uploads.push(
                    subsets
                        .iter()
                        .filter(|s| s.iter().any(|&d| active[d]))
                        .count() as u64,
                );
                trace.peer_transfers.push(peer * intra_rounds);
                global = models[0].clone();
                metric_of(&global, test)?.1
            }
        };
        trace.values.push(value);
    }
    Ok(trace)
}

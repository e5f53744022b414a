use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, Mode, ModelKind};
use crate::data::{
    allocate_skewed, make_trust, mask_labels, BlobModel, LocalDataset, ThresholdVector, TrustMatrix,
};
use crate::error::{Error, Result};
use crate::exchange::DeliveryMode;
use crate::fl::{run_training, Arch, FlData, ModelParams, Targets};
use crate::net::{random_distances, EnergyLedger, LinkKind, RadioModel};
use crate::partition::{distributed_pca, kmeans, label_propagation, partition_supervised};
use crate::rl::{
    baseline_graph, brute_force_optimal, selection_objective, train_graph, Channel, CommitCost,
    Discovery, Evaluation, GraphEnv, Move, SupEnv, UspEnv,
};
use crate::rng::{derive_seed, stream, tag, SimRng};

/// One CSV line of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub metric: String,
    pub value: f64,
    pub d2d_joules: f64,
    pub d2s_joules: f64,
}

/// A (scenario, method, seed) cell that stopped with an error.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

/// Either exchange environment behind one type.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Sup(SupEnv),
    Usp(UspEnv),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Sup($e) => $body,
            AnyEnv::Usp($e) => $body,
        }
    };
}

impl GraphEnv for AnyEnv {
    fn channel(&self) -> &Channel {
        delegate!(self, e => e.channel())
    }

    fn channel_mut(&mut self) -> &mut Channel {
        delegate!(self, e => e.channel_mut())
    }

    fn evaluate(&self, selections: &[Option<usize>], rng: &mut SimRng) -> Result<Evaluation> {
        delegate!(self, e => e.evaluate(selections, rng))
    }

    fn commit(
        &mut self,
        selections: &[Option<usize>],
        mode: DeliveryMode,
        rng: &mut SimRng,
    ) -> Result<Vec<Move>> {
        delegate!(self, e => e.commit(selections, mode, rng))
    }

    fn message_bits(&self) -> u64 {
        delegate!(self, e => e.message_bits())
    }

    fn holdings(&self) -> &[Vec<Vec<usize>>] {
        delegate!(self, e => e.holdings())
    }

    fn trust(&self) -> &[TrustMatrix] {
        delegate!(self, e => e.trust())
    }
}

/// Everything one seed needs before links are chosen.
#[derive(Debug, Clone)]
pub struct Setup {
    pub env: AnyEnv,
    pub pool: LocalDataset,
    pub test: LocalDataset,
    /// Training label of every pool point (true or propagated).
    pub train_labels: Vec<Option<usize>>,
    pub radio: RadioModel,
    pub point_bits: u64,
}

fn device_features(pool: &LocalDataset, ids: &[usize]) -> Vec<Vec<f64>> {
    ids.iter().map(|&i| pool.features()[i].clone()).collect()
}

/// Data, partitions, topology and trust for `seed`. Independent of the
/// method, so every method of a seed starts from the same system.
pub fn build_setup(cfg: &ExperimentConfig, seed: u64) -> Result<Setup> {
    let (s, d) = (&cfg.system, &cfg.data);
    let n = s.devices;
    let blobs = BlobModel::new(&d.blobs, seed)?;
    let pool = blobs.sample(d.pool_per_class, &mut stream(seed, &[tag("pool")]))?;
    let test = blobs.sample(d.test_per_class, &mut stream(seed, &[tag("test")]))?;
    let skew = crate::data::SkewSpec {
        seed: derive_seed(seed, &[tag("skew")]),
        ..d.skew.clone()
    };
    let alloc = allocate_skewed(&pool, n, &skew)?;
    let pool_labels = pool.labels().ok_or(Error::MissingLabels)?.to_vec();
    let l = cfg.partitions();

    let mut train_labels = vec![None; pool.len()];
    let mut holdings = Vec::with_capacity(n);
    let mut projected = Vec::new();
    match d.mode {
        Mode::Supervised => {
            for (ds, ids) in alloc.devices.iter().zip(&alloc.indices) {
                let parts = partition_supervised(ds, l)?;
                holdings.push(
                    parts
                        .iter()
                        .map(|p| p.iter().map(|&k| ids[k]).collect())
                        .collect(),
                );
                for &id in ids {
                    train_labels[id] = Some(pool_labels[id]);
                }
            }
        }
        Mode::SemiSupervised => {
            for (dev, (ds, ids)) in alloc.devices.iter().zip(&alloc.indices).enumerate() {
                let masked = mask_labels(
                    ds,
                    d.labeled_fraction,
                    &mut stream(seed, &[tag("mask"), dev as u64]),
                )?;
                let observed = masked.observed_labels().ok_or(Error::MissingLabels)?;
                let guess = label_propagation(ds.features(), &observed, d.k_neighbors)?;
                let mut parts = vec![Vec::new(); l];
                for (k, &g) in guess.iter().enumerate() {
                    parts[g].push(ids[k]);
                    train_labels[ids[k]] = Some(g);
                }
                holdings.push(parts);
            }
        }
        Mode::Unsupervised => {
            let pca = distributed_pca(&alloc.devices, d.pca_dim)?;
            projected = pool
                .features()
                .iter()
                .map(|x| pca.subspace.project_point(x))
                .collect::<Vec<_>>();
            for (dev, ids) in alloc.indices.iter().enumerate() {
                let pts: Vec<Vec<f64>> = ids.iter().map(|&i| projected[i].clone()).collect();
                let km = kmeans(&pts, l, derive_seed(seed, &[tag("kmeans"), dev as u64]))?;
                let mut parts = vec![Vec::new(); l];
                for (k, &c) in km.assignment.iter().enumerate() {
                    parts[c].push(ids[k]);
                }
                holdings.push(parts);
            }
        }
    }

    let mut topo = stream(seed, &[tag("topology")]);
    let distances = random_distances(n, s.side, &mut topo);
    let rss = s.rss.sample(&distances, &mut topo)?;
    let radio = RadioModel {
        mean_d2d_distance: rss.mean_distance(),
        ..s.radio
    };
    let dynamic = s.dynamic.then_some(s.rss);
    let channel = Channel::new(
        rss,
        s.rate,
        s.noise,
        s.alpha_d,
        s.budget,
        s.rss_resolution,
        (s.rss.lo, s.rss.hi),
        dynamic,
    )?;
    let trust = make_trust(
        d.trust_pattern,
        n,
        l,
        d.trust_sparsity,
        derive_seed(seed, &[tag("trust")]),
    )?;
    let thresholds = vec![ThresholdVector::uniform(l, s.threshold); n];
    let env = match d.mode {
        Mode::Unsupervised => AnyEnv::Usp(UspEnv::new(
            channel, projected, holdings, thresholds, trust,
        )?),
        _ => AnyEnv::Sup(SupEnv::new(
            channel, holdings, thresholds, trust, s.l_hat, d.metric,
        )?),
    };
    Ok(Setup {
        env,
        pool,
        test,
        train_labels,
        radio,
        point_bits: 32 * d.blobs.dim as u64,
    })
}

/// Commits the links of `method` on `setup.env`.
pub fn discover(
    cfg: &ExperimentConfig,
    setup: &mut Setup,
    method: Method,
    seed: u64,
) -> Result<Discovery> {
    let cost = CommitCost {
        radio: &setup.radio,
        point_bits: setup.point_bits,
    };
    let stream_seed = derive_seed(seed, &[tag(method.name())]);
    match method.baseline() {
        None => train_graph(
            &mut setup.env,
            &cfg.rl,
            cfg.system.edges,
            cfg.system.delivery,
            &cost,
            stream_seed,
        ),
        Some(kind) => baseline_graph(
            kind,
            &mut setup.env,
            cfg.system.edges,
            cfg.system.delivery,
            &cost,
            stream_seed,
        ),
    }
}

/// Per-device training sets from the current holdings.
pub fn device_data(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<FlData>> {
    setup
        .env
        .holdings()
        .iter()
        .map(|parts| {
            let mut ids: Vec<usize> = parts.iter().flatten().copied().collect();
            ids.sort_unstable();
            let features = device_features(&setup.pool, &ids);
            let targets = match cfg.data.mode {
                Mode::Unsupervised => Targets::Unlabeled,
                _ => Targets::Classes(
                    ids.iter()
                        .map(|&i| setup.train_labels[i].ok_or(Error::MissingLabels))
                        .collect::<Result<_>>()?,
                ),
            };
            FlData::new(features, targets)
        })
        .collect()
}

pub fn model_arch(cfg: &ExperimentConfig) -> Arch {
    let input = cfg.data.blobs.dim;
    let classes = cfg.data.blobs.classes;
    match (cfg.data.mode, cfg.model.kind) {
        (Mode::Unsupervised, _) => Arch::Encoder {
            input,
            edim: cfg.model.edim,
        },
        (_, ModelKind::Softmax) => Arch::Softmax {
            input,
            outputs: classes,
        },
        (_, ModelKind::Mlp) => Arch::Mlp {
            input,
            hidden: cfg.model.hidden,
            outputs: classes,
        },
    }
}

fn row(
    scenario: &str,
    method: Method,
    seed: u64,
    round: usize,
    metric: &str,
    value: f64,
    e: &EnergyLedger,
) -> ResultRow {
    ResultRow {
        scenario: scenario.into(),
        method: method.name().into(),
        seed,
        round,
        metric: metric.into(),
        value,
        d2d_joules: e.d2d_joules,
        d2s_joules: e.d2s_joules,
    }
}

/// The full pipeline for one cell: setup, discovery, committed exchange,
/// federated training, metric rows. Energy columns are cumulative.
pub fn run_cell(
    cfg: &ExperimentConfig,
    scenario: &str,
    method: Method,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let mut setup = build_setup(cfg, seed)?;
    let before = setup.env.clone();
    let disc = discover(cfg, &mut setup, method, seed)?;
    let first = disc
        .rounds
        .first()
        .cloned()
        .unwrap_or_else(|| vec![None; cfg.system.devices]);
    let objective = selection_objective(&before, &first, &cfg.rl, seed)?;
    let mut energy = disc.energy;
    let sent: usize = disc.moves.iter().map(|m| m.sent.len()).sum();
    let received: usize = disc.moves.iter().map(|m| m.received.len()).sum();
    let mut rows = vec![
        row(
            scenario,
            method,
            seed,
            0,
            "graph_objective",
            objective,
            &energy,
        ),
        row(
            scenario,
            method,
            seed,
            0,
            "rl_bits",
            disc.rl_bits as f64,
            &energy,
        ),
        row(
            scenario,
            method,
            seed,
            0,
            "points_sent",
            sent as f64,
            &energy,
        ),
        row(
            scenario,
            method,
            seed,
            0,
            "points_received",
            received as f64,
            &energy,
        ),
    ];

    let data = device_data(cfg, &setup)?;
    let test = FlData::from(&setup.test);
    let arch = model_arch(cfg);
    let init = ModelParams::init(arch, &mut stream(seed, &[tag("init")]))?;
    let fl = crate::fl::TrainConfig {
        seed,
        ..cfg.fl.clone()
    };
    let trace = run_training(&data, &test, &init, &fl)?;
    let model_bits = 32 * arch.num_params() as u64;
    let peer_distance = setup.radio.mean_d2d_distance;
    for (r, value) in trace.values.iter().enumerate() {
        energy.record_transfer(
            trace.uploads[r] * model_bits,
            0.0,
            LinkKind::D2s,
            &setup.radio,
        )?;
        energy.record_transfer(
            trace.peer_transfers[r] * model_bits,
            peer_distance,
            LinkKind::D2d,
            &setup.radio,
        )?;
        rows.push(row(
            scenario,
            method,
            seed,
            r + 1,
            trace.metric.name(),
            *value,
            &energy,
        ));
    }
    Ok(rows)
}

/// Runs every (sweep value, method, seed) cell on a pool of `jobs`
/// threads. Output order is fixed by the configuration, never by
/// scheduling; failed cells leave one `error` row.
pub fn run_pipeline(cfg: &ExperimentConfig, jobs: usize) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for (label, c) in cfg.expand()? {
        for &method in &c.methods {
            for &seed in &c.seeds {
                cells.push((label.clone(), c.clone(), method, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<ResultRow>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(label, c, method, seed)| run_cell(c, label, *method, *seed))
            .collect()
    });
    let mut out = PipelineOutput::default();
    for ((label, _, method, seed), res) in cells.into_iter().zip(results) {
        match res {
            Ok(rows) => out.rows.extend(rows),
            Err(e) => {
                out.rows.push(row(
                    &label,
                    method,
                    seed,
                    0,
                    "error",
                    f64::NAN,
                    &EnergyLedger::default(),
                ));
                out.failures.push(CellFailure {
                    scenario: label,
                    method,
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Brute-force optimum next to every method's first committed round, for
/// systems small enough to enumerate. Rows use round 0 and the metric
/// `graph_objective`; the optimum is reported under method `oracle`.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let none = EnergyLedger::default();
    for (label, c) in cfg.expand()? {
        for &seed in &c.seeds {
            let setup = build_setup(&c, seed)?;
            let (_, opt) = brute_force_optimal(&setup.env, &c.rl, seed)?;
            rows.push(ResultRow {
                scenario: label.clone(),
                method: "oracle".into(),
                seed,
                round: 0,
                metric: "graph_objective".into(),
                value: opt,
                d2d_joules: 0.0,
                d2s_joules: 0.0,
            });
            for &method in &c.methods {
                let mut s = setup.clone();
                let disc = discover(&c, &mut s, method, seed)?;
                let first = disc
                    .rounds
                    .first()
                    .cloned()
                    .unwrap_or_else(|| vec![None; c.system.devices]);
                let value = selection_objective(&setup.env, &first, &c.rl, seed)?;
                rows.push(row(
                    &label,
                    method,
                    seed,
                    0,
                    "graph_objective",
                    value,
                    &none,
                ));
            }
        }
    }
    Ok(rows)
}

/// Header plus one line per row, LF endings.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "scenario",
            "method",
            "seed",
            "round",
            "metric",
            "value",
            "d2d_joules",
            "d2s_joules",
        ])
        .map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Csv {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

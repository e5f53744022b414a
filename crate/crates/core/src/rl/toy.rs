//! Small random supervised systems for tests, benches and oracle checks.

use rand::Rng;

use super::env::{Channel, SupEnv};
use crate::data::{ThresholdVector, TrustMatrix};
use crate::diversity::DistanceMetric;
use crate::error::Result;
use crate::net::{random_distances, RssSpec};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub devices: usize,
    pub labels: usize,
    pub l_hat: usize,
    pub threshold: u64,
    pub trust_density: f64,
    pub rate: f64,
    pub noise: f64,
    pub alpha_d: f64,
    pub budget: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            devices: 4,
            labels: 5,
            l_hat: 3,
            threshold: 10,
            trust_density: 0.7,
            rate: 0.8,
            noise: 0.02,
            alpha_d: 0.1,
            budget: 50,
        }
    }
}

/// Each device holds two or three dominant labels and a few stray points.
pub fn random_sup_env(spec: &ToySpec, seed: u64) -> Result<SupEnv> {
    let mut rng = stream(seed, &[tag("toy")]);
    let (n, l) = (spec.devices, spec.labels);
    let mut next_id = 0;
    let mut holdings = Vec::with_capacity(n);
    for _ in 0..n {
        let dominant = rng.random_range(2..=3.min(l));
        let mut labels: Vec<usize> = (0..l).collect();
        let (chosen, _) =
            rand::seq::SliceRandom::partial_shuffle(&mut labels[..], &mut rng, dominant);
        let chosen = chosen.to_vec();
        let dev: Vec<Vec<usize>> = (0..l)
            .map(|c| {
                let count = if chosen.contains(&c) {
                    rng.random_range(15..40)
                } else {
                    rng.random_range(0..4)
                };
                let ids = (next_id..next_id + count).collect();
                next_id += count;
                ids
            })
            .collect();
        holdings.push(dev);
    }
    let trust = (0..n)
        .map(|_| {
            let mut t = TrustMatrix::empty(n, l);
            for rx in 0..n {
                for c in 0..l {
                    t.set(rx, c, rng.random_bool(spec.trust_density));
                }
            }
            t
        })
        .collect();
    let distances = random_distances(n, 100.0, &mut rng);
    let rss_spec = RssSpec::default();
    let rss = rss_spec.sample(&distances, &mut rng)?;
    let channel = Channel::new(
        rss,
        spec.rate,
        spec.noise,
        spec.alpha_d,
        spec.budget,
        1,
        (rss_spec.lo, rss_spec.hi),
        None,
    )?;
    SupEnv::new(
        channel,
        holdings,
        vec![ThresholdVector::uniform(l, spec.threshold); n],
        trust,
        spec.l_hat,
        DistanceMetric::Wasserstein,
    )
}

//! Wireless channel abstraction: RSS, drop probabilities, reliable-device
//! clustering, state quantization and energy accounting.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;

/// Received signal strength `values[(rx, tx)]` (linear scale) together with
/// the pairwise distances used for energy accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct RssMatrix {
    values: Matrix,
    distances: Matrix,
}

impl RssMatrix {
    pub fn new(values: Matrix, distances: Matrix) -> Result<Self> {
        let n = values.nrows();
        if n < 2 || values.ncols() != n {
            return Err(invalid(
                "RSS matrix must be square with at least two devices",
            ));
        }
        if distances.shape() != (n, n) {
            return Err(invalid("distance matrix shape differs from RSS matrix"));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = values[(i, j)];
                if !(w > 0.0) || !w.is_finite() {
                    return Err(invalid(format!("RSS[{i},{j}] = {w} is not positive")));
                }
                if !(distances[(i, j)] >= 0.0) {
                    return Err(invalid(format!("distance[{i},{j}] is negative")));
                }
            }
        }
        Ok(Self { values, distances })
    }

    /// Uniform RSS with unit distances; handy for tests and toy instances.
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(
            Matrix::from_element(n, n, value),
            Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
        )
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.values[(rx, tx)]
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn distances(&self) -> &Matrix {
        &self.distances
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[(a, b)]
    }

    /// The state vector of device `i`: RSS from every other device.
    pub fn row_without_self(&self, i: usize) -> Vec<f64> {
        (0..self.n())
            .filter(|&j| j != i)
            .map(|j| self.values[(i, j)])
            .collect()
    }

    pub fn mean_distance(&self) -> f64 {
        let n = self.n();
        let total: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.distances[(i, j)])
            .sum();
        total / (n * (n - 1)) as f64
    }
}

/// Truncated-Gaussian RSS generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssSpec {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for RssSpec {
    fn default() -> Self {
        Self {
            mean: 0.3,
            std: 0.1,
            lo: 0.05,
            hi: 0.55,
        }
    }
}

impl RssSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.std > 0.0) {
            return Err(invalid("RSS spec needs 0 < lo < hi and std > 0"));
        }
        Ok(())
    }

    /// Rejection sampling from N(mean, std) restricted to (lo, hi).
    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.mean, self.std).expect("validated std");
        for _ in 0..10_000 {
            let w = normal.sample(rng);
            if w > self.lo && w < self.hi {
                return w;
            }
        }
        self.mean.clamp(self.lo, self.hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, distances: &Matrix, rng: &mut R) -> Result<RssMatrix> {
        self.validate()?;
        let n = distances.nrows();
        let mut values = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[(i, j)] = self.sample_value(rng);
                }
            }
        }
        RssMatrix::new(values, distances.clone())
    }
}

/// Devices dropped uniformly on a square of the given side (meters).
pub fn random_distances<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Matrix {
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side))
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
        (dx * dx + dy * dy).sqrt()
    })
}

/// Probability that a transmission from `tx` to `rx` fails, `values[(rx, tx)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropMatrix {
    values: Matrix,
}

impl DropMatrix {
    pub fn from_values(values: Matrix) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() < 2 {
            return Err(invalid(
                "drop matrix must be square with at least two devices",
            ));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("drop probabilities must lie in [0, 1]"));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.values[(rx, tx)]
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// `P_D = 1 - exp(-(2^r - 1) sigma^2 / W)` evaluated with `expm1` on both
/// ends so that small exponents keep full precision. Diagonal entries are 0.
pub fn compute_drop_matrix(w: &RssMatrix, rate: f64, noise: f64) -> Result<DropMatrix> {
    if !(rate > 0.0) || !(noise > 0.0) {
        return Err(invalid("rate and noise power must be positive"));
    }
    let n = w.n();
    let gain = (rate * std::f64::consts::LN_2).exp_m1() * noise;
    let values = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            -(-gain / w.get(i, j)).exp_m1()
        }
    });
    Ok(DropMatrix { values })
}

/// Disjoint reliable clusters with per-cluster inter-cluster budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliableClustering {
    pub assignment: Vec<usize>,
    pub budgets: Vec<u64>,
    pub spent: Vec<u64>,
}

impl ReliableClustering {
    pub fn num_clusters(&self) -> usize {
        self.budgets.len()
    }

    pub fn cluster_of(&self, device: usize) -> usize {
        self.assignment[device]
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }

    pub fn with_uniform_budget(mut self, budget: u64) -> Self {
        self.budgets.iter_mut().for_each(|b| *b = budget);
        self
    }

    pub fn same_cluster(&self, a: usize, b: usize) -> bool {
        self.assignment[a] == self.assignment[b]
    }
}

/// Greedy clique growing in device-index order: each unassigned device
/// seeds a cluster and admits every later unassigned device that is
/// reliable in both directions with all current members.
pub fn cluster_reliable(pd: &DropMatrix, alpha_d: f64) -> ReliableClustering {
    let n = pd.n();
    let mut assignment = vec![usize::MAX; n];
    let mut k = 0;
    for seed in 0..n {
        if assignment[seed] != usize::MAX {
            continue;
        }
        let mut members = vec![seed];
        assignment[seed] = k;
        #[allow(clippy::needless_range_loop)]
        for cand in seed + 1..n {
            if assignment[cand] != usize::MAX {
                continue;
            }
            let ok = members
                .iter()
                .all(|&m| pd.get(m, cand) <= alpha_d && pd.get(cand, m) <= alpha_d);
            if ok {
                members.push(cand);
                assignment[cand] = k;
            }
        }
        k += 1;
    }
    ReliableClustering {
        assignment,
        budgets: vec![0; k],
        spent: vec![0; k],
    }
}

/// Bin index of every entry after clamping to `[lo, hi]`.
pub fn quantize_bins(row: &[f64], resolution: usize, lo: f64, hi: f64) -> Result<Vec<usize>> {
    if row.is_empty() {
        return Err(invalid("cannot quantize an empty RSS row"));
    }
    if resolution == 0 || !(lo < hi) {
        return Err(invalid("quantization needs resolution >= 1 and lo < hi"));
    }
    let width = (hi - lo) / resolution as f64;
    Ok(row
        .iter()
        .map(|&x| {
            let x = x.clamp(lo, hi);
            (((x - lo) / width).floor() as usize).min(resolution - 1)
        })
        .collect())
}

/// Mixed-radix encoding of the bin tuple, first entry least significant.
pub fn quantize_state(row: &[f64], resolution: usize, lo: f64, hi: f64) -> Result<u128> {
    let bins = quantize_bins(row, resolution, lo, hi)?;
    let radix = resolution as u128;
    let mut q: u128 = 0;
    let mut place: u128 = 1;
    for (k, b) in bins.iter().enumerate() {
        q = q
            .checked_add(place.checked_mul(*b as u128).ok_or_else(overflow)?)
            .ok_or_else(overflow)?;
        if k + 1 < bins.len() && resolution > 1 {
            place = place.checked_mul(radix).ok_or_else(overflow)?;
        }
    }
    Ok(q)
}

fn overflow() -> crate::error::Error {
    invalid("state space exceeds 128-bit encoding; lower the RSS resolution")
}

/// First-order radio model: `E = bits * (e_elec + e_amp * distance^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioModel {
    pub e_elec: f64,
    pub e_amp: f64,
    /// Mean D2D distance; device-to-server links are charged at 3x this.
    #[serde(default)]
    pub mean_d2d_distance: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self {
            e_elec: 50e-9,
            e_amp: 100e-12,
            mean_d2d_distance: 0.0,
        }
    }
}

impl RadioModel {
    pub fn per_bit(&self, distance: f64) -> f64 {
        self.e_elec + self.e_amp * distance * distance
    }

    pub fn d2s_distance(&self) -> f64 {
        3.0 * self.mean_d2d_distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    D2d,
    D2s,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyLedger {
    pub d2d_joules: f64,
    pub d2s_joules: f64,
    pub d2d_bits: u64,
    pub d2s_bits: u64,
}

impl EnergyLedger {
    /// Charges `bits` over one link. For D2S the distance argument is
    /// ignored in favour of the radio model's server distance.
    pub fn record_transfer(
        &mut self,
        bits: u64,
        distance: f64,
        kind: LinkKind,
        radio: &RadioModel,
    ) -> Result<()> {
        if !(distance >= 0.0) || !distance.is_finite() {
            return Err(invalid(format!("transfer distance {distance} is invalid")));
        }
        if bits == 0 {
            return Ok(());
        }
        match kind {
            LinkKind::D2d => {
                self.d2d_bits += bits;
                self.d2d_joules += bits as f64 * radio.per_bit(distance);
            }
            LinkKind::D2s => {
                self.d2s_bits += bits;
                self.d2s_joules += bits as f64 * radio.per_bit(radio.d2s_distance());
            }
        }
        Ok(())
    }

    pub fn total_joules(&self) -> f64 {
        self.d2d_joules + self.d2s_joules
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn drop_from(entries: &[f64], n: usize) -> DropMatrix {
        DropMatrix::from_values(Matrix::from_row_slice(n, n, entries)).unwrap()
    }

    #[test]
    fn drop_formula_example() {
        let w = RssMatrix::uniform(2, 0.3).unwrap();
        let pd = compute_drop_matrix(&w, 0.8, 0.02).unwrap();
        // 40-digit reference value
        let expect = 0.048_206_083_389_024_003;
        assert!((pd.get(0, 1) - expect).abs() < 1e-15);
        assert_eq!(pd.get(0, 0), 0.0);
    }

    #[test]
    fn drop_limits() {
        let w = RssMatrix::uniform(3, 1e12).unwrap();
        let pd = compute_drop_matrix(&w, 0.8, 0.02).unwrap();
        assert!(pd.get(0, 1) < 1e-12);
        let w = RssMatrix::uniform(3, 0.3).unwrap();
        let pd = compute_drop_matrix(&w, 1e-300, 0.02).unwrap();
        assert!(pd.get(1, 2) < 1e-290);
    }

    #[test]
    fn drop_rejects_bad_parameters() {
        let w = RssMatrix::uniform(2, 0.3).unwrap();
        assert!(compute_drop_matrix(&w, 0.0, 0.02).is_err());
        assert!(compute_drop_matrix(&w, 0.8, -1.0).is_err());
        let bad = Matrix::from_row_slice(2, 2, &[0.0, -0.1, 0.2, 0.0]);
        assert!(RssMatrix::new(bad, Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn clustering_extremes() {
        let n = 5;
        let all_bad =
            DropMatrix::from_values(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.9 }))
                .unwrap();
        let c = cluster_reliable(&all_bad, 0.1);
        assert_eq!(c.num_clusters(), n);
        let all_good =
            DropMatrix::from_values(Matrix::from_fn(
                n,
                n,
                |i, j| if i == j { 0.0 } else { 0.01 },
            ))
            .unwrap();
        let c = cluster_reliable(&all_good, 0.1);
        assert_eq!(c.num_clusters(), 1);
        assert!(c.assignment.iter().all(|&k| k == 0));
    }

    #[test]
    fn clustering_two_pairs() {
        #[rustfmt::skip]
        let pd = drop_from(&[
            0.0, 0.05, 0.5, 0.5,
            0.05, 0.0, 0.5, 0.5,
            0.5, 0.5, 0.0, 0.05,
            0.5, 0.5, 0.05, 0.0,
        ], 4);
        let c = cluster_reliable(&pd, 0.1);
        assert_eq!(c.assignment, vec![0, 0, 1, 1]);
        // exhaustive check: every same-cluster pair passes, every cross pair fails
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let reliable = pd.get(i, j) <= 0.1 && pd.get(j, i) <= 0.1;
                    assert_eq!(reliable, c.same_cluster(i, j));
                }
            }
        }
    }

    #[test]
    fn clustering_checks_both_directions() {
        let pd = drop_from(&[0.0, 0.05, 0.5, 0.0], 2);
        assert_eq!(cluster_reliable(&pd, 0.1).num_clusters(), 2);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_state(&[0.1, 0.4, 0.2], 1, 0.05, 0.55).unwrap(), 0);
        assert_eq!(
            quantize_bins(&[0.05, 0.55], 2, 0.05, 0.55).unwrap(),
            vec![0, 1]
        );
        assert_eq!(quantize_state(&[0.05, 0.55], 2, 0.05, 0.55).unwrap(), 2);
        assert!(quantize_state(&[], 2, 0.05, 0.55).is_err());
        assert!(quantize_state(&[0.1], 0, 0.05, 0.55).is_err());
    }

    #[test]
    fn quantize_matches_scalar_oracle() {
        // reference binning: walk the bin edges explicitly
        fn oracle(x: f64, res: usize, lo: f64, hi: f64) -> usize {
            let x = x.clamp(lo, hi);
            let mut b = 0;
            for k in 1..res {
                let edge = lo + (hi - lo) * k as f64 / res as f64;
                if x >= edge {
                    b = k;
                }
            }
            b
        }
        let spec = RssSpec::default();
        let mut rng = stream(11, &[]);
        for _ in 0..200 {
            let row: Vec<f64> = (0..9).map(|_| spec.sample_value(&mut rng)).collect();
            let bins = quantize_bins(&row, 4, 0.05, 0.55).unwrap();
            let expect: Vec<usize> = row.iter().map(|&x| oracle(x, 4, 0.05, 0.55)).collect();
            assert_eq!(bins, expect);
            let q = quantize_state(&row, 4, 0.05, 0.55).unwrap();
            let decoded: Vec<usize> = (0..9).map(|k| ((q >> (2 * k)) & 3) as usize).collect();
            assert_eq!(decoded, expect);
        }
    }

    #[test]
    fn energy_examples() {
        let radio = RadioModel {
            e_elec: 50e-9,
            e_amp: 100e-12,
            mean_d2d_distance: 10.0,
        };
        let mut ledger = EnergyLedger::default();
        ledger
            .record_transfer(0, 10.0, LinkKind::D2d, &radio)
            .unwrap();
        assert_eq!(ledger, EnergyLedger::default());
        ledger
            .record_transfer(80, 10.0, LinkKind::D2d, &radio)
            .unwrap();
        assert_eq!(ledger.d2d_bits, 80);
        assert!((ledger.d2d_joules - 80.0 * (50e-9 + 1e-8)).abs() < 1e-20);
        ledger
            .record_transfer(80, 1.0, LinkKind::D2s, &radio)
            .unwrap();
        assert!((ledger.d2s_joules - 80.0 * (50e-9 + 100e-12 * 900.0)).abs() < 1e-20);
        assert!(ledger
            .record_transfer(1, -1.0, LinkKind::D2d, &radio)
            .is_err());
    }

    proptest! {
        #[test]
        fn drop_is_monotone(w in 0.01f64..2.0, r in 0.05f64..3.0, s in 0.001f64..0.5, bump in 1.01f64..3.0) {
            let p = |w: f64, r: f64, s: f64| compute_drop_matrix(&RssMatrix::uniform(2, w).unwrap(), r, s).unwrap().get(0, 1);
            let base = p(w, r, s);
            prop_assert!(p(w * bump, r, s) <= base);
            prop_assert!(p(w, r * bump, s) >= base);
            prop_assert!(p(w, r, s * bump) >= base);
            // strict away from saturation
            if base < 0.99 {
                prop_assert!(p(w * bump, r, s) < base);
                prop_assert!(p(w, r * bump, s) > base);
                prop_assert!(p(w, r, s * bump) > base);
            }
        }

        #[test]
        fn clusters_are_reliable_partitions(seed in 0u64..1000, alpha in 0.05f64..0.6) {
            let mut rng = stream(seed, &[]);
            let n = 2 + (seed as usize % 9);
            let pd = DropMatrix::from_values(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() })).unwrap();
            let c = cluster_reliable(&pd, alpha);
            prop_assert_eq!(c.assignment.len(), n);
            for i in 0..n {
                prop_assert!(c.assignment[i] < c.num_clusters());
                for j in 0..n {
                    if i != j && c.same_cluster(i, j) {
                        prop_assert!(pd.get(i, j) <= alpha && pd.get(j, i) <= alpha);
                    }
                }
            }
        }

        #[test]
        fn bin_midpoints_requantize_to_themselves(res in 1usize..12) {
            let (lo, hi) = (0.05, 0.55);
            let mids: Vec<f64> = (0..res).map(|b| lo + (b as f64 + 0.5) * (hi - lo) / res as f64).collect();
            let bins = quantize_bins(&mids, res, lo, hi).unwrap();
            prop_assert_eq!(bins, (0..res).collect::<Vec<_>>());
        }

        #[test]
        fn ledger_is_sum_of_events(events in proptest::collection::vec((0u64..10_000, 0.0f64..200.0), 1..50)) {
            let radio = RadioModel { e_elec: 50e-9, e_amp: 100e-12, mean_d2d_distance: 20.0 };
            let mut ledger = EnergyLedger::default();
            let mut joules = 0.0;
            let mut bits = 0;
            let mut prev = 0.0;
            for &(b, d) in &events {
                ledger.record_transfer(b, d, LinkKind::D2d, &radio).unwrap();
                joules += b as f64 * (50e-9 + 100e-12 * d * d);
                bits += b;
                prop_assert!(ledger.d2d_joules >= prev);
                prev = ledger.d2d_joules;
            }
            prop_assert_eq!(ledger.d2d_bits, bits);
            prop_assert!((ledger.d2d_joules - joules).abs() <= 1e-12 * joules.max(1e-30));
        }
    }
}

//! Local datasets, label-skewed allocation, trust matrices and count vectors.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    features: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    label_mask: Option<Vec<bool>>,
}

impl LocalDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let Some(first) = features.first() else {
            return Err(invalid("dataset must hold at least one point"));
        };
        let dim = first.len();
        for f in &features {
            ensure_len(dim, f.len())?;
        }
        if let Some(l) = &labels {
            ensure_len(features.len(), l.len())?;
        }
        Ok(Self {
            features,
            labels,
            label_mask: None,
        })
    }

    pub fn unlabeled(features: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(features, None)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if self.labels.is_none() {
            return Err(Error::MissingLabels);
        }
        ensure_len(self.len(), mask.len())?;
        self.label_mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label_mask(&self) -> Option<&[bool]> {
        self.label_mask.as_deref()
    }

    /// Labels visible to the device: `None` where the mask hides them.
    pub fn observed_labels(&self) -> Option<Vec<Option<usize>>> {
        let labels = self.labels.as_ref()?;
        Some(match &self.label_mask {
            Some(mask) => labels
                .iter()
                .zip(mask)
                .map(|(&l, &m)| m.then_some(l))
                .collect(),
            None => labels.iter().map(|&l| Some(l)).collect(),
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        let mut ds = Self::new(features, labels)?;
        if let Some(mask) = &self.label_mask {
            ds.label_mask = Some(indices.iter().map(|&i| mask[i]).collect());
        }
        Ok(ds)
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountVector(Vec<u64>);

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Self {
        Self(counts)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn get(&self, l: usize) -> u64 {
        self.0[l]
    }

    pub fn into_inner(self) -> Vec<u64> {
        self.0
    }
}

impl std::ops::Index<usize> for CountVector {
    type Output = u64;
    fn index(&self, l: usize) -> &u64 {
        &self.0[l]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdVector(Vec<u64>);

impl ThresholdVector {
    pub fn new(thresholds: Vec<u64>) -> Self {
        Self(thresholds)
    }

    pub fn uniform(len: usize, value: u64) -> Self {
        Self(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

impl std::ops::Index<usize> for ThresholdVector {
    type Output = u64;
    fn index(&self, l: usize) -> &u64 {
        &self.0[l]
    }
}

/// Per-transmitter trust: `get(rx, l)` says whether the owner shares
/// partition `l` with receiver `rx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustMatrix {
    devices: usize,
    partitions: usize,
    allowed: Vec<bool>,
}

impl TrustMatrix {
    pub fn full(devices: usize, partitions: usize) -> Self {
        Self {
            devices,
            partitions,
            allowed: vec![true; devices * partitions],
        }
    }

    pub fn empty(devices: usize, partitions: usize) -> Self {
        Self {
            devices,
            partitions,
            allowed: vec![false; devices * partitions],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let partitions = rows.first().map_or(0, Vec::len);
        let mut allowed = Vec::with_capacity(rows.len() * partitions);
        for row in rows {
            ensure_len(partitions, row.len())?;
            for &v in row {
                match v {
                    0 => allowed.push(false),
                    1 => allowed.push(true),
                    _ => return Err(invalid("trust entries must be 0 or 1")),
                }
            }
        }
        Ok(Self {
            devices: rows.len(),
            partitions,
            allowed,
        })
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn get(&self, rx: usize, l: usize) -> bool {
        self.allowed[rx * self.partitions + l]
    }

    pub fn set(&mut self, rx: usize, l: usize, v: bool) {
        self.allowed[rx * self.partitions + l] = v;
    }

    /// Number of partitions shared with `rx`.
    pub fn row_weight(&self, rx: usize) -> usize {
        (0..self.partitions).filter(|&l| self.get(rx, l)).count()
    }

    pub fn row_is_zero(&self, rx: usize) -> bool {
        self.row_weight(rx) == 0
    }

    pub fn col_is_zero(&self, l: usize) -> bool {
        (0..self.devices).all(|i| !self.get(i, l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustPattern {
    Random,
    RowSparse,
    ColSparse,
    Block,
}

/// One generated trust block: consecutive receiver rows times a run of
/// partitions that wraps around the partition axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustBlock {
    pub rows: std::ops::Range<usize>,
    pub cols: Vec<usize>,
}

/// Blocks of side 2..=4 laid along the device axis from row 0, with the
/// partition offset advancing (and wrapping) from a random start.
pub fn block_trust<R: Rng + ?Sized>(
    devices: usize,
    partitions: usize,
    rng: &mut R,
) -> (TrustMatrix, Vec<TrustBlock>) {
    let mut t = TrustMatrix::empty(devices, partitions);
    let mut blocks = Vec::new();
    let mut row = 0;
    let mut col = rng.random_range(0..partitions);
    while row < devices {
        let h = rng.random_range(2..=4usize);
        let w = rng.random_range(2..=4usize).min(partitions);
        let rows = row..(row + h).min(devices);
        let cols: Vec<usize> = (0..w).map(|k| (col + k) % partitions).collect();
        for i in rows.clone() {
            for &l in &cols {
                t.set(i, l, true);
            }
        }
        blocks.push(TrustBlock { rows, cols });
        row += h;
        col = (col + w) % partitions;
    }
    (t, blocks)
}

/// One trust matrix per transmitter.
pub fn make_trust(
    pattern: TrustPattern,
    devices: usize,
    partitions: usize,
    sparsity: f64,
    seed: u64,
) -> Result<Vec<TrustMatrix>> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(invalid("trust sparsity must lie in [0, 1]"));
    }
    if devices == 0 || partitions == 0 {
        return Err(invalid("trust matrices need devices and partitions"));
    }
    let mut rng = stream(seed, &[tag("trust")]);
    let out = (0..devices)
        .map(|_| match pattern {
            TrustPattern::Random => {
                let mut t = TrustMatrix::empty(devices, partitions);
                for i in 0..devices {
                    for l in 0..partitions {
                        t.set(i, l, rng.random::<f64>() >= sparsity);
                    }
                }
                t
            }
            TrustPattern::RowSparse => {
                let mut t = TrustMatrix::full(devices, partitions);
                let k = (sparsity * devices as f64).ceil() as usize;
                for i in rand::seq::index::sample(&mut rng, devices, k.min(devices)) {
                    (0..partitions).for_each(|l| t.set(i, l, false));
                }
                t
            }
            TrustPattern::ColSparse => {
                let mut t = TrustMatrix::full(devices, partitions);
                let k = (sparsity * partitions as f64).ceil() as usize;
                for l in rand::seq::index::sample(&mut rng, partitions, k.min(partitions)) {
                    (0..devices).for_each(|i| t.set(i, l, false));
                }
                t
            }
            TrustPattern::Block => block_trust(devices, partitions, &mut rng).0,
        })
        .collect();
    Ok(out)
}

pub fn count_vector(ds: &LocalDataset, num_labels: usize) -> Result<CountVector> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    let mut counts = vec![0u64; num_labels];
    for &l in labels {
        if l >= num_labels {
            return Err(invalid(format!("label {l} outside 0..{num_labels}")));
        }
        counts[l] += 1;
    }
    Ok(CountVector(counts))
}

/// Splits `total` proportionally to `weights`: floors first, then hands the
/// leftovers to the largest fractional parts (ties go to the lower index).
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        return largest_remainder(total, &vec![1.0; weights.len()]);
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| (x + 1e-9).floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - out[a] as f64;
        let fb = exact[b] - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewSpec {
    pub labels_per_device: usize,
    pub proportions: Vec<f64>,
    #[serde(default)]
    pub dirichlet_alpha: Option<f64>,
    #[serde(default)]
    pub points_per_device: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SkewSpec {
    fn default() -> Self {
        Self {
            labels_per_device: 3,
            proportions: vec![0.7, 0.2, 0.1],
            dirichlet_alpha: None,
            points_per_device: None,
            seed: 0,
        }
    }
}

impl SkewSpec {
    pub fn uniform(labels_per_device: usize) -> Self {
        Self {
            labels_per_device,
            proportions: vec![1.0 / labels_per_device as f64; labels_per_device],
            ..Self::default()
        }
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if let Some(alpha) = self.dirichlet_alpha {
            if !(alpha > 0.0) {
                return Err(invalid("Dirichlet alpha must be positive"));
            }
            return Ok(());
        }
        if self.labels_per_device == 0 || self.labels_per_device > num_labels {
            return Err(invalid(format!(
                "labels_per_device must lie in 1..={num_labels}"
            )));
        }
        ensure_len(self.labels_per_device, self.proportions.len())?;
        if self.proportions.iter().any(|p| !(*p > 0.0)) {
            return Err(invalid("skew proportions must be positive"));
        }
        if (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(invalid("skew proportions must sum to 1"));
        }
        Ok(())
    }
}

/// Result of splitting a pool: per-device datasets, the pool indices each
/// device holds, and the pool indices nobody received.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub devices: Vec<LocalDataset>,
    pub indices: Vec<Vec<usize>>,
    pub leftover: Vec<usize>,
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("validated alpha");
    let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|g| g / sum).collect()
    } else {
        let mut one_hot = vec![0.0; len];
        one_hot[rng.random_range(0..len)] = 1.0;
        one_hot
    }
}

/// Label-skewed split of a labeled pool over `n` devices. All devices get
/// the same number of points; the per-device size defaults to the largest
/// one the pool can satisfy.
pub fn allocate_skewed(pool: &LocalDataset, n: usize, spec: &SkewSpec) -> Result<Allocation> {
    let labels = pool.labels().ok_or(Error::MissingLabels)?;
    let num_labels = pool.num_classes();
    if n == 0 {
        return Err(invalid("need at least one device"));
    }
    spec.validate(num_labels)?;
    let mut rng = stream(spec.seed, &[tag("allocate")]);

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, &l) in labels.iter().enumerate() {
        by_label[l].push(i);
    }
    for list in &mut by_label {
        list.shuffle(&mut rng);
    }

    let shares: Vec<Vec<f64>> = (0..n)
        .map(|_| match spec.dirichlet_alpha {
            Some(alpha) => dirichlet(alpha, num_labels, &mut rng),
            None => {
                let mut share = vec![0.0; num_labels];
                let chosen = rand::seq::index::sample(&mut rng, num_labels, spec.labels_per_device);
                for (slot, l) in chosen.into_iter().enumerate() {
                    share[l] = spec.proportions[slot];
                }
                share
            }
        })
        .collect();

    let demand = |m: u64| -> Vec<u64> {
        let mut d = vec![0u64; num_labels];
        for share in &shares {
            for (l, c) in largest_remainder(m, share).into_iter().enumerate() {
                d[l] += c;
            }
        }
        d
    };
    let first_short = |d: &[u64]| (0..num_labels).find(|&l| d[l] as usize > by_label[l].len());

    let per_device = match spec.points_per_device {
        Some(m) => {
            let d = demand(m as u64);
            if let Some(l) = first_short(&d) {
                return Err(Error::Allocation {
                    label: l,
                    needed: d[l] as usize,
                    available: by_label[l].len(),
                });
            }
            m as u64
        }
        None => {
            let weight: Vec<f64> = (0..num_labels)
                .map(|l| shares.iter().map(|s| s[l]).sum())
                .collect();
            let mut m = (0..num_labels)
                .filter(|&l| weight[l] > 0.0)
                .map(|l| (by_label[l].len() as f64 / weight[l]).floor() as u64)
                .min()
                .unwrap_or(0)
                .min((labels.len() / n) as u64);
            while m > 0 && first_short(&demand(m)).is_some() {
                m -= 1;
            }
            if m == 0 {
                let l = first_short(&demand(1)).unwrap_or(0);
                return Err(Error::Allocation {
                    label: l,
                    needed: n,
                    available: by_label[l].len(),
                });
            }
            m
        }
    };

    let mut cursor = vec![0usize; num_labels];
    let mut indices = Vec::with_capacity(n);
    for share in &shares {
        let mut mine = Vec::with_capacity(per_device as usize);
        for (l, c) in largest_remainder(per_device, share).into_iter().enumerate() {
            let c = c as usize;
            mine.extend_from_slice(&by_label[l][cursor[l]..cursor[l] + c]);
            cursor[l] += c;
        }
        mine.sort_unstable();
        indices.push(mine);
    }
    let mut leftover: Vec<usize> = (0..num_labels)
        .flat_map(|l| by_label[l][cursor[l]..].to_vec())
        .collect();
    leftover.sort_unstable();
    let devices = indices
        .iter()
        .map(|idx| pool.subset(idx))
        .collect::<Result<_>>()?;
    Ok(Allocation {
        devices,
        indices,
        leftover,
    })
}

/// Hides labels so that roughly `labeled_fraction` stay visible, keeping at
/// least one visible point for every label present.
pub fn mask_labels<R: Rng + ?Sized>(
    ds: &LocalDataset,
    labeled_fraction: f64,
    rng: &mut R,
) -> Result<LocalDataset> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    if !(0.0..=1.0).contains(&labeled_fraction) {
        return Err(invalid("labeled fraction must lie in [0, 1]"));
    }
    let mut mask = vec![false; ds.len()];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let mut seen = vec![false; ds.num_classes()];
    let mut visible = 0;
    for &i in &order {
        if !seen[labels[i]] {
            seen[labels[i]] = true;
            mask[i] = true;
            visible += 1;
        }
    }
    let target = (labeled_fraction * ds.len() as f64).round() as usize;
    for &i in &order {
        if visible >= target {
            break;
        }
        if !mask[i] {
            mask[i] = true;
            visible += 1;
        }
    }
    ds.clone().with_mask(mask)
}

/// `classes` isotropic Gaussian blobs in `dim` dimensions. Class means are
/// random directions scaled to `separation`; each point adds N(0, noise^2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            separation: 3.0,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlobModel {
    pub means: Vec<Vec<f64>>,
    pub noise: f64,
}

impl BlobModel {
    pub fn new(spec: &BlobSpec, seed: u64) -> Result<Self> {
        if spec.classes == 0 || spec.dim == 0 || !(spec.noise >= 0.0) {
            return Err(invalid(
                "blob spec needs classes, dim and nonnegative noise",
            ));
        }
        let mut rng = stream(seed, &[tag("blob-means")]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let means = (0..spec.classes)
            .map(|_| {
                let v: Vec<f64> = (0..spec.dim).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x * spec.separation / norm).collect()
            })
            .collect();
        Ok(Self {
            means,
            noise: spec.noise,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Result<LocalDataset> {
        let normal = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).expect("validated noise");
        let mut features = Vec::with_capacity(per_class * self.means.len());
        let mut labels = Vec::with_capacity(per_class * self.means.len());
        for (l, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                features.push(mean.iter().map(|m| m + normal.sample(rng)).collect());
                labels.push(l);
            }
        }
        LocalDataset::new(features, Some(labels))
    }
}

/// Reads one datapoint per row. A final header column named `label`
/// (case-insensitive) holds integer labels; all other columns are features.
pub fn read_csv(path: impl AsRef<Path>) -> Result<LocalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<LocalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Csv {
            line: 1,
            message: "missing header".into(),
        });
    }
    let has_label = headers
        .iter()
        .next_back()
        .is_some_and(|h| h.trim().eq_ignore_ascii_case("label"));
    let feature_cols = headers.len() - usize::from(has_label);
    if feature_cols == 0 {
        return Err(Error::Csv {
            line: 1,
            message: "no feature columns".into(),
        });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Csv {
            line,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut point = Vec::with_capacity(feature_cols);
        for (c, field) in record.iter().take(feature_cols).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
                line,
                message: format!("column {} is not a number: {field:?}", c + 1),
            })?;
            point.push(v);
        }
        features.push(point);
        if has_label {
            let field = record.get(feature_cols).unwrap_or_default();
            let l: usize = field.trim().parse().map_err(|_| Error::Csv {
                line,
                message: format!("label is not a nonnegative integer: {field:?}"),
            })?;
            labels.push(l);
        }
    }
    if features.is_empty() {
        return Err(Error::Csv {
            line: 2,
            message: "no data rows".into(),
        });
    }
    LocalDataset::new(features, has_label.then_some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pool(per_class: usize, classes: usize, seed: u64) -> LocalDataset {
        let spec = BlobSpec {
            classes,
            dim: 3,
            separation: 3.0,
            noise: 1.0,
        };
        BlobModel::new(&spec, seed)
            .unwrap()
            .sample(per_class, &mut stream(seed, &[1]))
            .unwrap()
    }

    fn entropy(c: &CountVector) -> f64 {
        let t = c.total() as f64;
        c.as_slice()
            .iter()
            .filter(|&&x| x > 0)
            .map(|&x| {
                let p = x as f64 / t;
                -p * p.ln()
            })
            .sum()
    }

    #[test]
    fn count_vector_examples() {
        let labels: Vec<usize> = std::iter::repeat_n(0, 20)
            .chain(std::iter::repeat_n(4, 20))
            .collect();
        let ds = LocalDataset::new(vec![vec![0.0]; 40], Some(labels)).unwrap();
        assert_eq!(count_vector(&ds, 5).unwrap().as_slice(), &[20, 0, 0, 0, 20]);
        let unlabeled = LocalDataset::unlabeled(vec![vec![1.0]]).unwrap();
        assert!(matches!(
            count_vector(&unlabeled, 5),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn count_vector_matches_histogram() {
        let mut rng = stream(3, &[]);
        let labels: Vec<usize> = (0..100).map(|_| rng.random_range(0..7)).collect();
        let ds = LocalDataset::new(vec![vec![0.0]; 100], Some(labels.clone())).unwrap();
        let counts = count_vector(&ds, 7).unwrap();
        for l in 0..7 {
            assert_eq!(
                counts[l] as usize,
                labels.iter().filter(|&&x| x == l).count()
            );
        }
    }

    #[test]
    fn largest_remainder_rules() {
        assert_eq!(largest_remainder(5, &[7.0, 3.0]), vec![4, 1]);
        assert_eq!(largest_remainder(10, &[1.0, 1.0]), vec![5, 5]);
        assert_eq!(largest_remainder(3, &[0.0, 0.0, 0.0]), vec![1, 1, 1]);
        assert_eq!(largest_remainder(100, &[0.7, 0.2, 0.1]), vec![70, 20, 10]);
    }

    #[test]
    fn skewed_allocation_ratio() {
        let pool = pool(300, 10, 1);
        let spec = SkewSpec {
            seed: 9,
            ..SkewSpec::default()
        };
        let alloc = allocate_skewed(&pool, 25, &spec).unwrap();
        let size = alloc.devices[0].len();
        assert!(size >= 10);
        for ds in &alloc.devices {
            assert!(ds.len().abs_diff(size) <= 1);
            let c = count_vector(ds, 10).unwrap();
            let mut nz: Vec<u64> = c.as_slice().iter().copied().filter(|&x| x > 0).collect();
            nz.sort_unstable_by(|a, b| b.cmp(a));
            assert_eq!(nz.len(), 3);
            let t = c.total() as f64;
            for (got, want) in nz.iter().zip([0.7, 0.2, 0.1]) {
                assert!((*got as f64 - want * t).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn uniform_allocation_is_near_iid() {
        let pool = pool(100, 5, 2);
        let alloc = allocate_skewed(&pool, 5, &SkewSpec::uniform(5)).unwrap();
        for ds in &alloc.devices {
            assert_eq!(count_vector(ds, 5).unwrap().as_slice(), &[20; 5]);
        }
        assert!(alloc.leftover.is_empty());
    }

    #[test]
    fn allocation_reports_short_label() {
        let pool = pool(10, 4, 3);
        let spec = SkewSpec {
            points_per_device: Some(50),
            ..SkewSpec::default()
        };
        match allocate_skewed(&pool, 8, &spec) {
            Err(Error::Allocation {
                label,
                needed,
                available,
            }) => {
                assert!(label < 4);
                assert!(needed > available);
            }
            other => panic!("expected allocation error, got {other:?}"),
        }
    }

    #[test]
    fn dirichlet_concentration_orders_entropy() {
        let pool = pool(1000, 10, 4);
        let mean_entropy = |alpha: f64| -> f64 {
            let mut total = 0.0;
            for seed in 0..100 {
                let spec = SkewSpec {
                    dirichlet_alpha: Some(alpha),
                    points_per_device: Some(100),
                    seed,
                    ..SkewSpec::default()
                };
                let alloc = allocate_skewed(&pool, 10, &spec).unwrap();
                total += alloc
                    .devices
                    .iter()
                    .map(|d| entropy(&count_vector(d, 10).unwrap()))
                    .sum::<f64>()
                    / 10.0;
            }
            total / 100.0
        };
        let (low, high) = (mean_entropy(0.01), mean_entropy(10.0));
        assert!(low < high, "entropy {low} vs {high}");
    }

    #[test]
    fn trust_patterns() {
        let t = make_trust(TrustPattern::Random, 6, 4, 0.0, 1).unwrap();
        assert!(t.iter().all(|m| (0..6).all(|i| m.row_weight(i) == 4)));

        let t = make_trust(TrustPattern::RowSparse, 20, 10, 0.5, 2).unwrap();
        for m in &t {
            assert_eq!((0..20).filter(|&i| m.row_is_zero(i)).count(), 10);
            assert_eq!((0..20).filter(|&i| m.row_weight(i) == 10).count(), 10);
        }
        let t = make_trust(TrustPattern::ColSparse, 20, 10, 0.5, 2).unwrap();
        for m in &t {
            assert_eq!((0..10).filter(|&l| m.col_is_zero(l)).count(), 5);
        }
    }

    #[test]
    fn block_trust_reconstructs() {
        let mut rng = stream(5, &[]);
        for _ in 0..50 {
            let (t, blocks) = block_trust(8, 5, &mut rng);
            let mut rebuilt = TrustMatrix::empty(8, 5);
            for b in &blocks {
                assert!((2..=4).contains(&b.cols.len()));
                assert!(b.rows.len() <= 4 && !b.rows.is_empty());
                for i in b.rows.clone() {
                    for &l in &b.cols {
                        rebuilt.set(i, l, true);
                    }
                }
            }
            assert_eq!(rebuilt, t);
        }
    }

    #[test]
    fn masking_keeps_one_label_each() {
        let ds = pool(40, 5, 6);
        let masked = mask_labels(&ds, 0.15, &mut stream(1, &[])).unwrap();
        let mask = masked.label_mask().unwrap();
        let visible = mask.iter().filter(|&&m| m).count();
        assert_eq!(visible, 30);
        let observed = masked.observed_labels().unwrap();
        for l in 0..5 {
            assert!(observed.contains(&Some(l)));
        }
        let tiny = mask_labels(&ds, 0.0, &mut stream(1, &[])).unwrap();
        assert_eq!(tiny.label_mask().unwrap().iter().filter(|&&m| m).count(), 5);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let good = "x1,x2,label\n0.5,1.0,2\n-1,3e-1,0\n";
        let ds = read_csv_from(good.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels().unwrap(), &[2, 0]);
        let nolabel = read_csv_from("a,b\n1,2\n".as_bytes()).unwrap();
        assert!(nolabel.labels().is_none());

        match read_csv_from("x1,label\n1,0\nfoo,1\n".as_bytes()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read_csv_from("x1,x2\n1,2\n1\n".as_bytes()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_csv_from("x,label\n1,-2\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn allocation_conserves_pool(seed in 0u64..500, n in 2usize..12, k in 1usize..5) {
            let pool = pool(60, 6, seed);
            let spec = if k == 4 {
                SkewSpec { dirichlet_alpha: Some(0.5), seed, ..SkewSpec::default() }
            } else {
                SkewSpec { seed, ..SkewSpec::uniform(k) }
            };
            let alloc = allocate_skewed(&pool, n, &spec).unwrap();
            let mut all: Vec<usize> = alloc.indices.iter().flatten().copied().chain(alloc.leftover.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..pool.len()).collect::<Vec<_>>());
            let mut summed = vec![0u64; 6];
            for d in &alloc.devices {
                for (l, c) in count_vector(d, 6).unwrap().as_slice().iter().enumerate() {
                    summed[l] += c;
                }
            }
            let allocated = pool.subset(&alloc.indices.concat()).unwrap();
            prop_assert_eq!(summed, count_vector(&allocated, 6).unwrap().into_inner());
        }

        #[test]
        fn largest_remainder_sums_exactly(total in 0u64..10_000, w in proptest::collection::vec(0.0f64..10.0, 1..12)) {
            prop_assert_eq!(largest_remainder(total, &w).iter().sum::<u64>(), total);
        }
    }
}

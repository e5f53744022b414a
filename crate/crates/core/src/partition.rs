//! Splitting local datasets into partitions of mutually similar points:
//! by label, by distributed PCA + label propagation, or by distributed
//! PCA + K-means.

use rand::Rng;

use crate::data::LocalDataset;
use crate::error::{ensure_len, invalid, Error, Result};
use crate::linalg::{canonicalize_signs, cholesky, sorted_eigen, sq_dist, Matrix, Vector};
use crate::rng::stream;

/// Ridge added to every cluster covariance so that sampling and KL work
/// for tiny clusters.
pub const COV_EPSILON: f64 = 1e-6;

/// Orthonormal `dim x d` basis shared by all devices.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    pub fn new(basis: Matrix) -> Result<Self> {
        if basis.ncols() == 0 || basis.ncols() >= basis.nrows() {
            return Err(invalid("subspace dimension must satisfy 0 < d < D"));
        }
        let gram = basis.transpose() * &basis;
        if (gram - Matrix::identity(basis.ncols(), basis.ncols()))
            .abs()
            .max()
            > 1e-8
        {
            return Err(invalid("subspace columns are not orthonormal"));
        }
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project_point(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|c| self.basis.column(c).iter().zip(x).map(|(b, v)| b * v).sum())
            .collect()
    }

    pub fn project(&self, ds: &LocalDataset) -> Result<Projection> {
        ensure_len(self.ambient_dim(), ds.dim())?;
        Ok(Projection {
            points: ds
                .features()
                .iter()
                .map(|x| self.project_point(x))
                .collect(),
        })
    }

    /// `F F^T x`.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let y = Vector::from_vec(self.project_point(x));
        (&self.basis * y).iter().copied().collect()
    }

    /// Writes the basis as CSV, one row per ambient coordinate.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.dim()).map(|c| format!("pc{c}")).collect();
        w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
        for r in 0..self.ambient_dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|c| self.basis[(r, c)].to_string())
                .collect();
            w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PcaResult {
    pub subspace: Subspace,
    pub eigenvalues: Vec<f64>,
    /// Number of numerically nonzero eigenvalues of the aggregate scatter.
    pub rank: usize,
}

impl PcaResult {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.subspace.dim()
    }
}

/// Two-round distributed PCA. Round one gathers `(count, sum)` from every
/// device to fix the global mean; round two gathers each device's scatter
/// around that mean. The simulated server eigendecomposes the aggregate.
pub fn distributed_pca(datasets: &[LocalDataset], d: usize) -> Result<PcaResult> {
    let first = datasets
        .first()
        .ok_or_else(|| invalid("distributed PCA needs devices"))?;
    let dim = first.dim();
    for ds in datasets {
        ensure_len(dim, ds.dim())?;
    }
    if d == 0 || d >= dim {
        return Err(invalid(format!(
            "PCA target dimension {d} must satisfy 0 < d < {dim}"
        )));
    }

    // round 1
    let contributions: Vec<(usize, Vector)> = datasets
        .iter()
        .map(|ds| {
            let sum = ds.features().iter().fold(Vector::zeros(dim), |acc, x| {
                acc + Vector::from_column_slice(x)
            });
            (ds.len(), sum)
        })
        .collect();
    let total: usize = contributions.iter().map(|c| c.0).sum();
    let mean = contributions
        .iter()
        .fold(Vector::zeros(dim), |acc, c| acc + &c.1)
        / total as f64;

    // round 2
    let scatter = datasets
        .iter()
        .map(|ds| {
            ds.features()
                .iter()
                .fold(Matrix::zeros(dim, dim), |acc, x| {
                    let c = Vector::from_column_slice(x) - &mean;
                    acc + &c * c.transpose()
                })
        })
        .fold(Matrix::zeros(dim, dim), |acc, s| acc + s);

    let (values, vectors) = sorted_eigen(&scatter);
    let mut basis = vectors.columns(0, d).into_owned();
    canonicalize_signs(&mut basis);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values
        .iter()
        .filter(|&&v| v > 1e-10 * top.max(f64::MIN_POSITIVE))
        .count();
    Ok(PcaResult {
        subspace: Subspace::new(basis)?,
        eigenvalues: values[..d].to_vec(),
        rank,
    })
}

/// Partition `l` holds the indices of all points labeled `l`.
pub fn partition_supervised(ds: &LocalDataset, num_labels: usize) -> Result<Vec<Vec<usize>>> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    let mut parts = vec![Vec::new(); num_labels];
    for (i, &l) in labels.iter().enumerate() {
        parts
            .get_mut(l)
            .ok_or_else(|| invalid(format!("label {l} outside 0..{num_labels}")))?
            .push(i);
    }
    Ok(parts)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Label propagation over a symmetrised k-nearest-neighbour graph with RBF
/// weights `exp(-|x-y|^2 / 2 sigma^2)`, sigma the median pairwise distance.
/// Observed labels are clamped. Points no labeled point can reach take the
/// label of their nearest labeled point.
pub fn label_propagation(
    points: &[Vec<f64>],
    labels: &[Option<usize>],
    k_neighbors: usize,
) -> Result<Vec<usize>> {
    ensure_len(points.len(), labels.len())?;
    let mut alphabet: Vec<usize> = labels.iter().flatten().copied().collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    if alphabet.is_empty() {
        return Err(invalid(
            "label propagation needs at least one labeled point",
        ));
    }
    if labels.iter().all(Option::is_some) {
        return Ok(labels.iter().map(|l| l.unwrap()).collect());
    }
    if k_neighbors == 0 {
        return Err(invalid("k_neighbors must be positive"));
    }
    let n = points.len();
    let col = |l: usize| alphabet.binary_search(&l).unwrap();

    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i], &points[j]);
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let mut pairwise = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairwise.push(d2[i * n + j].sqrt());
        }
    }
    let sigma = median(pairwise);
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    let two_s2 = 2.0 * sigma * sigma;

    let k = k_neighbors.min(n - 1);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d2[i * n + a].total_cmp(&d2[i * n + b]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            let w = (-d2[i * n + j] / two_s2).exp();
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    for list in &mut adj {
        list.sort_by_key(|a| a.0);
        list.dedup_by(|a, b| a.0 == b.0);
    }

    let m = alphabet.len();
    let mut f = vec![0.0; n * m];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            f[i * m + col(*l)] = 1.0;
        }
    }
    let mut next = f.clone();
    for _ in 0..1000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            if labels[i].is_some() {
                continue;
            }
            let wsum: f64 = adj[i].iter().map(|e| e.1).sum();
            for c in 0..m {
                let v = if wsum > 0.0 {
                    adj[i].iter().map(|&(j, w)| w * f[j * m + c]).sum::<f64>() / wsum
                } else {
                    0.0
                };
                change = change.max((v - f[i * m + c]).abs());
                next[i * m + c] = v;
            }
        }
        std::mem::swap(&mut f, &mut next);
        if change < 1e-6 {
            break;
        }
    }

    let labeled: Vec<usize> = (0..n).filter(|&i| labels[i].is_some()).collect();
    Ok((0..n)
        .map(|i| match labels[i] {
            Some(l) => l,
            None => {
                let row = &f[i * m..(i + 1) * m];
                let mut best = 0;
                for c in 1..m {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if row[best] > 0.0 {
                    alphabet[best]
                } else {
                    let nearest = labeled
                        .iter()
                        .copied()
                        .min_by(|&a, &b| d2[i * n + a].total_cmp(&d2[i * n + b]))
                        .expect("nonempty");
                    labels[nearest].unwrap()
                }
            }
        })
        .collect())
}

/// Gaussian description of one partition in the shared subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub centroid: Vector,
    pub covariance: Matrix,
    pub count: usize,
}

impl ClusterSummary {
    /// Mean and `1/(n-1)` covariance (zero for a single point) plus the
    /// epsilon ridge. An empty set gives a zero-count summary centred at
    /// the origin.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let pts: Vec<&[f64]> = points.into_iter().collect();
        let n = pts.len();
        let mut centroid = Vector::zeros(dim);
        for p in &pts {
            centroid += Vector::from_column_slice(p);
        }
        if n > 0 {
            centroid /= n as f64;
        }
        let mut scatter = Matrix::zeros(dim, dim);
        for p in &pts {
            let c = Vector::from_column_slice(p) - &centroid;
            scatter += &c * c.transpose();
        }
        let cov = if n > 1 {
            scatter / (n - 1) as f64
        } else {
            scatter
        };
        Self {
            centroid,
            covariance: cov + Matrix::identity(dim, dim) * COV_EPSILON,
            count: n,
        }
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    /// Scatter matrix `sum (x - mu)(x - mu)^T` with the ridge removed.
    pub fn scatter(&self) -> Matrix {
        let dim = self.dim();
        if self.count < 2 {
            return Matrix::zeros(dim, dim);
        }
        (&self.covariance - Matrix::identity(dim, dim) * COV_EPSILON) * (self.count - 1) as f64
    }

    /// Adds raw points to the summary (parallel-variance merge).
    pub fn absorb(&self, points: &[Vec<f64>]) -> Self {
        if points.is_empty() {
            return self.clone();
        }
        let dim = self.dim();
        let extra = ClusterSummary::from_points(points.iter().map(Vec::as_slice), dim);
        let (n1, n2) = (self.count as f64, extra.count as f64);
        let n = n1 + n2;
        let delta = &extra.centroid - &self.centroid;
        let centroid = &self.centroid + &delta * (n2 / n);
        let scatter = self.scatter() + extra.scatter() + &delta * delta.transpose() * (n1 * n2 / n);
        let count = self.count + extra.count;
        let cov = if count > 1 {
            scatter / (count - 1) as f64
        } else {
            scatter
        };
        Self {
            centroid,
            covariance: cov + Matrix::identity(dim, dim) * COV_EPSILON,
            count,
        }
    }

    /// Draws `count` points from N(centroid, covariance).
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let chol = cholesky(&self.covariance)?;
        let l = chol.l();
        let normal = rand_distr::StandardNormal;
        Ok((0..count)
            .map(|_| {
                let z = Vector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(normal));
                (&self.centroid + &l * z).iter().copied().collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub summaries: Vec<ClusterSummary>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective_trace: Vec<f64>,
}

impl KMeans {
    pub fn centroids(&self) -> Vec<Vector> {
        self.summaries.iter().map(|s| s.centroid.clone()).collect()
    }
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(point, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iteration from k-means++ seeding, stopped at an assignment
/// fixpoint or after 300 rounds. A cluster that empties is reseeded with
/// the point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k == 0 {
        return Err(invalid("K-means needs at least one cluster"));
    }
    if n < k {
        return Err(invalid(format!(
            "K-means with {k} clusters needs at least {k} points, got {n}"
        )));
    }
    let dim = points[0].len();
    let mut rng = stream(seed, &[crate::rng::tag("kmeans")]);

    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }

    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..300 {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            objective += d;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            sizes[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..n)
                    .filter(|&i| sizes[assignment[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[assignment[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[assignment[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("some cluster holds two or more points");
                sizes[assignment[far]] -= 1;
                sizes[c] = 1;
                assignment[far] = c;
                centroids[c] = points[far].clone();
            }
        }
    }

    let summaries = (0..k)
        .map(|c| {
            ClusterSummary::from_points(
                points
                    .iter()
                    .zip(&assignment)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| p.as_slice()),
                dim,
            )
        })
        .collect();
    Ok(KMeans {
        assignment,
        summaries,
        objective_trace: trace,
    })
}

/// Regression targets split into `parts` contiguous ranges at the
/// `parts - 1` largest gaps between consecutive sorted values.
pub fn regression_partitions(targets: &[f64], parts: usize) -> Result<Vec<usize>> {
    if parts == 0 || targets.len() < parts {
        return Err(invalid("need at least as many targets as partitions"));
    }
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]).then(a.cmp(&b)));
    let mut gaps: Vec<(usize, f64)> = order
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k, targets[w[1]] - targets[w[0]]))
        .collect();
    gaps.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cuts: Vec<usize> = gaps.iter().take(parts - 1).map(|g| g.0).collect();
    cuts.sort_unstable();
    let mut out = vec![0; targets.len()];
    let mut part = 0;
    for (rank, &i) in order.iter().enumerate() {
        out[i] = part;
        if cuts.get(part) == Some(&rank) {
            part += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BlobModel, BlobSpec};
    use nalgebra::SVD;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, classes: usize, per_class: usize, dim: usize, sep: f64) -> LocalDataset {
        let spec = BlobSpec {
            classes,
            dim,
            separation: sep,
            noise: 1.0,
        };
        BlobModel::new(&spec, seed)
            .unwrap()
            .sample(per_class, &mut stream(seed, &[7]))
            .unwrap()
    }

    /// Pooled PCA computed directly from the covariance of all points.
    fn centralized_basis(all: &[Vec<f64>], d: usize) -> Matrix {
        let dim = all[0].len();
        let n = all.len() as f64;
        let mean: Vec<f64> = (0..dim)
            .map(|c| all.iter().map(|x| x[c]).sum::<f64>() / n)
            .collect();
        let cov = Matrix::from_fn(dim, dim, |a, b| {
            all.iter()
                .map(|x| (x[a] - mean[a]) * (x[b] - mean[b]))
                .sum::<f64>()
                / n
        });
        let (_, vecs) = sorted_eigen(&cov);
        vecs.columns(0, d).into_owned()
    }

    fn max_principal_angle(a: &Matrix, b: &Matrix) -> f64 {
        let svd = SVD::new(a.transpose() * b, false, false);
        svd.singular_values
            .iter()
            .map(|s| s.clamp(-1.0, 1.0).acos())
            .fold(0.0, f64::max)
    }

    #[test]
    fn pca_recovers_embedded_subspace() {
        let mut rng = stream(1, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let ds = LocalDataset::unlabeled(
            (0..200)
                .map(|_| {
                    let (a, b): (f64, f64) = (normal.sample(&mut rng), normal.sample(&mut rng));
                    vec![a, b, a + b, a - 2.0 * b, 0.0]
                })
                .collect(),
        )
        .unwrap();
        let pca = distributed_pca(std::slice::from_ref(&ds), 2).unwrap();
        assert_eq!(pca.rank, 2);
        for x in ds.features() {
            let mean_free = x.clone();
            let r = pca.subspace.reconstruct(&mean_free);
            assert!(crate::linalg::dist(&r, x) < 1e-8);
        }
    }

    #[test]
    fn pca_with_duplicated_devices_matches_single_copy() {
        let ds = blobs(2, 4, 30, 6, 3.0);
        let one = distributed_pca(std::slice::from_ref(&ds), 3).unwrap();
        let two = distributed_pca(&[ds.clone(), ds.clone()], 3).unwrap();
        assert!(max_principal_angle(one.subspace.basis(), two.subspace.basis()) < 1e-6);
        assert!((one.subspace.basis() - two.subspace.basis()).abs().max() < 1e-8);
    }

    #[test]
    fn pca_distributed_matches_pooled() {
        let ds = blobs(3, 5, 40, 8, 4.0);
        let shards: Vec<LocalDataset> = (0..4)
            .map(|s| {
                ds.subset(&(s * 50..(s + 1) * 50).collect::<Vec<_>>())
                    .unwrap()
            })
            .collect();
        let pca = distributed_pca(&shards, 3).unwrap();
        let oracle = centralized_basis(ds.features(), 3);
        assert!(max_principal_angle(pca.subspace.basis(), &oracle) < 1e-6);
    }

    #[test]
    fn pca_errors_and_rank_deficiency() {
        let ds = blobs(4, 2, 10, 3, 2.0);
        assert!(distributed_pca(std::slice::from_ref(&ds), 3).is_err());
        assert!(distributed_pca(&[ds], 0).is_err());
        let flat =
            LocalDataset::unlabeled((0..10).map(|i| vec![i as f64, 0.0, 0.0, 0.0]).collect())
                .unwrap();
        let pca = distributed_pca(&[flat], 2).unwrap();
        assert!(pca.is_rank_deficient());
        let b = pca.subspace.basis();
        assert!(((b.transpose() * b) - Matrix::identity(2, 2)).abs().max() < 1e-8);
    }

    #[test]
    fn supervised_partitions() {
        let labels: Vec<usize> = std::iter::repeat_n(0, 20)
            .chain(std::iter::repeat_n(4, 20))
            .collect();
        let ds = LocalDataset::new(vec![vec![0.0]; 40], Some(labels)).unwrap();
        let parts = partition_supervised(&ds, 5).unwrap();
        assert_eq!(
            parts.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![20, 0, 0, 0, 20]
        );
        let single = LocalDataset::new(vec![vec![0.0]; 3], Some(vec![2, 2, 2])).unwrap();
        assert_eq!(
            partition_supervised(&single, 4)
                .unwrap()
                .iter()
                .filter(|p| !p.is_empty())
                .count(),
            1
        );
        let ds = blobs(5, 6, 13, 2, 1.0);
        let parts = partition_supervised(&ds, 6).unwrap();
        let counts = crate::data::count_vector(&ds, 6).unwrap();
        for l in 0..6 {
            assert_eq!(parts[l].len() as u64, counts[l]);
        }
        assert!(
            partition_supervised(&LocalDataset::unlabeled(vec![vec![1.0]]).unwrap(), 2).is_err()
        );
    }

    #[test]
    fn propagation_identity_when_fully_labeled() {
        let pts = vec![vec![0.0], vec![1.0]];
        let out = label_propagation(&pts, &[Some(1), Some(0)], 1).unwrap();
        assert_eq!(out, vec![1, 0]);
        assert!(label_propagation(&pts, &[None, None], 1).is_err());
    }

    #[test]
    fn propagation_recovers_separated_blobs() {
        let ds = blobs(6, 2, 60, 2, 20.0);
        let truth = ds.labels().unwrap().to_vec();
        let mut observed: Vec<Option<usize>> = vec![None; truth.len()];
        observed[0] = Some(truth[0]);
        observed[60] = Some(truth[60]);
        let out = label_propagation(ds.features(), &observed, 8).unwrap();
        // nearest-seed oracle: on separable blobs every point sits closer to its own seed
        for i in 0..truth.len() {
            let seed = if sq_dist(&ds.features()[i], &ds.features()[0])
                < sq_dist(&ds.features()[i], &ds.features()[60])
            {
                0
            } else {
                60
            };
            assert_eq!(out[i], truth[seed]);
            assert_eq!(out[i], truth[i]);
        }
    }

    #[test]
    fn propagation_accuracy_grows_with_components() {
        let spec = BlobSpec {
            classes: 4,
            dim: 30,
            separation: 6.0,
            noise: 1.5,
        };
        let model = BlobModel::new(&spec, 8).unwrap();
        let ds = model.sample(50, &mut stream(8, &[1])).unwrap();
        let truth = ds.labels().unwrap().to_vec();
        let masked = crate::data::mask_labels(&ds, 0.1, &mut stream(8, &[2])).unwrap();
        let observed = masked.observed_labels().unwrap();
        let acc = |d: usize| {
            let pca = distributed_pca(std::slice::from_ref(&ds), d).unwrap();
            let proj = pca.subspace.project(&ds).unwrap();
            let out = label_propagation(&proj.points, &observed, 10).unwrap();
            out.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
        };
        let (low, high) = (acc(1), acc(3));
        assert!(high >= low, "1 component: {low}, 3 components: {high}");
        assert!(high > 0.9);
    }

    #[test]
    fn kmeans_single_cluster_is_sample_moments() {
        let ds = blobs(9, 3, 20, 3, 2.0);
        let km = kmeans(ds.features(), 1, 0).unwrap();
        let s = &km.summaries[0];
        let n = ds.len() as f64;
        for c in 0..3 {
            let mean = ds.features().iter().map(|x| x[c]).sum::<f64>() / n;
            assert!((s.centroid[c] - mean).abs() < 1e-12);
        }
        let m = &s.centroid;
        let cov01 = ds
            .features()
            .iter()
            .map(|x| (x[0] - m[0]) * (x[1] - m[1]))
            .sum::<f64>()
            / (n - 1.0);
        assert!((s.covariance[(0, 1)] - cov01).abs() < 1e-10);
        assert_eq!(s.count, ds.len());
    }

    #[test]
    fn kmeans_finds_two_blobs() {
        let spec = BlobSpec {
            classes: 2,
            dim: 2,
            separation: 5.0,
            noise: 0.5,
        };
        let model = BlobModel::new(&spec, 10).unwrap();
        let ds = model.sample(100, &mut stream(10, &[1])).unwrap();
        let km = kmeans(ds.features(), 2, 3).unwrap();
        let separation = crate::linalg::dist(&model.means[0], &model.means[1]);
        for mean in &model.means {
            let best = km
                .summaries
                .iter()
                .map(|s| crate::linalg::dist(s.centroid.as_slice(), mean))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1 * separation);
        }
        assert!(kmeans(&ds.features()[..1], 2, 0).is_err());
    }

    #[test]
    fn kmeans_reseeds_empty_clusters() {
        // identical points make every seed coincide; the reseed rule must
        // still leave every cluster nonempty
        let mut pts = vec![vec![0.0, 0.0]; 6];
        pts.push(vec![10.0, 0.0]);
        let km = kmeans(&pts, 3, 1).unwrap();
        assert!(km.summaries.iter().all(|s| s.count > 0));
        assert_eq!(km.summaries.iter().map(|s| s.count).sum::<usize>(), 7);
    }

    #[test]
    fn summary_absorb_matches_recompute() {
        let ds = blobs(11, 2, 25, 3, 2.0);
        let (a, b) = ds.features().split_at(20);
        let merged = ClusterSummary::from_points(a.iter().map(Vec::as_slice), 3).absorb(b);
        let direct = ClusterSummary::from_points(ds.features().iter().map(Vec::as_slice), 3);
        assert_eq!(merged.count, direct.count);
        assert!((merged.centroid - direct.centroid).abs().max() < 1e-12);
        assert!((merged.covariance - direct.covariance).abs().max() < 1e-10);
    }

    #[test]
    fn regression_split_at_largest_gaps() {
        let targets = [0.1, 5.0, 0.2, 9.0, 5.1, 0.0];
        assert_eq!(
            regression_partitions(&targets, 3).unwrap(),
            vec![0, 1, 0, 2, 1, 0]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projection_never_grows_norm(seed in 0u64..200) {
            let ds = blobs(seed, 3, 10, 5, 2.0);
            let pca = distributed_pca(std::slice::from_ref(&ds), 2).unwrap();
            for x in ds.features() {
                let r = pca.subspace.reconstruct(x);
                let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(nr <= nx + 1e-8);
            }
        }

        #[test]
        fn kmeans_objective_nonincreasing(seed in 0u64..200, k in 1usize..6) {
            let ds = blobs(seed, 4, 15, 3, 2.0);
            let km = kmeans(ds.features(), k, seed).unwrap();
            for w in km.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert_eq!(km.summaries.iter().map(|s| s.count).sum::<usize>(), ds.len());
            for s in &km.summaries {
                prop_assert!((&s.covariance - s.covariance.transpose()).abs().max() < 1e-10);
                let (vals, _) = sorted_eigen(&s.covariance);
                prop_assert!(vals.iter().all(|&v| v >= -1e-10));
            }
        }

        #[test]
        fn propagation_clamps_and_stays_in_alphabet(seed in 0u64..200) {
            let ds = blobs(seed, 3, 12, 2, 3.0);
            let masked = crate::data::mask_labels(&ds, 0.2, &mut stream(seed, &[3])).unwrap();
            let observed = masked.observed_labels().unwrap();
            let out = label_propagation(ds.features(), &observed, 5).unwrap();
            let alphabet: std::collections::BTreeSet<usize> = observed.iter().flatten().copied().collect();
            for (o, l) in observed.iter().zip(&out) {
                if let Some(o) = o {
                    prop_assert_eq!(o, l);
                }
                prop_assert!(alphabet.contains(l));
            }
        }
    }
}

//! Thin helpers over `nalgebra` for the dense work the simulator needs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn cholesky(m: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Numeric("matrix is not positive-definite".into()))
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue; ties
/// keep the solver's column order.
pub fn sorted_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn canonicalize_signs(m: &mut Matrix) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() + 1e-12 {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn trace(m: &Matrix) -> f64 {
    m.diagonal().sum()
}

//! Smallest-eigenvector embedding of the Laplacian, with a deterministic
//! sign convention, and the default rule for how many eigenvectors to keep.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Rows of `q` embed the pool entities; `eigenvalues` are the matching
/// ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    pub q: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Default number of eigenvectors: ⌈√n⌉ clamped to [2, min(8, n)].
pub fn choose_m(pool_size: usize) -> usize {
    if pool_size == 0 {
        return 0;
    }
    let root = (pool_size as f64).sqrt().ceil() as usize;
    root.max(2).min(8).min(pool_size)
}

/// Eigenpairs of a symmetric matrix with the `m` smallest eigenvalues.
///
/// Eigenvalues are sorted ascending (ties kept in decomposition order) and
/// each eigenvector's first component above 1e-12 in magnitude is made
/// positive, so repeated runs produce identical matrices.
pub fn smallest_eigenvectors(l: &DMatrix<f64>, m: usize) -> Result<SpectralEmbedding> {
    let n = l.nrows();
    if m == 0 || m > n {
        return Err(Error::Parameter(format!(
            "requested {m} eigenvectors from a {n}×{n} matrix; need 1 ≤ m ≤ {n}"
        )));
    }
    let eigen = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[a]
            .partial_cmp(&eigen.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut q = DMatrix::zeros(n, m);
    let mut eigenvalues = Vec::with_capacity(m);
    for (col, &src) in order.iter().take(m).enumerate() {
        eigenvalues.push(eigen.eigenvalues[src]);
        let vector = eigen.eigenvectors.column(src);
        let flip = vector
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map_or(1.0, |v| if *v < 0.0 { -1.0 } else { 1.0 });
        for row in 0..n {
            q[(row, col)] = vector[row] * flip;
        }
    }
    Ok(SpectralEmbedding { q, eigenvalues })
}

//! Gauss-Laguerre nodes and weights via the Golub-Welsch eigenvalue method.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

/// Nodes and weights of the n-point rule for the weight `e^{-x}` on
/// `[0, inf)`, sorted by node. Cached per `n`: the eigendecomposition is much
/// more expensive than any single integrand sweep.
pub(crate) fn nodes_and_weights(n: usize) -> Arc<[(f64, f64)]> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<[(f64, f64)]>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return Arc::clone(rule);
    }
    let rule: Arc<[(f64, f64)]> = compute(n).into();
    Arc::clone(
        cache
            .lock()
            .unwrap()
            .entry(n)
            .or_insert(rule),
    )
}

/// Jacobi matrix of the monic Laguerre recurrence: diagonal `2i + 1`,
/// off-diagonal `i`. Its eigenvalues are the nodes; the squared first
/// components of the normalized eigenvectors (times the zeroth moment, which
/// is 1 here) are the weights.
fn compute(n: usize) -> Vec<(f64, f64)> {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = (2 * i + 1) as f64;
    }
    for i in 1..n {
        jacobi[(i, i - 1)] = i as f64;
        jacobi[(i - 1, i)] = i as f64;
    }
    let eig = jacobi.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let v0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

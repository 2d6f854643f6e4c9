use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Largest sample count accepted by the exact assignment solver.
pub const W2_SAMPLE_CAP: usize = 512;

/// Minimum-cost perfect matching on a square cost matrix (row-major), as
/// `assignment[row] = col`. Shortest augmenting paths with potentials, O(n³).
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check(a: &Tensor, b: &Tensor) -> Result<usize> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!("W2 needs equal sample counts, got {} and {}", a.rows(), b.rows())));
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch { expected: a.cols(), got: b.cols() });
    }
    if a.rows() == 0 {
        return Err(Error::Shape("W2 needs at least one sample".into()));
    }
    if a.rows() > W2_SAMPLE_CAP {
        return Err(Error::SampleCap { m: a.rows(), cap: W2_SAMPLE_CAP });
    }
    Ok(a.rows())
}

/// Exact assignment cost over the squared-distance matrix, divided by M.
pub fn w2_squared_hungarian(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = check(a, b)?;
    let mut cost = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            cost[i * m + j] = sq_dist(a.row(i), b.row(j));
        }
    }
    let assign = hungarian(&cost, m);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok(total / m as f64)
}

/// Sorted pairing, optimal for one-dimensional samples.
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Squared 2-Wasserstein distance between two equal-size empirical
/// distributions (`M x k` each).
pub fn w2_squared_empirical(a: &Tensor, b: &Tensor) -> Result<f64> {
    check(a, b)?;
    if a.cols() == 1 {
        return Ok(w2_squared_sorted(a.data(), b.data()));
    }
    w2_squared_hungarian(a, b)
}

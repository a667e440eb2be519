//! OSPA distance, PRMSE and cardinality statistics.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaParams {
    pub p: f64,
    pub c: f64,
}

impl OspaParams {
    pub fn new(p: f64, c: f64) -> Result<Self> {
        if !(p >= 1.0) || !(c > 0.0) {
            return Err(Error::InvalidParameter("OSPA requires p >= 1 and c > 0"));
        }
        Ok(Self { p, c })
    }
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { p: 2.0, c: 600.0 }
    }
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the column of each row and the total cost.
pub fn assignment(cost: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::Dimension("assignment needs rows <= cols"));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::InvalidParameter("assignment cost must be finite"));
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            cols[owner[j] - 1] = j - 1;
        }
    }
    let total = cols.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((cols, total))
}

fn dim_check(x: &[DVector<f64>], y: &[DVector<f64>]) -> Result<()> {
    let d = x.first().or(y.first()).map(|v| v.len());
    if x.iter().chain(y).any(|v| Some(v.len()) != d) {
        return Err(Error::Dimension("OSPA points of unequal dimension"));
    }
    Ok(())
}

/// Optimal subpattern assignment distance with Euclidean base distance.
pub fn ospa(x: &[DVector<f64>], y: &[DVector<f64>], params: &OspaParams) -> Result<f64> {
    dim_check(x, y)?;
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let n = large.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (p, c) = (params.p, params.c);
    let cost = DMatrix::from_fn(small.len(), n, |i, j| math::powf((&small[i] - &large[j]).norm().min(c), p));
    let (_, total) = assignment(&cost)?;
    let penalty = math::powf(c, p) * (n - small.len()) as f64;
    Ok(math::powf(((total + penalty) / n as f64).max(0.0), 1.0 / p).min(c))
}

/// `[x, y]` from a `[x, vx, y, vy]` state.
pub fn position(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![x[0], x[2]])
}

/// Root mean square position error over paired `(estimate, truth)` states.
pub fn prmse(pairs: &[(DVector<f64>, DVector<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no estimate-truth pairs"));
    }
    let sq: f64 = pairs.iter().map(|(e, t)| (position(e) - position(t)).norm_squared()).sum();
    Ok(math::sqrt(sq / pairs.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardinalityStat {
    pub mean: f64,
    pub std: f64,
}

/// Per-step mean and population std of estimated cardinality across runs.
pub fn cardinality_stats(runs: &[Vec<usize>]) -> Result<Vec<CardinalityStat>> {
    let steps = runs.first().map_or(0, |r| r.len());
    if runs.iter().any(|r| r.len() != steps) {
        return Err(Error::Dimension("runs of unequal length"));
    }
    let n = runs.len() as f64;
    Ok((0..steps)
        .map(|k| {
            let mean = runs.iter().map(|r| r[k] as f64).sum::<f64>() / n;
            let var = runs.iter().map(|r| (r[k] as f64 - mean) * (r[k] as f64 - mean)).sum::<f64>() / n;
            CardinalityStat { mean, std: math::sqrt(var) }
        })
        .collect())
}

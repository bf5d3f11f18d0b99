//! Wasserstein distances between empirical measures with uniform weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{GroundMetric, PhasePoint};

/// Largest support size accepted by the exact solver.
pub const MAX_SUPPORT: usize = 2048;
/// Default number of bootstrap resamples.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("supports have different sizes: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("support size {0} exceeds {MAX_SUPPORT}; subsample the measures first")]
    TooLarge(usize),
    #[error("empty support")]
    Empty,
    #[error("p must be 1 or 2, got {0}")]
    Exponent(u32),
    #[error("expected scalar samples (dimension 1), got dimension {0}")]
    NotScalar(usize),
    #[error("dump times differ at index {index}: {a} vs {b}")]
    Misaligned { index: usize, a: f64, b: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub support: Vec<PhasePoint>,
}

impl EmpiricalMeasure {
    pub fn new(support: Vec<PhasePoint>) -> Result<Self, TransportError> {
        if support.is_empty() {
            return Err(TransportError::Empty);
        }
        Ok(EmpiricalMeasure { support })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Minimum-cost perfect matching of an `n x n` row-major cost matrix by
/// shortest augmenting paths with dual potentials. Returns the column
/// assigned to every row and the total cost.
pub fn assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut rows = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            rows[p[j] - 1] = j - 1;
        }
    }
    let total = rows.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    (rows, total)
}

fn check_p(p: u32) -> Result<(), TransportError> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(TransportError::Exponent(p))
    }
}

/// Exact `W_p` between two uniform measures of size `n`, with pair cost
/// `dist(i, j)`.
pub fn wasserstein_with<F: Fn(usize, usize) -> f64>(n: usize, dist: F, p: u32) -> Result<f64, TransportError> {
    check_p(p)?;
    if n == 0 {
        return Err(TransportError::Empty);
    }
    if n > MAX_SUPPORT {
        return Err(TransportError::TooLarge(n));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = dist(i, j).powi(p as i32);
        }
    }
    let (_, total) = assignment(&cost, n);
    Ok((total / n as f64).max(0.0).powf(1.0 / p as f64))
}

pub fn wasserstein_exact(metric: &GroundMetric, a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: u32) -> Result<f64, TransportError> {
    if a.len() != b.len() {
        return Err(TransportError::SizeMismatch(a.len(), b.len()));
    }
    let (sa, sb) = (&a.support, &b.support);
    wasserstein_with(a.len(), |i, j| metric.dist_slices(&sa[i].x, &sa[i].y, &sb[j].x, &sb[j].y), p)
}

/// `W_p` between two scalar samples by matching sorted values.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64], p: u32) -> Result<f64, TransportError> {
    check_p(p)?;
    if a.len() != b.len() {
        return Err(TransportError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(TransportError::Empty);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powi(p as i32)).sum();
    Ok((s / a.len() as f64).powf(1.0 / p as f64))
}

/// `W_p` between the position marginals of two measures on `R^{2}` (d = 1).
pub fn wasserstein_1d_positions(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: u32) -> Result<f64, TransportError> {
    for m in [a, b] {
        if m.support[0].dim() != 1 {
            return Err(TransportError::NotScalar(m.support[0].dim()));
        }
    }
    let xa: Vec<f64> = a.support.iter().map(|q| q.x[0]).collect();
    let xb: Vec<f64> = b.support.iter().map(|q| q.x[0]).collect();
    wasserstein_1d_sorted(&xa, &xb, p)
}

/// An estimate with its bootstrap standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub w: f64,
    pub w_se: f64,
}

/// Exact `W_p` with a bootstrap standard error from `resamples` independent
/// resamplings of both supports.
pub fn wasserstein_bootstrap<F: Fn(usize, usize) -> f64>(n: usize, dist: F, p: u32, resamples: usize, seed: u64) -> Result<(f64, f64), TransportError> {
    let w = wasserstein_with(n, &dist, p)?;
    if resamples < 2 {
        return Ok((w, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(resamples);
    let mut ia = vec![0usize; n];
    let mut ib = vec![0usize; n];
    for _ in 0..resamples {
        ia.iter_mut().for_each(|k| *k = rng.gen_range(0..n));
        ib.iter_mut().for_each(|k| *k = rng.gen_range(0..n));
        vals.push(wasserstein_with(n, |i, j| dist(ia[i], ib[j]), p)?);
    }
    let m = vals.iter().sum::<f64>() / resamples as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (resamples - 1) as f64;
    Ok((w, var.sqrt()))
}

/// Exact `W_p` with a bootstrap standard error for coupled samples: sample
/// `i` of the first measure is paired with sample `i` of the second, and the
/// pairs are resampled together.
pub fn wasserstein_bootstrap_paired<F: Fn(usize, usize) -> f64>(
    n: usize,
    dist: F,
    p: u32,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), TransportError> {
    let w = wasserstein_with(n, &dist, p)?;
    if resamples < 2 {
        return Ok((w, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        idx.iter_mut().for_each(|k| *k = rng.gen_range(0..n));
        vals.push(wasserstein_with(n, |i, j| dist(idx[i], idx[j]), p)?);
    }
    let m = vals.iter().sum::<f64>() / resamples as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (resamples - 1) as f64;
    Ok((w, var.sqrt()))
}

/// A dump of one run at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub points: Vec<PhasePoint>,
}

/// Per-time Wasserstein estimates between two runs with aligned dump times.
pub fn distance_curve(
    run_a: &[Snapshot],
    run_b: &[Snapshot],
    metric: &GroundMetric,
    p: u32,
    resamples: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, TransportError> {
    if run_a.len() != run_b.len() {
        return Err(TransportError::SizeMismatch(run_a.len(), run_b.len()));
    }
    let mut out = Vec::with_capacity(run_a.len());
    for (index, (a, b)) in run_a.iter().zip(run_b).enumerate() {
        if (a.t - b.t).abs() > 1e-9 * (1.0 + a.t.abs()) {
            return Err(TransportError::Misaligned { index, a: a.t, b: b.t });
        }
        if a.points.len() != b.points.len() {
            return Err(TransportError::SizeMismatch(a.points.len(), b.points.len()));
        }
        let (pa, pb) = (&a.points, &b.points);
        let (w, w_se) = wasserstein_bootstrap(
            pa.len(),
            |i, j| metric.dist_slices(&pa[i].x, &pa[i].y, &pb[j].x, &pb[j].y),
            p,
            resamples,
            seed.wrapping_add(index as u64),
        )?;
        out.push(CurvePoint { t: a.t, w, w_se });
    }
    Ok(out)
}

pub const CURVE_CSV_HEADER: &str = "t,w,w_se";

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_CSV_HEADER);
    s.push('\n');
    for c in curve {
        s.push_str(&format!("{},{},{}\n", c.t, c.w, c.w_se));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_small_instance() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (rows, total) = assignment(&cost, 3);
        assert_eq!(total, 5.0);
        assert_eq!(rows, vec![1, 0, 2]);
    }

    #[test]
    fn shift_by_one() {
        assert_eq!(wasserstein_1d_sorted(&[0.0, 1.0], &[1.0, 2.0], 1).unwrap(), 1.0);
        assert_eq!(wasserstein_1d_sorted(&[3.0, 1.0], &[1.0, 3.0], 2).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(wasserstein_1d_sorted(&[0.0], &[1.0, 2.0], 1), Err(TransportError::SizeMismatch(1, 2)));
        assert_eq!(wasserstein_with(3, |_, _| 0.0, 3), Err(TransportError::Exponent(3)));
        assert_eq!(wasserstein_with(MAX_SUPPORT + 1, |_, _| 0.0, 1), Err(TransportError::TooLarge(MAX_SUPPORT + 1)));
    }
}

//! Suprema of the ratio `r_s / r_l` (or its inverse) over phase-space
//! directions.
//!
//! Both `Delta = r_s - eps r_l` and `r_s` are positively homogeneous of
//! degree one, so the suprema over the ellipsoid `{r_l^2 <= R}` and over the
//! sublevel set `{Delta <= D}` reduce to suprema of `r_s / r_l` and
//! `r_l / r_s` over the unit sphere of `R^{2d}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::metrics::{r_s_norm, TwistedQuadratic};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Supremum {
    /// Largest value attained at a feasible point (a lower bound).
    pub value: f64,
    /// Estimated gap to the true supremum from the grid resolution.
    pub error_bar: f64,
    pub optimizer_value: f64,
    pub grid_value: Option<f64>,
    pub converged: bool,
}

impl Supremum {
    pub fn exact(value: f64) -> Self {
        Supremum { value, error_bar: 0.0, optimizer_value: value, grid_value: None, converged: true }
    }

    pub fn scaled(self, s: f64) -> Self {
        Supremum {
            value: self.value * s,
            error_bar: self.error_bar * s.abs(),
            optimizer_value: self.optimizer_value * s,
            grid_value: self.grid_value.map(|g| g * s),
            converged: self.converged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupOptions {
    pub starts: usize,
    pub max_iter: usize,
    /// Run the exhaustive direction grid in dimension `d <= 2`.
    pub grid_check: bool,
    /// Grid points per angle (`d = 1` uses `grid_points^2` angles).
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for SupOptions {
    fn default() -> Self {
        SupOptions { starts: 64, max_iter: 400, grid_check: true, grid_points: 400, seed: 0x5eed }
    }
}

/// Which ratio to maximise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ratio {
    /// `r_s / r_l`
    SmallOverLarge,
    /// `r_l / r_s`
    LargeOverSmall,
}

pub struct RatioProblem<'a> {
    pub r_l: &'a TwistedQuadratic,
    pub alpha: f64,
    pub ratio: Ratio,
}

impl RatioProblem<'_> {
    fn dim(&self) -> usize {
        self.r_l.k.dim()
    }

    /// Objective value and gradient of `log(ratio)` at `v = (z, w)`.
    fn eval(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim();
        let (z, w) = v.split_at(d);
        let gamma = self.r_l.gamma;
        let rs = r_s_norm(self.alpha, gamma, z, w);
        let rl = self.r_l.norm(z, w);
        let sign = match self.ratio {
            Ratio::SmallOverLarge => 1.0,
            Ratio::LargeOverSmall => -1.0,
        };
        if let Some(g) = grad {
            let (gz, gw) = g.split_at_mut(d);
            self.r_l.squared_gradient(z, w, gz, gw);
            // d log r_l = grad(r_l^2) / (2 r_l^2)
            let s = -0.5 / (rl * rl);
            gz.iter_mut().chain(gw.iter_mut()).for_each(|x| *x *= s);
            let nz = crate::linalg::norm(z);
            let q: Vec<f64> = z.iter().zip(w).map(|(a, b)| a + b / gamma).collect();
            let nq = crate::linalg::norm(&q);
            for i in 0..d {
                let dz = if nz > 0.0 { self.alpha * z[i] / nz } else { 0.0 };
                let dq = if nq > 0.0 { q[i] / nq } else { 0.0 };
                gz[i] += (dz + dq) / rs;
                gw[i] += dq / (gamma * rs);
            }
            g.iter_mut().for_each(|x| *x *= sign);
        }
        sign * (rs.ln() - rl.ln())
    }

    pub fn ratio_at(&self, v: &[f64]) -> f64 {
        let d = self.dim();
        let (z, w) = v.split_at(d);
        let rs = r_s_norm(self.alpha, self.r_l.gamma, z, w);
        let rl = self.r_l.norm(z, w);
        match self.ratio {
            Ratio::SmallOverLarge => rs / rl,
            Ratio::LargeOverSmall => rl / rs,
        }
    }

    fn ascend(&self, mut v: Vec<f64>, max_iter: usize) -> (f64, bool) {
        normalize(&mut v);
        let n = v.len();
        let mut g = vec![0.0; n];
        let mut f = self.eval(&v, Some(&mut g));
        let mut step = 0.5;
        let mut cand = vec![0.0; n];
        for _ in 0..max_iter {
            let radial: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            g.iter_mut().zip(&v).for_each(|(gi, vi)| *gi -= radial * vi);
            let gn2: f64 = g.iter().map(|a| a * a).sum();
            if gn2 < 1e-24 {
                return (f, true);
            }
            let mut accepted = false;
            for _ in 0..60 {
                for i in 0..n {
                    cand[i] = v[i] + step * g[i];
                }
                normalize(&mut cand);
                let fc = self.eval(&cand, None);
                if fc >= f + 1e-4 * step * gn2 {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // stuck at a kink or at machine precision
                return (f, true);
            }
            v.copy_from_slice(&cand);
            let f_new = self.eval(&v, Some(&mut g));
            let gain = f_new - f;
            f = f_new;
            step = (step * 2.0).min(4.0);
            if gain < 1e-15 {
                return (f, true);
            }
        }
        (f, false)
    }

    fn structured_starts(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let gamma = self.r_l.gamma;
        let mut out = Vec::new();
        for i in 0..d {
            let mut a = vec![0.0; 2 * d];
            a[i] = 1.0;
            out.push(a.clone());
            let mut b = vec![0.0; 2 * d];
            b[d + i] = 1.0;
            out.push(b);
            // q = 0
            a[d + i] = -gamma;
            out.push(a);
        }
        out
    }

    /// Multistart projected gradient ascent on the unit sphere, with an
    /// exhaustive direction grid for `d <= 2`.
    pub fn supremum(&self, opts: &SupOptions) -> Supremum {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut starts = self.structured_starts();
        while starts.len() < opts.starts.max(1) + 3 * d {
            let v: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().any(|a| *a != 0.0) {
                starts.push(v);
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut converged = true;
        for s in starts {
            let (f, c) = self.ascend(s, opts.max_iter);
            if f > best {
                best = f;
            }
            converged &= c;
        }
        // `eval` already returns the log of the requested ratio
        let opt_value = best.exp();
        let grid = if opts.grid_check && d <= 2 { Some(self.grid(opts.grid_points)) } else { None };
        match grid {
            Some((gv, slack)) => {
                let value = opt_value.max(gv);
                let mut error_bar = slack.max((gv - opt_value).abs());
                if !converged {
                    error_bar *= 2.0;
                }
                Supremum { value, error_bar, optimizer_value: opt_value, grid_value: Some(gv), converged }
            }
            None => Supremum { value: opt_value, error_bar: 0.0, optimizer_value: opt_value, grid_value: None, converged },
        }
    }

    /// Grid maximum over directions and a resolution slack: the larger jump
    /// from the best grid value to its neighbours along the finest angle.
    fn grid(&self, points: usize) -> (f64, f64) {
        let d = self.dim();
        let pi = std::f64::consts::PI;
        let mut best = f64::NEG_INFINITY;
        let mut slack = 0.0f64;
        // scans one row of values and updates the best value and its slack
        let mut scan = |row: &[f64]| {
            for (j, &r) in row.iter().enumerate() {
                if r > best {
                    best = r;
                    let left = if j > 0 { (r - row[j - 1]).abs() } else { 0.0 };
                    let right = if j + 1 < row.len() { (r - row[j + 1]).abs() } else { 0.0 };
                    slack = left.max(right);
                }
            }
        };
        if d == 1 {
            let n = points * points;
            let row: Vec<f64> = (0..=n)
                .map(|j| {
                    let th = pi * j as f64 / n as f64;
                    self.ratio_at(&[th.cos(), th.sin()])
                })
                .collect();
            scan(&row);
        } else {
            // hyperspherical angles on S^3, half sphere by symmetry v -> -v
            let n = (points / 8).max(16);
            let mut row = Vec::with_capacity(2 * n + 1);
            for a in 0..=n {
                let t1 = pi * a as f64 / n as f64;
                for b in 0..=n {
                    let t2 = pi * b as f64 / n as f64;
                    row.clear();
                    for c in 0..=2 * n {
                        let t3 = pi * c as f64 / n as f64;
                        let v = [
                            t1.cos(),
                            t1.sin() * t2.cos(),
                            t1.sin() * t2.sin() * t3.cos(),
                            t1.sin() * t2.sin() * t3.sin(),
                        ];
                        row.push(self.ratio_at(&v));
                    }
                    scan(&row);
                }
            }
        }
        (best, slack)
    }
}

fn normalize(v: &mut [f64]) {
    let n = crate::linalg::norm(v);
    v.iter_mut().for_each(|a| *a /= n);
}

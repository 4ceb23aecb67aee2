//! Uniform real grids, trapezoid quadrature and grid convolutions.
//!
//! Every density, kernel estimate and deconvolution output in the crate lives on a
//! [`Grid`], so integrals and L² errors share one quadrature rule.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `x_min = x_0 < x_1 < ... < x_{n-1} = x_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Config(format!(
                "grid needs n_points >= 2 and x_max > x_min, got [{x_min}, {x_max}] x {n_points}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Symmetric grid `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Trapezoid weights `h/2, h, ..., h, h/2`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n_points];
        w[0] = 0.5 * h;
        w[self.n_points - 1] = 0.5 * h;
        w
    }

    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        let h = self.spacing();
        let inner: f64 = values.iter().sum();
        h * (inner - 0.5 * (values[0] + values[values.len() - 1]))
    }

    /// Cumulative trapezoid integral, starting at 0 at `x_min`.
    pub fn cumulative(&self, values: &[f64]) -> Vec<f64> {
        let h = self.spacing();
        let mut out = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Linear interpolation of grid values at `x`; `None` outside the grid.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let h = self.spacing();
        let s = (x - self.x_min) / h;
        let i = (s.floor() as usize).min(self.n_points - 2);
        let t = s - i as f64;
        Some(values[i] * (1.0 - t) + values[i + 1] * t)
    }

    /// Index of the grid point nearest to `x` (clamped).
    pub fn nearest_index(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.spacing()).round();
        s.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n_points == other.n_points
            && (self.x_min - other.x_min).abs() <= 1e-12 * (1.0 + self.x_min.abs())
            && (self.x_max - other.x_max).abs() <= 1e-12 * (1.0 + self.x_max.abs())
    }
}

/// Real function sampled on a [`Grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.n_points
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points],
        }
    }

    pub fn at(&self, x: f64) -> Option<f64> {
        self.grid.interpolate(&self.values, x)
    }

    pub fn integral(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        self.grid.trapezoid(&sq).max(0.0).sqrt()
    }

    /// L² distance to `other` on the common grid.
    pub fn l2_distance(&self, other: &GridFunction) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("L2 distance between different grids".into()));
        }
        let sq: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        Ok(self.grid.trapezoid(&sq).max(0.0).sqrt())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// A kernel tabulated at every grid offset `k h`, `|k| < n`, so that
/// `(K ⋆ g)(x_i) = Σ_j w_j K(x_i - x_j) g(x_j)` becomes a Toeplitz product.
#[derive(Clone)]
pub struct ToeplitzKernel {
    n: usize,
    // table[k + n - 1] = K(k h)
    table: Vec<f64>,
    fft: Option<FftPlan>,
}

#[derive(Clone)]
struct FftPlan {
    spectrum: Arc<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

const FFT_THRESHOLD: usize = 192;

impl ToeplitzKernel {
    pub fn new(grid: &Grid, kernel: impl Fn(f64) -> f64) -> Self {
        let n = grid.n_points;
        let h = grid.spacing();
        let table: Vec<f64> = (0..2 * n - 1)
            .map(|idx| kernel((idx as f64 - (n - 1) as f64) * h))
            .collect();
        let mut out = Self {
            n,
            table,
            fft: None,
        };
        if n >= FFT_THRESHOLD {
            out.prepare_fft();
        }
        out
    }

    fn prepare_fft(&mut self) {
        let len = (2 * self.n - 1).next_power_of_two();
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        // circular layout: offset k >= 0 at index k, offset k < 0 at len + k
        for (idx, &v) in self.table.iter().enumerate() {
            let k = idx as isize - (self.n as isize - 1);
            let pos = if k >= 0 { k as usize } else { (len as isize + k) as usize };
            buf[pos] = Complex64::new(v, 0.0);
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        forward.process(&mut buf);
        self.fft = Some(FftPlan {
            spectrum: Arc::new(buf),
            forward,
            inverse,
        });
    }

    pub fn at_offset(&self, k: isize) -> f64 {
        self.table[(k + self.n as isize - 1) as usize]
    }

    /// Trapezoid-rule convolution with `g` on the grid the kernel was built for.
    pub fn convolve(&self, grid: &Grid, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.n);
        let weighted: Vec<f64> = grid
            .trapezoid_weights()
            .iter()
            .zip(g)
            .map(|(w, v)| w * v)
            .collect();
        self.convolve_weighted(&weighted)
    }

    /// `Σ_j K(x_i - x_j) m_j` for point masses `m_j` sitting on the nodes.
    pub fn convolve_weighted(&self, weighted: &[f64]) -> Vec<f64> {
        match &self.fft {
            Some(plan) => self.convolve_fft(plan, weighted),
            None => self.convolve_direct(weighted),
        }
    }

    /// Reference O(n²) quadrature.
    pub fn convolve_direct(&self, weighted: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                weighted
                    .iter()
                    .enumerate()
                    .map(|(j, &wg)| self.table[i + n - 1 - j] * wg)
                    .sum()
            })
            .collect()
    }

    fn convolve_fft(&self, plan: &FftPlan, weighted: &[f64]) -> Vec<f64> {
        let len = plan.spectrum.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (b, &v) in buf.iter_mut().zip(weighted) {
            *b = Complex64::new(v, 0.0);
        }
        plan.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(plan.spectrum.iter()) {
            *b *= s;
        }
        plan.inverse.process(&mut buf);
        let scale = 1.0 / len as f64;
        buf[..self.n].iter().map(|c| c.re * scale).collect()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton iteration on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let legendre = |x: f64| {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            (p1, nf * (x * p1 - p0) / (x * x - 1.0))
        };
        for _ in 0..100 {
            let (p, dp) = legendre(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre quadrature of `f` over `[a, b]` with `panels` panels.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (nodes, weights) = rule;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        total += nodes
            .iter()
            .zip(weights)
            .map(|(t, w)| w * f(mid + half * t))
            .sum::<f64>()
            * half;
    }
    total
}

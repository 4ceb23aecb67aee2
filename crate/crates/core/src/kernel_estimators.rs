//! Higher-order kernels, kernel estimates of `π`, `π'` and `l = π'/π`, and the
//! tuning constants (bandwidths, threshold, window, regularization floor).

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, integrate_gl, Grid, GridFunction};
use crate::particle_sim::effective_sample_size;
use crate::potentials::{PotentialModel, Smoothness};

pub const SUPPORTED_ORDERS: [usize; 4] = [2, 4, 6, 8];

/// `K_m(x) = P_m(x) φ(x)` with `P_m` even of degree `m - 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighOrderKernel {
    pub order_m: usize,
    /// Coefficients of `x^0, x^2, ..., x^{m-2}`.
    pub even_coefficients: Vec<f64>,
    /// `|K(x)| + |K'(x)| < 1e-17` beyond this radius.
    pub support_radius: f64,
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `E[Z^{2j}] = (2j - 1)!!` for a standard normal `Z`.
fn gaussian_even_moment(j: usize) -> f64 {
    (1..=j).map(|k| (2 * k - 1) as f64).product()
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn make_kernel(m: usize) -> Result<HighOrderKernel> {
    if !SUPPORTED_ORDERS.contains(&m) {
        return Err(Error::Config(format!("kernel order {m} unsupported (use 2, 4, 6 or 8)")));
    }
    let k = m / 2;
    // rows: ∫ x^{2r} P φ = [r == 0], columns: coefficient of x^{2c}
    let a: Vec<Vec<f64>> = (0..k)
        .map(|r| (0..k).map(|c| gaussian_even_moment(r + c)).collect())
        .collect();
    let mut b = vec![0.0; k];
    b[0] = 1.0;
    let even_coefficients = solve_dense(a, b);
    let mut kernel = HighOrderKernel {
        order_m: m,
        even_coefficients,
        support_radius: 0.0,
    };
    let mut r = 40.0;
    while r > 1.0 && kernel.eval(r).abs() + kernel.derivative(r).abs() < 1e-17 {
        r -= 0.125;
    }
    kernel.support_radius = r + 0.125;
    Ok(kernel)
}

impl HighOrderKernel {
    fn poly(&self, x: f64) -> (f64, f64) {
        let x2 = x * x;
        let mut p = 0.0;
        let mut dp = 0.0;
        for (j, c) in self.even_coefficients.iter().enumerate().rev() {
            p = p * x2 + c;
            if j > 0 {
                dp = dp * x2 + 2.0 * j as f64 * c;
            }
        }
        // dp was accumulated as a polynomial in x² for P'(x)/x
        (p, dp * x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.poly(x).0 * phi(x)
    }

    /// `K'(x) = (P'(x) - x P(x)) φ(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        let (p, dp) = self.poly(x);
        (dp - x * p) * phi(x)
    }

    /// `∫ x^j K(x) dx` by Gauss–Legendre quadrature.
    pub fn moment(&self, j: i32) -> f64 {
        let rule = gauss_legendre(16);
        let r = self.support_radius;
        integrate_gl(|x| x.powi(j) * self.eval(x), -r, r, 64, &rule)
    }
}

/// Tuning constants of the estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub m: usize,
    pub n_t: f64,
    pub h0: f64,
    pub h1: f64,
    pub delta: f64,
    pub u: f64,
    pub eps: f64,
    pub c_u: f64,
    pub gamma: f64,
    pub a: f64,
    pub eps_nt: f64,
    pub c1_hat: f64,
    pub c_tilde: f64,
    pub c_v: f64,
}

impl EstimatorConfig {
    /// All constants from an effective sample size and the structural constants.
    pub fn from_effective_size(
        n_t: f64,
        m: usize,
        c_tilde: f64,
        c_v: f64,
        eps: f64,
        a: f64,
        c1_hat: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
        }
        if !(n_t > 1.0) || !n_t.is_finite() {
            return Err(Error::Config(format!("effective sample size must exceed 1, got {n_t}")));
        }
        if !(c_tilde > 0.0 && c_v > 0.0) {
            return Err(Error::Config(format!("need C~ > 0 and C_V > 0, got {c_tilde}, {c_v}")));
        }
        if !(c1_hat > 0.0) || !(a >= 0.0) {
            return Err(Error::Config(format!("need c1_hat > 0 and a >= 0, got {c1_hat}, {a}")));
        }
        if !SUPPORTED_ORDERS.contains(&m) {
            return Err(Error::Config(format!("kernel order {m} unsupported")));
        }
        let mf = m as f64;
        let base = mf / (2.0 * (mf + 2.0));
        let c_u = base / (c_tilde + c_v * eps * eps / 4.0);
        let gamma = base / (1.0 + 4.0 * c_tilde / (eps * eps * c_v));
        let log_nt = n_t.ln();
        let u = (c_u * log_nt).sqrt();
        let eps_nt = (0.5 * a * eps * u).exp() * log_nt.powf(0.25) * n_t.powf(-0.5 * gamma);
        Ok(Self {
            m,
            n_t,
            h0: n_t.powf(-1.0 / (2.0 * (mf + 1.0))),
            h1: n_t.powf(-1.0 / (2.0 * (mf + 2.0))),
            delta: 0.5 * c1_hat * (-c_tilde * u * u).exp(),
            u,
            eps,
            c_u,
            gamma,
            a,
            eps_nt,
            c1_hat,
            c_tilde,
            c_v,
        })
    }
}

/// Constants for a model observed with `n` particles at time `horizon`.
pub fn derive_config(
    pm: &PotentialModel,
    n: usize,
    horizon: f64,
    m: usize,
    eps: f64,
    a: f64,
    c1_hat: f64,
) -> Result<EstimatorConfig> {
    if let Smoothness::Finite(j) = pm.confinement.smoothness() {
        if pm.confinement.has_correction() && m > j {
            return Err(Error::Config(format!("kernel order m = {m} exceeds the smoothness J = {j} of V~")));
        }
    }
    let n_t = effective_sample_size(pm, n, horizon);
    EstimatorConfig::from_effective_size(
        n_t,
        m,
        pm.confinement.c_tilde_envelope(),
        pm.confinement.c_v(),
        eps,
        a,
        c1_hat,
    )
}

/// `(1/(N h^{k+1})) Σ_i K^{(k)}((y - X_i)/h)` for `k ∈ {0, 1}` at every grid node.
fn kernel_sum(sorted: &[f64], kernel: &HighOrderKernel, h: f64, ys: &[f64], derivative: bool) -> Vec<f64> {
    let n = sorted.len() as f64;
    let reach = kernel.support_radius * h;
    let scale = if derivative { 1.0 / (n * h * h) } else { 1.0 / (n * h) };
    ys.par_iter()
        .map(|&y| {
            let lo = sorted.partition_point(|&x| x < y - reach);
            let hi = sorted.partition_point(|&x| x <= y + reach);
            let s: f64 = sorted[lo..hi]
                .iter()
                .map(|&x| {
                    let u = (y - x) / h;
                    if derivative {
                        kernel.derivative(u)
                    } else {
                        kernel.eval(u)
                    }
                })
                .sum();
            s * scale
        })
        .collect()
}

fn sorted_copy(positions: &[f64]) -> Vec<f64> {
    let mut s = positions.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `π_{N,T}(y) = (1/(N h0)) Σ K((y - X_i)/h0)` on `grid`; not clipped at zero.
pub fn estimate_density(positions: &[f64], kernel: &HighOrderKernel, h0: f64, grid: &Grid) -> Result<GridFunction> {
    check_bandwidth(h0)?;
    let values = kernel_sum(&sorted_copy(positions), kernel, h0, &grid.points(), false);
    GridFunction::new(*grid, values)
}

/// `π'_{N,T}(y) = (1/(N h1²)) Σ K'((y - X_i)/h1)` on `grid`.
pub fn estimate_density_derivative(
    positions: &[f64],
    kernel: &HighOrderKernel,
    h1: f64,
    grid: &Grid,
) -> Result<GridFunction> {
    check_bandwidth(h1)?;
    let values = kernel_sum(&sorted_copy(positions), kernel, h1, &grid.points(), true);
    GridFunction::new(*grid, values)
}

/// Pointwise versions of the two estimators.
pub fn density_at(positions: &[f64], kernel: &HighOrderKernel, h: f64, y: f64) -> f64 {
    kernel_sum(&sorted_copy(positions), kernel, h, &[y], false)[0]
}

pub fn density_derivative_at(positions: &[f64], kernel: &HighOrderKernel, h: f64, y: f64) -> f64 {
    kernel_sum(&sorted_copy(positions), kernel, h, &[y], true)[0]
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("bandwidth must be positive, got {h}")))
    }
}

/// `l_{N,T} = π'_{N,T}/π_{N,T}` where `π_{N,T} > δ`, exactly 0 elsewhere.
pub fn log_density_derivative(pi_est: &GridFunction, pi_prime_est: &GridFunction, delta: f64) -> Result<GridFunction> {
    if !pi_est.grid.same_as(&pi_prime_est.grid) {
        return Err(Error::GridMismatch("density and derivative estimates on different grids".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {delta}")));
    }
    let values = pi_est
        .values
        .iter()
        .zip(&pi_prime_est.values)
        .map(|(&p, &dp)| if p > delta { dp / p } else { 0.0 })
        .collect();
    GridFunction::new(pi_est.grid, values)
}

/// The three estimates of Step 1 on a common grid.
#[derive(Clone, Debug)]
pub struct KernelEstimates {
    pub pi_hat: GridFunction,
    pub pi_prime_hat: GridFunction,
    pub l_hat: GridFunction,
}

impl KernelEstimates {
    pub fn compute(positions: &[f64], cfg: &EstimatorConfig, grid: &Grid) -> Result<Self> {
        let kernel = make_kernel(cfg.m)?;
        let pi_hat = estimate_density(positions, &kernel, cfg.h0, grid)?;
        let pi_prime_hat = estimate_density_derivative(positions, &kernel, cfg.h1, grid)?;
        let l_hat = log_density_derivative(&pi_hat, &pi_prime_hat, cfg.delta)?;
        Ok(Self {
            pi_hat,
            pi_prime_hat,
            l_hat,
        })
    }

    /// CSV `y,pi_hat,pi_prime_hat,l_hat`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["y", "pi_hat", "pi_prime_hat", "l_hat"])?;
        for i in 0..self.pi_hat.values.len() {
            w.write_record([
                self.pi_hat.grid.point(i).to_string(),
                self.pi_hat.values[i].to_string(),
                self.pi_prime_hat.values[i].to_string(),
                self.l_hat.values[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Data-driven `ĉ₁ = 0.1 · max π_{N,T}`.
pub fn default_c1_hat(pi_est: &GridFunction) -> f64 {
    0.1 * pi_est.values.iter().fold(0.0_f64, |m, &v| m.max(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle_sim::{simulate_system, InitialLaw};
    use crate::potentials::builtin_model;
    use std::collections::BTreeMap;

    #[test]
    fn kernel_moments() {
        let k2 = make_kernel(2).unwrap();
        assert!((k2.eval(0.3) - phi(0.3)).abs() < 1e-16);
        assert!((k2.moment(0) - 1.0).abs() < 1e-12);
        assert!(k2.moment(1).abs() < 1e-12);
        assert!((k2.moment(2) - 1.0).abs() < 1e-12);
        let k4 = make_kernel(4).unwrap();
        assert!((k4.eval(0.7) - (3.0 - 0.49) * phi(0.7) / 2.0).abs() < 1e-16);
        assert!((k4.moment(0) - 1.0).abs() < 1e-12);
        assert!(k4.moment(2).abs() < 1e-12);
        assert!((k4.moment(4) + 3.0).abs() < 1e-10);
        for m in SUPPORTED_ORDERS {
            let k = make_kernel(m).unwrap();
            assert!((k.moment(0) - 1.0).abs() < 1e-8);
            for j in 1..m as i32 {
                assert!(k.moment(j).abs() < 1e-8, "m={m} j={j}: {}", k.moment(j));
            }
            assert!(k.moment(m as i32).abs() > 0.1);
        }
        assert!(make_kernel(3).is_err());
        assert!(make_kernel(10).is_err());
    }

    #[test]
    fn kernel_derivative_matches_finite_difference() {
        for m in SUPPORTED_ORDERS {
            let k = make_kernel(m).unwrap();
            for &x in &[-2.3, -0.4, 0.0, 0.9, 3.1] {
                let h = 1e-5;
                let fd = (k.eval(x + h) - k.eval(x - h)) / (2.0 * h);
                assert!((fd - k.derivative(x)).abs() < 1e-8, "m={m} x={x}");
            }
        }
    }

    #[test]
    fn bandwidths_and_constants() {
        let c = EstimatorConfig::from_effective_size(1e6, 2, 1.0, 1.0, 0.5, 0.0, 0.1).unwrap();
        assert!((c.h0 - 0.1).abs() < 1e-12);
        assert!((c.h1 - 10f64.powf(-0.75)).abs() < 1e-12);
        assert!((c.h1 - 0.17783).abs() < 1e-5);
        assert!((c.c_u - 0.25 / 1.0625).abs() < 1e-15);
        assert!((c.gamma - 0.25 / 17.0).abs() < 1e-15);
        assert!((c.u * c.u - c.c_u * 1e6_f64.ln()).abs() < 1e-12);
        assert!((c.delta - 0.05 * (-c.u * c.u).exp()).abs() < 1e-15);
        // a = 0 removes the exponential factor
        let expected = 1e6_f64.ln().powf(0.25) * 1e6_f64.powf(-c.gamma / 2.0);
        assert!((c.eps_nt - expected).abs() < 1e-14);
        assert!(EstimatorConfig::from_effective_size(1e6, 2, 1.0, 1.0, 1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn config_from_model() {
        let m = builtin_model("hermite", &BTreeMap::new()).unwrap();
        let c = derive_config(&m, 10_000, 34.0, 2, 0.9, 0.0, 0.1).unwrap();
        let lambda = 0.5 - (-1.5_f64).exp();
        assert!((c.n_t - 1.0 / (1e-4 + (-lambda * 34.0).exp())).abs() < 1e-8);
        let p: BTreeMap<String, f64> = [("J".to_string(), 2.0)].into_iter().collect();
        let ns = builtin_model("nonsmooth_confinement_J", &p).unwrap();
        assert!(derive_config(&ns, 1000, 10.0, 4, 0.9, 0.0, 0.1).unwrap_err().is_config_error());
        assert!(derive_config(&ns, 1000, 10.0, 2, 0.9, 0.0, 0.1).is_ok());
    }

    #[test]
    fn density_estimator_examples() {
        let k2 = make_kernel(2).unwrap();
        assert!((density_at(&[0.0], &k2, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((density_at(&[-1.0, 1.0], &k2, 1.0, 0.0) - phi(1.0)).abs() < 1e-15);
        assert!((phi(1.0) - 0.24197).abs() < 1e-5);
        assert_eq!(density_derivative_at(&[0.0], &k2, 1.0, 0.0), 0.0);
        assert!((density_derivative_at(&[0.0], &k2, 1.0, 1.0) + phi(1.0)).abs() < 1e-15);
        assert_eq!(density_derivative_at(&[-1.0, 1.0], &k2, 1.0, 0.0), 0.0);
    }

    #[test]
    fn threshold_examples() {
        let g = Grid::new(0.0, 1.0, 2).unwrap();
        let p = GridFunction::new(g, vec![0.5, 0.05]).unwrap();
        let dp = GridFunction::new(g, vec![-1.0, 3.0]).unwrap();
        let l = log_density_derivative(&p, &dp, 0.1).unwrap();
        assert_eq!(l.values, vec![-2.0, 0.0]);
    }

    #[test]
    fn shifting_particles_shifts_estimates() {
        let k = make_kernel(4).unwrap();
        let xs = [-0.7, 0.1, 0.4, 1.9];
        let s = 0.625;
        let shifted: Vec<f64> = xs.iter().map(|x| x + s).collect();
        for &y in &[-1.0, 0.0, 0.3, 2.0] {
            assert!((density_at(&xs, &k, 0.4, y) - density_at(&shifted, &k, 0.4, y + s)).abs() < 1e-15);
            assert!(
                (density_derivative_at(&xs, &k, 0.4, y) - density_derivative_at(&shifted, &k, 0.4, y + s)).abs()
                    < 1e-14
            );
        }
    }

    #[test]
    fn ou_sample_estimates() {
        let p: BTreeMap<String, f64> = [("alpha".to_string(), 1.0)].into_iter().collect();
        let m = builtin_model("zero_interaction", &p).unwrap();
        let init = InitialLaw::Gaussian { mean: 0.0, std: 0.5_f64.sqrt() };
        let e = simulate_system(&m, 10_000, 1.0, 1e-3, 1, &init).unwrap();
        let cfg = derive_config(&m, 10_000, 20.0, 8, 0.9, 0.0, 0.1).unwrap();
        let grid = Grid::symmetric(4.0, 401).unwrap();
        let est = KernelEstimates::compute(&e.positions, &cfg, &grid).unwrap();
        for (i, &y) in grid.points().iter().enumerate() {
            if y.abs() <= 2.0 {
                let truth = (-y * y).exp() / PI.sqrt();
                assert!((est.pi_hat.values[i] - truth).abs() < 0.05, "y={y}");
            }
            if y.abs() <= 1.0 {
                assert!((est.l_hat.values[i] + 2.0 * y).abs() < 0.2, "y={y}: {}", est.l_hat.values[i]);
            }
        }
    }
}

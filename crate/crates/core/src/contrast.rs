//! Minimal-contrast estimation of the confinement slope `α` and the truncated
//! signal `Ψ_{N,T} = (l_{N,T} + 2α̂y + 2Ṽ') 1{|y| <= εU}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, integrate_gl, Grid, GridFunction};

/// Shape of the weight function on `[ε, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `exp(-1/((x - ε)(1 - x)))`
    Bump,
    Uniform,
    /// Tent peaking at the midpoint.
    Triangle,
    /// `(x - ε)² (1 - x)²`
    Polynomial,
    /// `1 - cos(2π (x - ε)/(1 - ε))`
    Cosine,
}

pub const WEIGHT_KINDS: [WeightKind; 5] = [
    WeightKind::Bump,
    WeightKind::Uniform,
    WeightKind::Triangle,
    WeightKind::Polynomial,
    WeightKind::Cosine,
];

/// Integrable weight supported on `[ε, 1]`, normalized to unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub eps: f64,
    pub kind: WeightKind,
    normalizer: f64,
    /// `C₂ = ∫ x² w(x) dx`
    pub c2: f64,
    /// `C_∞ = sup x² w(x)`
    pub c_inf: f64,
}

impl WeightFunction {
    pub fn new(eps: f64, kind: WeightKind) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("weight support [eps, 1] needs eps in (0, 1), got {eps}")));
        }
        let mut w = Self {
            eps,
            kind,
            normalizer: 1.0,
            c2: 0.0,
            c_inf: 0.0,
        };
        let rule = gauss_legendre(20);
        let mass = integrate_gl(|x| w.raw(x), eps, 1.0, 64, &rule);
        w.normalizer = mass;
        w.c2 = integrate_gl(|x| x * x * w.eval(x), eps, 1.0, 64, &rule);
        w.c_inf = (0..=4000)
            .map(|k| eps + (1.0 - eps) * k as f64 / 4000.0)
            .map(|x| x * x * w.eval(x))
            .fold(0.0, f64::max);
        Ok(w)
    }

    /// Default weight: normalized smooth bump.
    pub fn bump(eps: f64) -> Result<Self> {
        Self::new(eps, WeightKind::Bump)
    }

    fn raw(&self, x: f64) -> f64 {
        let (e, width) = (self.eps, 1.0 - self.eps);
        if x <= e || x >= 1.0 {
            return if self.kind == WeightKind::Uniform && (x == e || x == 1.0) { 1.0 } else { 0.0 };
        }
        let t = (x - e) / width;
        match self.kind {
            WeightKind::Bump => (-1.0 / ((x - e) * (1.0 - x))).exp(),
            WeightKind::Uniform => 1.0,
            WeightKind::Triangle => 1.0 - (2.0 * t - 1.0).abs(),
            WeightKind::Polynomial => (t * (1.0 - t)).powi(2),
            WeightKind::Cosine => 1.0 - (2.0 * std::f64::consts::PI * t).cos(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.raw(x) / self.normalizer
    }

    /// `w_U(x) = w(x/U)/U`.
    pub fn scaled(&self, x: f64, u: f64) -> f64 {
        self.eval(x / u) / u
    }
}

/// `α_{N,T} = -∫(l + 2Ṽ') x w_U / (2 ∫ x² w_U)`.
///
/// Both integrals use the same trapezoid rule on the grid of `l_est`, so that an
/// exact `l = -2αy - 2Ṽ'` returns `α` to rounding. The denominator equals
/// `C₂ U²` up to quadrature error.
pub fn estimate_alpha(
    l_est: &GridFunction,
    tilde_v_prime: impl Fn(f64) -> f64,
    w: &WeightFunction,
    u: f64,
) -> Result<f64> {
    if !(u >= 1.0) {
        return Err(Error::Config(format!("window radius U must be >= 1, got {u}")));
    }
    let grid = &l_est.grid;
    for x in [w.eps * u, u] {
        if !grid.contains(x) {
            return Err(Error::Extrapolation {
                x,
                lo: grid.x_min,
                hi: grid.x_max,
            });
        }
    }
    let xs = grid.points();
    let weight: Vec<f64> = xs.iter().map(|&x| w.scaled(x, u)).collect();
    let num: Vec<f64> = xs
        .iter()
        .zip(&l_est.values)
        .zip(&weight)
        .map(|((&x, &l), &wu)| (l + 2.0 * tilde_v_prime(x)) * x * wu)
        .collect();
    let den: Vec<f64> = xs.iter().zip(&weight).map(|(&x, &wu)| x * x * wu).collect();
    let den = grid.trapezoid(&den);
    if !(den > 0.0) {
        return Err(Error::Config(format!(
            "grid spacing {} too coarse to resolve the weight window [{}, {u}]",
            grid.spacing(),
            w.eps * u
        )));
    }
    Ok(-grid.trapezoid(&num) / (2.0 * den))
}

/// `Ψ_{N,T}` on `grid`; a warning is returned when `[-εU, εU]` is clipped by the grid.
pub fn build_psi(
    l_est: &GridFunction,
    alpha_hat: f64,
    tilde_v_prime: impl Fn(f64) -> f64,
    eps: f64,
    u: f64,
    grid: &Grid,
) -> Result<(GridFunction, Option<String>)> {
    if !l_est.grid.same_as(grid) {
        return Err(Error::GridMismatch("l estimate and psi grid differ".into()));
    }
    let window = eps * u;
    let warning = (window > grid.x_max.min(-grid.x_min)).then(|| {
        format!(
            "window |y| <= {window:.4} exceeds the grid [{}, {}]; psi clipped to the grid",
            grid.x_min, grid.x_max
        )
    });
    let values = grid
        .points()
        .iter()
        .zip(&l_est.values)
        .map(|(&y, &l)| {
            if y.abs() <= window {
                l + 2.0 * alpha_hat * y + 2.0 * tilde_v_prime(y)
            } else {
                0.0
            }
        })
        .collect();
    Ok((GridFunction::new(*grid, values)?, warning))
}

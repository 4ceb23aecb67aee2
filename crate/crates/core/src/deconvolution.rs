//! Fourier transforms along complex lines `L_a = {y + ia}`, the regularized
//! division `F(W'_{N,T}) = -F(Ψ_{N,T}) / (F(Π_{N,T}) + ρ_{N,T})`, its inversion,
//! and diagnostics on the decay of `F(π)` and `F(W')/F(π)`.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::contrast::{build_psi, estimate_alpha, WeightFunction};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::invariant::GridDensity;
use crate::kernel_estimators::{EstimatorConfig, KernelEstimates};
use crate::potentials::PotentialModel;

/// Re-seed the phase recurrence every this many frequencies.
const RESEED: usize = 128;

/// Values of a Fourier transform along `L_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct LineTransform {
    pub a: f64,
    pub y: Grid,
    pub values: Vec<Complex64>,
}

impl LineTransform {
    pub fn zeros(a: f64, y: Grid) -> Self {
        Self {
            a,
            y,
            values: vec![Complex64::new(0.0, 0.0); y.n_points],
        }
    }

    fn check_compatible(&self, other: &LineTransform) -> Result<()> {
        if !self.y.same_as(&other.y) || self.a != other.a {
            return Err(Error::GridMismatch(format!(
                "transforms on different lines or frequency grids (a = {} vs {})",
                self.a, other.a
            )));
        }
        Ok(())
    }

    pub fn min_modulus(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.norm()))
    }

    /// CSV with a `# a=<value>` line followed by `y,re,im`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# a={}", self.a)?;
        writeln!(f, "y,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "{},{},{}", self.y.point(i), v.re, v.im)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let first = lines.next().ok_or(Error::Empty("line transform file"))??;
        let a = first
            .strip_prefix("# a=")
            .ok_or_else(|| Error::Schema("line transform CSV must start with `# a=<value>`".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Schema(format!("bad line offset: {e}")))?;
        let header = lines.next().ok_or(Error::Empty("line transform header"))??;
        if header.trim() != "y,re,im" {
            return Err(Error::Schema(format!("unexpected header `{header}`")));
        }
        let (mut ys, mut values) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            let parts: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Schema(format!("bad number `{s}`: {e}"))))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(Error::Schema(format!("expected 3 columns in `{line}`")));
            }
            ys.push(parts[0]);
            values.push(Complex64::new(parts[1], parts[2]));
        }
        if ys.len() < 2 {
            return Err(Error::Schema("line transform needs at least two frequencies".into()));
        }
        let y = Grid::new(ys[0], ys[ys.len() - 1], ys.len())?;
        Ok(Self { a, y, values })
    }
}

/// Adds `Σ_j c_j e^{i y_k x_j}` for uniform `y_k` into `out` using a phase
/// recurrence in `k`.
fn accumulate_phases(out: &mut [Complex64], y: &Grid, x: f64, c: Complex64) {
    let dy = y.spacing();
    let step = Complex64::from_polar(1.0, dy * x);
    let mut k = 0;
    while k < out.len() {
        let mut phase = Complex64::from_polar(1.0, y.point(k) * x) * c;
        let end = (k + RESEED).min(out.len());
        for o in &mut out[k..end] {
            *o += phase;
            phase *= step;
        }
        k = end;
    }
}

fn overflow_guard(a: f64, x: f64) -> Result<()> {
    let arg = (a * x).abs();
    if arg > 700.0 {
        return Err(Error::Overflow { what: "a*x", value: arg });
    }
    Ok(())
}

/// `F(f)(y_k + ia) = ∫ f(x) e^{i(y_k + ia)x} dx` by the trapezoid rule on `f`'s grid.
pub fn forward_line_transform(f: &GridFunction, a: f64, y: &Grid) -> Result<LineTransform> {
    let weights = f.grid.trapezoid_weights();
    let mut out = LineTransform::zeros(a, *y);
    for (j, (&w, &v)) in weights.iter().zip(&f.values).enumerate() {
        if v == 0.0 {
            continue;
        }
        let x = f.grid.point(j);
        overflow_guard(a, x)?;
        let c = Complex64::new(w * v * (-a * x).exp(), 0.0);
        accumulate_phases(&mut out.values, y, x, c);
    }
    Ok(out)
}

pub fn density_line_transform(pi: &GridDensity, a: f64, y: &Grid) -> Result<LineTransform> {
    forward_line_transform(&GridFunction::new(*pi.grid(), pi.values().to_vec())?, a, y)
}

/// `F(Π_{N,T})(y_k + ia) = (1/N) Σ_j e^{i(y_k + ia)X_j}`.
pub fn empirical_line_transform(positions: &[f64], a: f64, y: &Grid) -> Result<LineTransform> {
    if positions.is_empty() {
        return Err(Error::Empty("ensemble positions"));
    }
    let n = positions.len() as f64;
    let mut out = LineTransform::zeros(a, *y);
    for &x in positions {
        overflow_guard(a, x)?;
        accumulate_phases(&mut out.values, y, x, Complex64::new((-a * x).exp() / n, 0.0));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationMode {
    /// Denominator `F(π) + ε_{N,T}` from the exact invariant density (validation only).
    OracleShift,
    /// Denominator `F(Π_{N,T})` with its modulus floored at `ε_{N,T}`, phase kept.
    Clip,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionSettings {
    pub a: f64,
    pub y_max: f64,
    pub n_freq: usize,
    pub eps_nt: f64,
    pub mode: RegularizationMode,
}

impl DeconvolutionSettings {
    pub fn new(a: f64, eps_nt: f64, mode: RegularizationMode) -> Self {
        Self {
            a,
            y_max: 20.0,
            n_freq: 4096,
            eps_nt,
            mode,
        }
    }

    pub fn frequency_grid(&self) -> Result<Grid> {
        if !(self.y_max > 0.0) || self.n_freq < 2 {
            return Err(Error::Config("frequency grid needs y_max > 0 and n_freq >= 2".into()));
        }
        Grid::symmetric(self.y_max, self.n_freq)
    }
}

/// Scale `z` to modulus `floor` keeping its phase (phase of 0 is +1); the result
/// has modulus `>= floor` in floating point.
fn floor_modulus(z: Complex64, floor: f64) -> Complex64 {
    let r = z.norm();
    if r >= floor {
        return z;
    }
    let unit = if r > 0.0 { z / r } else { Complex64::new(1.0, 0.0) };
    let mut out = unit * floor;
    while out.norm() < floor {
        out *= 1.0 + 2.0 * f64::EPSILON;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Division {
    pub quotient: LineTransform,
    pub min_denominator: f64,
    /// Frequencies where the oracle shift fell short of the floor and was clipped.
    pub oracle_fallbacks: usize,
}

/// `-F_psi / denominator` with `|denominator| >= ε_{N,T}` at every frequency.
pub fn regularized_divide(
    f_psi: &LineTransform,
    f_den: &LineTransform,
    f_pi_oracle: Option<&LineTransform>,
    s: &DeconvolutionSettings,
) -> Result<Division> {
    f_psi.check_compatible(f_den)?;
    if !(s.eps_nt > 0.0) {
        return Err(Error::Config(format!("eps_NT must be positive, got {}", s.eps_nt)));
    }
    let mut fallbacks = 0;
    let denominators: Vec<Complex64> = match s.mode {
        RegularizationMode::Clip => f_den.values.iter().map(|&d| floor_modulus(d, s.eps_nt)).collect(),
        RegularizationMode::OracleShift => {
            let oracle = f_pi_oracle
                .ok_or_else(|| Error::Config("oracle_shift mode needs the oracle transform of pi".into()))?;
            f_psi.check_compatible(oracle)?;
            oracle
                .values
                .iter()
                .map(|&p| {
                    let d = p + s.eps_nt;
                    if d.norm() < s.eps_nt {
                        fallbacks += 1;
                    }
                    floor_modulus(d, s.eps_nt)
                })
                .collect()
        }
    };
    let min_denominator = denominators.iter().fold(f64::INFINITY, |m, d| m.min(d.norm()));
    assert!(min_denominator >= s.eps_nt, "denominator floor violated");
    let values = f_psi.values.iter().zip(&denominators).map(|(p, d)| -p / d).collect();
    Ok(Division {
        quotient: LineTransform {
            a: f_psi.a,
            y: f_psi.y,
            values,
        },
        min_denominator,
        oracle_fallbacks: fallbacks,
    })
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub function: GridFunction,
    /// `‖Im f‖ / ‖Re f‖`.
    pub imaginary_residue: f64,
    /// `|F|` at the frequency cut-off relative to `max |F|`.
    pub tail_ratio: f64,
    pub warnings: Vec<String>,
}

/// `f(x) = (1/2π) ∫_{-y_max}^{y_max} F(y + ia) e^{-i(y + ia)x} dy` by the trapezoid rule.
pub fn inverse_line_transform(f: &LineTransform, x: &Grid) -> Result<Inversion> {
    let weights = f.y.trapezoid_weights();
    let ys = f.y.points();
    let mut warnings = Vec::new();
    let peak = f.values.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    let edge = f.values[0].norm().max(f.values[f.values.len() - 1].norm());
    let tail_ratio = if peak > 0.0 { edge / peak } else { 0.0 };
    if tail_ratio >= 1e-3 {
        warnings.push(format!(
            "transform at |y| = {} is {tail_ratio:.2e} of its peak; truncation error may be visible",
            f.y.x_max
        ));
    }
    let mut re = Vec::with_capacity(x.n_points);
    let mut im = Vec::with_capacity(x.n_points);
    for xi in x.points() {
        overflow_guard(f.a, xi)?;
        let dy = f.y.spacing();
        let step = Complex64::from_polar(1.0, -dy * xi);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut k = 0;
        while k < ys.len() {
            let mut phase = Complex64::from_polar(1.0, -ys[k] * xi);
            let end = (k + RESEED).min(ys.len());
            for kk in k..end {
                acc += weights[kk] * f.values[kk] * phase;
                phase *= step;
            }
            k = end;
        }
        let v = acc * (f.a * xi).exp() / (2.0 * PI);
        re.push(v.re);
        im.push(v.im);
    }
    let norm = |v: &[f64]| x.trapezoid(&v.iter().map(|t| t * t).collect::<Vec<_>>()).sqrt();
    let (nr, ni) = (norm(&re), norm(&im));
    let imaginary_residue = if nr > 0.0 { ni / nr } else if ni > 0.0 { f64::INFINITY } else { 0.0 };
    if imaginary_residue >= 1e-6 {
        warnings.push(format!("imaginary residue {imaginary_residue:.2e} of the real part"));
    }
    Ok(Inversion {
        function: GridFunction::new(*x, re)?,
        imaginary_residue,
        tail_ratio,
        warnings,
    })
}

/// Every intermediate of the four-step estimator.
#[derive(Clone, Debug)]
pub struct InteractionEstimate {
    pub w_prime: GridFunction,
    pub alpha_hat: f64,
    pub psi: GridFunction,
    pub kernel: KernelEstimates,
    pub f_psi: LineTransform,
    pub f_empirical: LineTransform,
    pub division: Division,
    pub inversion_residue: f64,
    pub warnings: Vec<String>,
}

/// Steps 1-4 on an observed ensemble: kernel estimates, `α̂`, `Ψ_{N,T}`, regularized
/// deconvolution on `L_a`, inversion on `grid`.
///
/// `oracle` is the exact invariant density, required in `OracleShift` mode.
pub fn estimate_interaction(
    positions: &[f64],
    pm: &PotentialModel,
    cfg: &EstimatorConfig,
    s: &DeconvolutionSettings,
    grid: &Grid,
    oracle: Option<&GridDensity>,
) -> Result<InteractionEstimate> {
    if s.a != cfg.a {
        return Err(Error::Config(format!("line offset differs: config a = {}, settings a = {}", cfg.a, s.a)));
    }
    let kernel = KernelEstimates::compute(positions, cfg, grid)?;
    let weight = WeightFunction::bump(cfg.eps)?;
    let tilde = |y: f64| pm.confinement.tilde_v_prime(y);
    let alpha_hat = estimate_alpha(&kernel.l_hat, tilde, &weight, cfg.u.max(1.0))?;
    let mut warnings = Vec::new();
    if cfg.u < 1.0 {
        warnings.push(format!("U = {:.4} < 1; the contrast window uses U = 1", cfg.u));
    }
    let (psi, warn) = build_psi(&kernel.l_hat, alpha_hat, tilde, cfg.eps, cfg.u, grid)?;
    warnings.extend(warn);
    let freq = s.frequency_grid()?;
    let f_psi = forward_line_transform(&psi, s.a, &freq)?;
    let f_empirical = empirical_line_transform(positions, s.a, &freq)?;
    let f_oracle = match (s.mode, oracle) {
        (RegularizationMode::OracleShift, Some(pi)) => Some(density_line_transform(pi, s.a, &freq)?),
        (RegularizationMode::OracleShift, None) => {
            return Err(Error::Config("oracle_shift mode needs the oracle invariant density".into()))
        }
        (RegularizationMode::Clip, _) => None,
    };
    let division = regularized_divide(&f_psi, &f_empirical, f_oracle.as_ref(), s)?;
    if division.oracle_fallbacks > 0 {
        warnings.push(format!(
            "|F(pi) + eps_NT| < eps_NT at {} frequencies; floored keeping the phase",
            division.oracle_fallbacks
        ));
    }
    let inversion = inverse_line_transform(&division.quotient, grid)?;
    warnings.extend(inversion.warnings);
    Ok(InteractionEstimate {
        w_prime: inversion.function,
        alpha_hat,
        psi,
        kernel,
        f_psi,
        f_empirical,
        division,
        inversion_residue: inversion.imaginary_residue,
        warnings,
    })
}

/// Outcome of the check that `∫|F(W')/F(π)|²` converges on `L_{±a}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtsReport {
    pub a: f64,
    pub y_max: f64,
    /// `∫_{|y| <= y_max}` on `L_a` and `L_{-a}`.
    pub integral: [f64; 2],
    /// Same with `2 y_max`.
    pub integral_doubled: [f64; 2],
    /// `(I(2 y_max) - I(y_max)) / I(y_max)` per line.
    pub increment_ratio: [f64; 2],
    /// `min |F(π)|` over `|y| <= 2 y_max` per line.
    pub min_modulus_pi: [f64; 2],
    pub passed: bool,
}

/// Convergence check for a transform of `W'` supplied as a function on `ℂ`.
pub fn fts_diagnostic_with(
    f_w_prime: impl Fn(Complex64) -> Complex64,
    pi: &GridDensity,
    a: f64,
    y_max: f64,
    n_freq: usize,
) -> Result<FtsReport> {
    let mut integral = [0.0; 2];
    let mut integral_doubled = [0.0; 2];
    let mut min_modulus_pi = [0.0; 2];
    for (slot, line) in [a, -a].into_iter().enumerate() {
        let freq = Grid::symmetric(2.0 * y_max, 2 * n_freq + 1)?;
        let f_pi = density_line_transform(pi, line, &freq)?;
        let ratio: Vec<f64> = freq
            .points()
            .iter()
            .zip(&f_pi.values)
            .map(|(&y, p)| (f_w_prime(Complex64::new(y, line)) / p).norm_sqr())
            .collect();
        integral_doubled[slot] = freq.trapezoid(&ratio);
        let inner: Vec<f64> = freq
            .points()
            .iter()
            .zip(&ratio)
            .map(|(y, r)| if y.abs() <= y_max { *r } else { 0.0 })
            .collect();
        integral[slot] = freq.trapezoid(&inner);
        min_modulus_pi[slot] = f_pi.min_modulus();
    }
    let increment_ratio = [0, 1].map(|s| (integral_doubled[s] - integral[s]) / integral[s]);
    let passed = increment_ratio.iter().all(|r| r.is_finite() && *r < 0.1);
    Ok(FtsReport {
        a,
        y_max,
        integral,
        integral_doubled,
        increment_ratio,
        min_modulus_pi,
        passed,
    })
}

/// As [`fts_diagnostic_with`], with `F(W')` by quadrature of `w_prime` on `pi`'s grid.
pub fn fts_diagnostic(
    w_prime: impl Fn(f64) -> f64,
    pi: &GridDensity,
    a: f64,
    y_max: f64,
    n_freq: usize,
) -> Result<FtsReport> {
    let grid = *pi.grid();
    let wp = GridFunction::from_fn(grid, w_prime);
    let weights = grid.trapezoid_weights();
    let transform = |z: Complex64| -> Complex64 {
        weights
            .iter()
            .zip(&wp.values)
            .enumerate()
            .map(|(j, (w, v))| (Complex64::i() * z * grid.point(j)).exp() * (w * v))
            .sum()
    };
    fts_diagnostic_with(transform, pi, a, y_max, n_freq)
}

/// `min |F(π)|` on `L_a` over `|y| <= y_max` for each candidate offset.
pub fn zero_scan(pi: &GridDensity, candidates: &[f64], y_max: f64, n_freq: usize) -> Result<Vec<(f64, f64)>> {
    let freq = Grid::symmetric(y_max, n_freq)?;
    candidates
        .iter()
        .map(|&a| Ok((a, density_line_transform(pi, a, &freq)?.min_modulus())))
        .collect()
}

/// Least-squares slope of `log|F(π)(y + ia)|` against `log y` on `n` log-spaced
/// frequencies in `[y_lo, y_hi]`.
pub fn decay_slope(pi: &GridDensity, a: f64, y_lo: f64, y_hi: f64, n: usize) -> Result<f64> {
    if !(y_lo > 0.0 && y_hi > y_lo) || n < 2 {
        return Err(Error::Config("decay fit needs 0 < y_lo < y_hi and n >= 2".into()));
    }
    let grid = *pi.grid();
    let weights = grid.trapezoid_weights();
    let points: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let y = y_lo * (y_hi / y_lo).powf(k as f64 / (n - 1) as f64);
            let z = Complex64::new(y, a);
            let v: Complex64 = weights
                .iter()
                .zip(pi.values())
                .enumerate()
                .map(|(j, (w, p))| (Complex64::i() * z * grid.point(j)).exp() * (w * p))
                .sum();
            (y.ln(), v.norm().ln())
        })
        .collect();
    let fit = crate::experiments::rate::least_squares(&points);
    Ok(fit.0)
}

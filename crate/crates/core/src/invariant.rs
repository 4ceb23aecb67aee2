//! Stationary density of the mean-field dynamics and its time-dependent law.
//!
//! The invariant density solves the self-consistency equation
//! `π = exp(-2V - W ⋆ π) / Z_π`, computed here by damped Picard iteration on a
//! uniform grid. The law `μ_t` of the McKean–Vlasov process is propagated with an
//! explicit Scharfetter–Gummel finite-volume scheme for
//! `∂_t μ = ½ μ'' + ∂_x((V' + ½ W' ⋆ μ) μ)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ToeplitzKernel};
use crate::potentials::PotentialModel;

pub const DENSITY_MAGIC: &[u8; 5] = b"MKVD1";

/// Probability density sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
    derivative_values: Option<Vec<f64>>,
    normalizer: f64,
}

impl GridDensity {
    /// Wrap already-normalized values; checks nonnegativity and unit mass.
    pub fn new(grid: Grid, values: Vec<f64>, normalizer: f64) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(Error::GridMismatch(format!(
                "{} density values for {} grid points",
                values.len(),
                grid.n_points
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("density value {v} is negative or not finite")));
        }
        let mass = grid.trapezoid(&values);
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("density has mass {mass}, expected 1")));
        }
        Ok(Self {
            grid,
            values,
            derivative_values: None,
            normalizer,
        })
    }

    /// Normalize nonnegative values by their trapezoid integral.
    pub fn from_unnormalized(grid: Grid, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != grid.n_points {
            return Err(Error::GridMismatch(format!("{} values for {} grid points", raw.len(), grid.n_points)));
        }
        let z = grid.trapezoid(&raw);
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Config(format!("cannot normalize: integral is {z}")));
        }
        let values = raw.iter().map(|v| v / z).collect();
        Self::new(grid, values, z)
    }

    pub fn gaussian(grid: Grid, mean: f64, std: f64) -> Result<Self> {
        let raw = grid
            .points()
            .iter()
            .map(|x| (-0.5 * ((x - mean) / std).powi(2)).exp())
            .collect();
        Self::from_unnormalized(grid, raw)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative_values(&self) -> Option<&[f64]> {
        self.derivative_values.as_deref()
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn mass(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    pub fn at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.values, x).unwrap_or(0.0)
    }

    pub fn moment(&self, k: i32) -> f64 {
        let v: Vec<f64> = self
            .grid
            .points()
            .iter()
            .zip(&self.values)
            .map(|(x, p)| x.powi(k) * p)
            .collect();
        self.grid.trapezoid(&v)
    }

    pub fn variance(&self) -> f64 {
        let m = self.moment(1);
        self.moment(2) - m * m
    }

    /// Cumulative distribution at the grid nodes.
    pub fn cdf(&self) -> Vec<f64> {
        self.grid.cumulative(&self.values)
    }

    pub fn with_derivative(mut self, derivative: Vec<f64>) -> Result<Self> {
        if derivative.len() != self.grid.n_points {
            return Err(Error::GridMismatch("derivative length differs from grid".into()));
        }
        self.derivative_values = Some(derivative);
        Ok(self)
    }

    /// CSV with header `x,pi,pi_prime`; `pi_prime` is empty when unknown.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "pi", "pi_prime"])?;
        for (i, (x, p)) in self.grid.points().iter().zip(&self.values).enumerate() {
            let d = self
                .derivative_values
                .as_ref()
                .map(|d| d[i].to_string())
                .unwrap_or_default();
            w.write_record([x.to_string(), p.to_string(), d])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV written by [`write_csv`](Self::write_csv); values are renormalized.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "pi", "pi_prime"] {
            return Err(Error::Schema(format!("unexpected density CSV header {headers:?}")));
        }
        let (mut xs, mut ps, mut ds) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Schema(format!("bad number `{s}`: {e}")));
            xs.push(parse(&rec[0])?);
            ps.push(parse(&rec[1])?);
            if !rec[2].trim().is_empty() {
                ds.push(parse(&rec[2])?);
            }
        }
        if xs.len() < 2 {
            return Err(Error::Schema("density CSV needs at least two rows".into()));
        }
        let grid = Grid::new(xs[0], xs[xs.len() - 1], xs.len())?;
        let mut d = Self::from_unnormalized(grid, ps)?;
        if ds.len() == xs.len() {
            d.derivative_values = Some(ds);
        }
        Ok(d)
    }

    /// Binary layout (little endian): `MKVD1`, u64 n, f64 x_min, f64 x_max,
    /// f64 normalizer, u8 has_derivative, n × f64 values, [n × f64 derivative].
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DENSITY_MAGIC)?;
        w.write_all(&(self.grid.n_points as u64).to_le_bytes())?;
        for v in [self.grid.x_min, self.grid.x_max, self.normalizer] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[u8::from(self.derivative_values.is_some())])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(d) = &self.derivative_values {
            for v in d {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != DENSITY_MAGIC {
            return Err(Error::Schema("missing MKVD1 magic bytes".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let x_min = read_f64(&mut r)?;
        let x_max = read_f64(&mut r)?;
        let normalizer = read_f64(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let values = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let derivative_values = if flag[0] == 1 {
            Some((0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        let grid = Grid::new(x_min, x_max, n)?;
        let mut d = Self::new(grid, values, normalizer)?;
        d.derivative_values = derivative_values;
        Ok(d)
    }
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Snapshots `μ_t` of the mean-field law.
#[derive(Clone, Debug)]
pub struct DensityFlow {
    pub times: Vec<f64>,
    pub densities: Vec<GridDensity>,
}

impl DensityFlow {
    pub fn grid(&self) -> &Grid {
        self.densities[0].grid()
    }

    pub fn last(&self) -> &GridDensity {
        self.densities.last().expect("flow has at least the initial snapshot")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

/// Default solver grid `[-8, 8] × 4097`.
pub fn default_grid() -> Grid {
    Grid::symmetric(8.0, 4097).expect("valid default grid")
}

#[derive(Clone, Debug)]
pub struct InvariantSolution {
    pub density: GridDensity,
    pub iterations: usize,
    pub residual: f64,
    pub warnings: Vec<String>,
}

/// One application of `π ↦ exp(-2V - W ⋆ π) / Z`.
struct PicardMap {
    grid: Grid,
    two_v: Vec<f64>,
    kernel: Option<ToeplitzKernel>,
}

impl PicardMap {
    fn new(pm: &PotentialModel, grid: &Grid) -> Self {
        let two_v = grid.points().iter().map(|&x| 2.0 * pm.confinement.value(x)).collect();
        let kernel = (!pm.interaction.is_zero()).then(|| ToeplitzKernel::new(grid, |x| pm.interaction.value(x)));
        Self {
            grid: *grid,
            two_v,
            kernel,
        }
    }

    /// Returns the normalized image and its normalizer `Z_π`.
    fn apply(&self, pi: &[f64]) -> (Vec<f64>, f64) {
        let conv = self.kernel.as_ref().map(|k| k.convolve(&self.grid, pi));
        let exponent: Vec<f64> = match &conv {
            Some(c) => self.two_v.iter().zip(c).map(|(v, c)| -v - c).collect(),
            None => self.two_v.iter().map(|v| -v).collect(),
        };
        let shift = exponent.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
        let raw: Vec<f64> = exponent.iter().map(|e| (e - shift).exp()).collect();
        let z = self.grid.trapezoid(&raw);
        let values = raw.iter().map(|r| r / z).collect();
        (values, z * shift.exp())
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Damped Picard iteration for the invariant density, started from `exp(-2V)`.
pub fn solve_invariant(pm: &PotentialModel, grid: &Grid, options: &SolverOptions) -> Result<InvariantSolution> {
    if !(options.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", options.tol)));
    }
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::Config(format!("damping must lie in (0, 1], got {}", options.damping)));
    }
    let map = PicardMap::new(pm, grid);
    let mut warnings = Vec::new();
    let min_two_v = map.two_v.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let edge = map.two_v[0].min(map.two_v[grid.n_points - 1]) - min_two_v;
    if (-edge).exp() >= 1e-14 {
        warnings.push(format!(
            "grid [{}, {}] truncates the tails: exp(-2V) at the edge is {:.2e} of its peak",
            grid.x_min,
            grid.x_max,
            (-edge).exp()
        ));
    }
    let raw: Vec<f64> = map.two_v.iter().map(|v| (-(v - min_two_v)).exp()).collect();
    let z0 = grid.trapezoid(&raw);
    let mut pi: Vec<f64> = raw.iter().map(|r| r / z0).collect();
    let mut residual = f64::INFINITY;
    for iteration in 0..options.max_iter {
        let (target, z) = map.apply(&pi);
        residual = sup_diff(&pi, &target);
        if residual <= options.tol {
            let density = GridDensity {
                grid: *grid,
                values: pi,
                derivative_values: None,
                normalizer: z,
            };
            return Ok(InvariantSolution {
                density,
                iterations: iteration,
                residual,
                warnings,
            });
        }
        let d = options.damping;
        for (p, t) in pi.iter_mut().zip(&target) {
            *p = (1.0 - d) * *p + d * t;
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        residual,
    })
}

/// `sup |π - exp(-2V - W ⋆ π)/Z|` over the grid.
pub fn residual(pm: &PotentialModel, pi: &GridDensity) -> f64 {
    let map = PicardMap::new(pm, pi.grid());
    let (target, _) = map.apply(pi.values());
    sup_diff(pi.values(), &target)
}

/// `l(x) = π'(x)/π(x) = -2V'(x) - (W' ⋆ π)(x)` by direct quadrature.
pub fn exact_log_derivative(pm: &PotentialModel, pi: &GridDensity, x: f64) -> Result<f64> {
    let grid = pi.grid();
    if !grid.contains(x) {
        return Err(Error::Extrapolation {
            x,
            lo: grid.x_min,
            hi: grid.x_max,
        });
    }
    let conv: f64 = if pm.interaction.is_zero() {
        0.0
    } else {
        grid.trapezoid_weights()
            .iter()
            .zip(pi.values())
            .enumerate()
            .map(|(j, (w, p))| w * p * pm.interaction.prime(x - grid.point(j)))
            .sum()
    };
    Ok(-2.0 * pm.v_prime(x) - conv)
}

/// `W' ⋆ π` at every grid node.
pub fn force_convolution(pm: &PotentialModel, pi: &GridDensity) -> Vec<f64> {
    if pm.interaction.is_zero() {
        return vec![0.0; pi.grid().n_points];
    }
    let kernel = ToeplitzKernel::new(pi.grid(), |x| pm.interaction.prime(x));
    kernel.convolve(pi.grid(), pi.values())
}

/// `l` on every grid node.
pub fn log_derivative_on_grid(pm: &PotentialModel, pi: &GridDensity) -> Vec<f64> {
    let conv = force_convolution(pm, pi);
    pi.grid()
        .points()
        .iter()
        .zip(&conv)
        .map(|(&x, c)| -2.0 * pm.v_prime(x) - c)
        .collect()
}

/// Copy of `pi` with `π' = l π` filled in.
pub fn with_exact_derivative(pm: &PotentialModel, pi: &GridDensity) -> GridDensity {
    let l = log_derivative_on_grid(pm, pi);
    let d = l.iter().zip(pi.values()).map(|(l, p)| l * p).collect();
    let mut out = pi.clone();
    out.derivative_values = Some(d);
    out
}

/// Fitted Gaussian envelope `c1 e^{-C̃ x²} <= π(x) <= c2 e^{-C_V x²}` on `|x| <= x_range`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichFit {
    pub c1: f64,
    pub c2: f64,
    pub c_tilde: f64,
    pub c_v: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub passed: bool,
}

/// Largest `c1` and smallest `c2` for the envelope on `|x| <= x_range`.
///
/// A bound only counts as holding when the envelope ratio does not drift by more
/// than a factor 10 between the inner half `|x| <= x_range/2` and the outer band;
/// a finite window cannot otherwise tell a heavy tail from a Gaussian one.
pub fn check_gaussian_sandwich(pm: &PotentialModel, pi: &GridDensity, x_range: f64) -> SandwichFit {
    let c_tilde = pm.confinement.c_tilde_envelope();
    let c_v = pm.confinement.c_v();
    let grid = pi.grid();
    let (mut lo_in, mut lo_out) = (f64::INFINITY, f64::INFINITY);
    let (mut hi_in, mut hi_out) = (0.0_f64, 0.0_f64);
    for (x, &p) in grid.points().iter().zip(pi.values()) {
        let r = x.abs();
        if r > x_range {
            continue;
        }
        let lower = p * (c_tilde * x * x).exp();
        let upper = p * (c_v * x * x).exp();
        if r <= 0.5 * x_range {
            lo_in = lo_in.min(lower);
            hi_in = hi_in.max(upper);
        } else {
            lo_out = lo_out.min(lower);
            hi_out = hi_out.max(upper);
        }
    }
    let c1 = lo_in.min(lo_out);
    let c2 = hi_in.max(hi_out);
    let lower_ok = c1 > 0.0 && c1.is_finite() && (!lo_out.is_finite() || lo_out >= 0.1 * lo_in);
    let upper_ok = c2 > 0.0 && c2.is_finite() && hi_out <= 10.0 * hi_in;
    SandwichFit {
        c1,
        c2,
        c_tilde,
        c_v,
        lower_ok,
        upper_ok,
        passed: lower_ok && upper_ok,
    }
}

/// `B(z) = z / (e^z - 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Evolve `μ0` to `horizon` with step `dt`, recording every `record_every` steps.
pub fn fokker_planck_evolve(
    pm: &PotentialModel,
    mu0: &GridDensity,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<DensityFlow> {
    let grid = *mu0.grid();
    let dx = grid.spacing();
    if !(dt > 0.0) || dt > 0.4 * dx * dx * (1.0 + 1e-12) {
        return Err(Error::Instability {
            step: 0,
            reason: format!("dt = {dt} violates dt <= 0.4 dx^2 = {}", 0.4 * dx * dx),
        });
    }
    if !(horizon >= 0.0) || record_every == 0 {
        return Err(Error::Config("horizon must be >= 0 and record_every >= 1".into()));
    }
    let steps = (horizon / dt).round() as usize;
    if ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Config(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    let n = grid.n_points;
    let xs = grid.points();
    let v_face: Vec<f64> = (0..n - 1).map(|i| pm.v_prime(0.5 * (xs[i] + xs[i + 1]))).collect();
    let kernel = (!pm.interaction.is_zero()).then(|| ToeplitzKernel::new(&grid, |x| pm.interaction.prime(x)));
    let diffusion = 0.5;
    let mut mu = mu0.values().to_vec();
    let mut flux = vec![0.0; n + 1];
    let mut times = vec![0.0];
    let mut densities = vec![mu0.clone()];
    for step in 1..=steps {
        let conv = kernel.as_ref().map(|k| k.convolve(&grid, &mu));
        for i in 0..n - 1 {
            let mut b = v_face[i];
            if let Some(c) = &conv {
                b += 0.25 * (c[i] + c[i + 1]);
            }
            // velocity -b, Péclet number P = v dx / D
            let p = -b * dx / diffusion;
            flux[i + 1] = diffusion / dx * (bernoulli(-p) * mu[i] - bernoulli(p) * mu[i + 1]);
        }
        let mut negative = 0.0;
        let mut finite = true;
        for i in 0..n {
            mu[i] -= dt / dx * (flux[i + 1] - flux[i]);
            if mu[i] < 0.0 {
                negative -= mu[i] * dx;
            }
            finite &= mu[i].is_finite();
        }
        if !finite || negative > 1e-3 {
            return Err(Error::Instability {
                step,
                reason: format!("negative mass {negative:.3e}; reduce dt"),
            });
        }
        if step % record_every == 0 {
            let clipped: Vec<f64> = mu.iter().map(|v| v.max(0.0)).collect();
            times.push(step as f64 * dt);
            densities.push(GridDensity::from_unnormalized(grid, clipped)?);
        }
    }
    Ok(DensityFlow { times, densities })
}

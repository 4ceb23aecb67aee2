//! Euler–Maruyama simulation of the N-particle system and of its mean-field copies,
//! plus empirical statistics of an ensemble.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ToeplitzKernel};
use crate::invariant::{read_f64, read_u64, DensityFlow, GridDensity};
use crate::potentials::PotentialModel;

pub const ENSEMBLE_MAGIC: &[u8; 5] = b"MKVE1";

/// Positions of the particles beyond which a run is declared divergent.
const DIVERGENCE_BOUND: f64 = 1e6;

/// Largest ensemble for which the pairwise sum is evaluated exactly by default.
pub const EXACT_PAIRWISE_LIMIT: usize = 256;

/// Default cell width of the interaction mesh.
pub const DEFAULT_MESH_SPACING: f64 = 0.01;

/// Law of the initial positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Point { x: f64 },
    Gaussian { mean: f64, std: f64 },
    Positions { values: Vec<f64> },
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Point { x: 0.0 }
    }
}

impl InitialLaw {
    fn draw(&self, i: usize, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InitialLaw::Point { x } => *x,
            InitialLaw::Gaussian { mean, std } => mean + std * rng.sample::<f64, _>(StandardNormal),
            InitialLaw::Positions { values } => values[i],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            InitialLaw::Point { x } if !x.is_finite() => Err(Error::Config("initial point must be finite".into())),
            InitialLaw::Gaussian { std, .. } if !(*std > 0.0) => {
                Err(Error::Config(format!("initial std must be positive, got {std}")))
            }
            InitialLaw::Positions { values } if values.len() != n => Err(Error::Config(format!(
                "{} initial positions supplied for {n} particles",
                values.len()
            ))),
            _ => Ok(()),
        }
    }

    /// The initial law as a density on `grid` (only for Gaussian laws).
    pub fn density_on(&self, grid: Grid) -> Result<GridDensity> {
        match self {
            InitialLaw::Gaussian { mean, std } => GridDensity::gaussian(grid, *mean, *std),
            _ => Err(Error::Config(
                "the mean-field flow needs an initial law with a density (use `gaussian`)".into(),
            )),
        }
    }
}

/// How the pairwise force `Σ_j W'(x_i - x_j)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionMethod {
    /// Direct O(N²) sum.
    Exact,
    /// Cloud-in-cell deposit on a uniform mesh, FFT convolution, linear interpolation back.
    Mesh { spacing: f64 },
}

impl InteractionMethod {
    pub fn auto(n: usize) -> Self {
        if n <= EXACT_PAIRWISE_LIMIT {
            InteractionMethod::Exact
        } else {
            InteractionMethod::Mesh {
                spacing: DEFAULT_MESH_SPACING,
            }
        }
    }
}

/// Particle positions at the horizon together with the run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub model_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub model_id: String,
    pub n: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, horizon: f64, dt: f64, seed: u64, model_id: impl Into<String>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Empty("ensemble positions"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("ensemble positions must be finite".into()));
        }
        if !(horizon >= 0.0) || !(dt > 0.0) {
            return Err(Error::Config(format!("need T >= 0 and dt > 0, got T={horizon}, dt={dt}")));
        }
        Ok(Self {
            positions,
            horizon,
            dt,
            seed,
            model_id: model_id.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn sorted_positions(&self) -> Vec<f64> {
        let mut s = self.positions.clone();
        s.sort_by(f64::total_cmp);
        s
    }

    pub fn metadata(&self) -> EnsembleMetadata {
        EnsembleMetadata {
            model_id: self.model_id.clone(),
            n: self.n(),
            horizon: self.horizon,
            dt: self.dt,
            seed: self.seed,
        }
    }

    /// CSV `index,position` plus a `<path>.json` sidecar holding the metadata.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "position"])?;
        for (i, x) in self.positions.iter().enumerate() {
            w.write_record([i.to_string(), x.to_string()])?;
        }
        w.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.metadata())?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: EnsembleMetadata = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().collect::<Vec<_>>() != ["index", "position"] {
            return Err(Error::Schema("ensemble CSV header must be `index,position`".into()));
        }
        let mut positions = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            positions.push(
                rec[1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Schema(format!("bad position `{}`: {e}", &rec[1])))?,
            );
        }
        if positions.len() != meta.n {
            return Err(Error::Schema(format!("sidecar says {} particles, CSV has {}", meta.n, positions.len())));
        }
        Self::new(positions, meta.horizon, meta.dt, meta.seed, meta.model_id)
    }

    /// Binary layout (little endian): `MKVE1`, u64 n, f64 T, f64 dt, u64 seed, n × f64.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(ENSEMBLE_MAGIC)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for x in &self.positions {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.metadata())?)?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != ENSEMBLE_MAGIC {
            return Err(Error::Schema("missing MKVE1 magic bytes".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let horizon = read_f64(&mut r)?;
        let dt = read_f64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let positions = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let model_id = std::fs::read_to_string(sidecar_path(path))
            .ok()
            .and_then(|s| serde_json::from_str::<EnsembleMetadata>(&s).ok())
            .map(|m| m.model_id)
            .unwrap_or_default();
        Self::new(positions, horizon, dt, seed, model_id)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Independent stream for particle `i` under `seed`.
pub fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// `T = ⌈log N / λ⌉`, so that `e^{-λT} <= 1/N`.
pub fn balanced_horizon(pm: &PotentialModel, n: usize) -> f64 {
    ((n.max(2) as f64).ln() / pm.lambda()).ceil()
}

/// `N_T = (1/N + e^{-λT})^{-1}`.
pub fn effective_sample_size(pm: &PotentialModel, n: usize, horizon: f64) -> f64 {
    1.0 / (1.0 / n as f64 + (-pm.lambda() * horizon).exp())
}

/// Pairwise force `Σ_j W'(x_i - x_j)` via particle-mesh.
struct InteractionMesh {
    spacing: f64,
    half_width: f64,
    grid: Grid,
    kernel: ToeplitzKernel,
}

impl InteractionMesh {
    fn new(pm: &PotentialModel, spacing: f64, reach: f64) -> Self {
        let half_width = (reach.max(8.0) / 4.0).ceil() * 4.0;
        let n = (2.0 * half_width / spacing).round() as usize + 1;
        let grid = Grid::symmetric(half_width, n).expect("valid mesh");
        let kernel = ToeplitzKernel::new(&grid, |x| pm.interaction.prime(x));
        Self {
            spacing,
            half_width,
            grid,
            kernel,
        }
    }

    fn forces(&mut self, pm: &PotentialModel, xs: &[f64], out: &mut [f64]) {
        let reach = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if reach > self.half_width - 2.0 * self.spacing {
            *self = Self::new(pm, self.spacing, 1.25 * reach);
        }
        let h = self.grid.spacing();
        let x0 = self.grid.x_min;
        let cell = |x: f64| {
            let s = (x - x0) / h;
            let k = (s.floor() as usize).min(self.grid.n_points - 2);
            (k, s - k as f64)
        };
        let mut mass = vec![0.0; self.grid.n_points];
        for &x in xs {
            let (k, t) = cell(x);
            mass[k] += 1.0 - t;
            mass[k + 1] += t;
        }
        let field = self.kernel.convolve_weighted(&mass);
        for (o, &x) in out.iter_mut().zip(xs) {
            let (k, t) = cell(x);
            *o = (1.0 - t) * field[k] + t * field[k + 1];
        }
    }
}

enum ForceEvaluator {
    None,
    Exact,
    Mesh(InteractionMesh),
}

impl ForceEvaluator {
    fn new(pm: &PotentialModel, method: InteractionMethod, xs: &[f64]) -> Result<Self> {
        if pm.interaction.is_zero() {
            return Ok(ForceEvaluator::None);
        }
        Ok(match method {
            InteractionMethod::Exact => ForceEvaluator::Exact,
            InteractionMethod::Mesh { spacing } => {
                if !(spacing > 0.0) {
                    return Err(Error::Config(format!("mesh spacing must be positive, got {spacing}")));
                }
                let reach = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                ForceEvaluator::Mesh(InteractionMesh::new(pm, spacing, 1.25 * reach))
            }
        })
    }

    /// Writes the full drift `-V'(x_i) - (1/2N) Σ_j W'(x_i - x_j)` into `out`.
    fn drift(&mut self, pm: &PotentialModel, xs: &[f64], out: &mut [f64]) {
        let n = xs.len() as f64;
        match self {
            ForceEvaluator::None => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = -pm.v_prime(x);
                }
            }
            ForceEvaluator::Exact => {
                out.par_iter_mut().zip(xs.par_iter()).for_each(|(o, &x)| {
                    let s: f64 = xs.iter().map(|&y| pm.interaction.prime(x - y)).sum();
                    *o = -pm.v_prime(x) - s / (2.0 * n);
                });
            }
            ForceEvaluator::Mesh(mesh) => {
                mesh.forces(pm, xs, out);
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = -pm.v_prime(x) - *o / (2.0 * n);
                }
            }
        }
    }
}

fn check_step(pm: &PotentialModel, dt: f64, horizon: f64) -> Result<usize> {
    let bound = 0.1 / (pm.alpha() + pm.interaction.c_w()).max(1.0);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::Config(format!("dt = {dt} must lie in (0, {bound}] for this model")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Config(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    Ok(steps as usize)
}

fn check_divergence(xs: &[f64], step: usize) -> Result<()> {
    if let Some(x) = xs.iter().find(|x| !(x.abs() <= DIVERGENCE_BOUND)) {
        return Err(Error::Instability {
            step,
            reason: format!("particle reached {x:e}"),
        });
    }
    Ok(())
}

/// Simulate with the default interaction method for this ensemble size.
pub fn simulate_system(
    pm: &PotentialModel,
    n: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    init: &InitialLaw,
) -> Result<ParticleEnsemble> {
    simulate_system_with(pm, n, horizon, dt, seed, init, InteractionMethod::auto(n))
}

pub fn simulate_system_with(
    pm: &PotentialModel,
    n: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    init: &InitialLaw,
    method: InteractionMethod,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::Empty("particle count"));
    }
    let steps = check_step(pm, dt, horizon)?;
    init.validate(n)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| particle_rng(seed, i)).collect();
    let xs: Vec<f64> = rngs.iter_mut().enumerate().map(|(i, r)| init.draw(i, r)).collect();
    let xs = evolve(pm, xs, &mut rngs, steps, dt, method)?;
    ParticleEnsemble::new(xs, horizon, dt, seed, pm.name.clone())
}

/// Simulate from given starting points, particle `i` driven by noise stream
/// `streams[i]` of `seed`. Permuting `x0` and `streams` together permutes the output.
pub fn simulate_streams(
    pm: &PotentialModel,
    x0: &[f64],
    streams: &[u64],
    horizon: f64,
    dt: f64,
    seed: u64,
    method: InteractionMethod,
) -> Result<ParticleEnsemble> {
    if x0.is_empty() {
        return Err(Error::Empty("particle count"));
    }
    if x0.len() != streams.len() {
        return Err(Error::Config(format!("{} starting points but {} streams", x0.len(), streams.len())));
    }
    let steps = check_step(pm, dt, horizon)?;
    let mut rngs: Vec<ChaCha8Rng> = streams
        .iter()
        .map(|&s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        })
        .collect();
    let xs = evolve(pm, x0.to_vec(), &mut rngs, steps, dt, method)?;
    ParticleEnsemble::new(xs, horizon, dt, seed, pm.name.clone())
}

fn evolve(
    pm: &PotentialModel,
    mut xs: Vec<f64>,
    rngs: &mut [ChaCha8Rng],
    steps: usize,
    dt: f64,
    method: InteractionMethod,
) -> Result<Vec<f64>> {
    let mut forces = ForceEvaluator::new(pm, method, &xs)?;
    let mut drift = vec![0.0; xs.len()];
    let sqrt_dt = dt.sqrt();
    for step in 1..=steps {
        forces.drift(pm, &xs, &mut drift);
        for ((x, b), rng) in xs.iter_mut().zip(&drift).zip(rngs.iter_mut()) {
            let xi: f64 = rng.sample(StandardNormal);
            *x += b * dt + sqrt_dt * xi;
        }
        check_divergence(&xs, step)?;
    }
    Ok(xs)
}

/// System particles and their mean-field copies driven by the same noise.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPaths {
    pub system_positions: Vec<f64>,
    pub copy_positions: Vec<f64>,
    pub seed: u64,
}

impl CoupledPaths {
    /// `mean |X - X̄|^k`.
    pub fn mean_abs_gap_power(&self, k: i32) -> f64 {
        let n = self.system_positions.len() as f64;
        self.system_positions
            .iter()
            .zip(&self.copy_positions)
            .map(|(x, y)| (x - y).abs().powi(k))
            .sum::<f64>()
            / n
    }
}

/// `½ (W' ⋆ μ_t)` tabulated on the flow grid for every snapshot.
struct MeanFieldTable {
    grid: Grid,
    weights_times_mu: Vec<Vec<f64>>,
    half_conv: Vec<Vec<f64>>,
}

impl MeanFieldTable {
    fn new(pm: &PotentialModel, flow: &DensityFlow) -> Self {
        let grid = *flow.grid();
        let weights = grid.trapezoid_weights();
        let kernel = (!pm.interaction.is_zero()).then(|| ToeplitzKernel::new(&grid, |x| pm.interaction.prime(x)));
        let mut half_conv = Vec::with_capacity(flow.densities.len());
        let mut weights_times_mu = Vec::with_capacity(flow.densities.len());
        for mu in &flow.densities {
            let wm: Vec<f64> = weights.iter().zip(mu.values()).map(|(w, m)| w * m).collect();
            half_conv.push(match &kernel {
                Some(k) => k.convolve_weighted(&wm).iter().map(|c| 0.5 * c).collect(),
                None => vec![0.0; grid.n_points],
            });
            weights_times_mu.push(wm);
        }
        Self {
            grid,
            weights_times_mu,
            half_conv,
        }
    }

    fn half_force(&self, pm: &PotentialModel, snapshot: usize, x: f64) -> f64 {
        if pm.interaction.is_zero() {
            return 0.0;
        }
        match self.grid.interpolate(&self.half_conv[snapshot], x) {
            Some(v) => v,
            None => {
                let wm = &self.weights_times_mu[snapshot];
                0.5 * wm
                    .iter()
                    .enumerate()
                    .map(|(j, m)| m * pm.interaction.prime(x - self.grid.point(j)))
                    .sum::<f64>()
            }
        }
    }
}

/// Simulate the particle system and its McKean–Vlasov copies with common noise.
///
/// The copies feel `-V'(x) - ½ (W' ⋆ μ_t)(x)` with `μ_t` read from `flow`,
/// which must hold one snapshot per simulation step.
pub fn simulate_coupled(
    pm: &PotentialModel,
    flow: &DensityFlow,
    n: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    init: &InitialLaw,
) -> Result<CoupledPaths> {
    if n == 0 {
        return Err(Error::Empty("particle count"));
    }
    let steps = check_step(pm, dt, horizon)?;
    init.validate(n)?;
    if flow.times.len() < steps + 1 {
        return Err(Error::GridMismatch(format!(
            "flow has {} snapshots, simulation needs {}",
            flow.times.len(),
            steps + 1
        )));
    }
    for s in 0..=steps {
        if (flow.times[s] - s as f64 * dt).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!(
                "flow snapshot {s} is at t = {}, expected {}",
                flow.times[s],
                s as f64 * dt
            )));
        }
    }
    let table = MeanFieldTable::new(pm, flow);
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| particle_rng(seed, i)).collect();
    let mut xs: Vec<f64> = rngs.iter_mut().enumerate().map(|(i, r)| init.draw(i, r)).collect();
    let mut copies = xs.clone();
    let mut forces = ForceEvaluator::new(pm, InteractionMethod::auto(n), &xs)?;
    let mut drift = vec![0.0; n];
    let sqrt_dt = dt.sqrt();
    for step in 1..=steps {
        forces.drift(pm, &xs, &mut drift);
        for i in 0..n {
            let xi: f64 = rngs[i].sample(StandardNormal);
            let y = copies[i];
            let copy_drift = -pm.v_prime(y) - table.half_force(pm, step - 1, y);
            xs[i] += drift[i] * dt + sqrt_dt * xi;
            copies[i] += copy_drift * dt + sqrt_dt * xi;
        }
        check_divergence(&xs, step)?;
        check_divergence(&copies, step)?;
    }
    Ok(CoupledPaths {
        system_positions: xs,
        copy_positions: copies,
        seed,
    })
}

/// Either an empirical sample or a gridded density.
#[derive(Clone, Copy, Debug)]
pub enum Measure<'a> {
    Sample(&'a [f64]),
    Density(&'a GridDensity),
}

/// 1-D Wasserstein-1 distance, `∫ |F_a - F_b| dx`.
pub fn wasserstein1(a: Measure<'_>, b: Measure<'_>) -> Result<f64> {
    match (a, b) {
        (Measure::Sample(a), Measure::Sample(b)) => w1_samples(a, b),
        (Measure::Sample(s), Measure::Density(d)) | (Measure::Density(d), Measure::Sample(s)) => w1_sample_density(s, d),
        (Measure::Density(a), Measure::Density(b)) => {
            if !a.grid().same_as(b.grid()) {
                return Err(Error::GridMismatch("W1 between densities on different grids".into()));
            }
            let (fa, fb) = (a.cdf(), b.cdf());
            let diff: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).collect();
            Ok(a.grid().trapezoid(&diff))
        }
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn w1_samples(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("W1 sample"));
    }
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    // merge the two step CDFs
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - last);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        last = next;
    }
    Ok(total)
}

/// `∫ |c - (p + q t)|` for `t` over an interval of width `w`, with the linear
/// function going from `p` to `p + q w`.
fn abs_linear_integral(c: f64, p: f64, q_end: f64, w: f64) -> f64 {
    let (d0, d1) = (c - p, c - q_end);
    if d0 * d1 >= 0.0 {
        0.5 * (d0.abs() + d1.abs()) * w
    } else {
        let root = d0 / (d0 - d1) * w;
        0.5 * (d0.abs() * root + d1.abs() * (w - root))
    }
}

fn w1_sample_density(sample: &[f64], d: &GridDensity) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("W1 sample"));
    }
    let s = sorted(sample);
    let grid = d.grid();
    let cdf = d.cdf();
    let n = s.len() as f64;
    let cdf_at = |x: f64| -> f64 {
        if x <= grid.x_min {
            0.0
        } else if x >= grid.x_max {
            1.0
        } else {
            grid.interpolate(&cdf, x).expect("inside grid")
        }
    };
    let mut knots: Vec<f64> = grid.points();
    knots.extend_from_slice(&s);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut total = 0.0;
    let mut k = 0usize; // sample points <= current left knot
    for w in knots.windows(2) {
        let (l, r) = (w[0], w[1]);
        while k < s.len() && s[k] <= l {
            k += 1;
        }
        let fa = k as f64 / n;
        total += abs_linear_integral(fa, cdf_at(l), cdf_at(r), r - l);
    }
    Ok(total)
}

/// `(1/N) Σ_j exp(i z X_j)`.
pub fn empirical_char_fn(positions: &[f64], z: Complex64) -> Result<Complex64> {
    if positions.is_empty() {
        return Err(Error::Empty("ensemble positions"));
    }
    let (y, a) = (z.re, z.im);
    let mut re = 0.0;
    let mut im = 0.0;
    for &x in positions {
        let damp = -a * x;
        if damp.abs() > 700.0 {
            return Err(Error::Overflow { what: "a*X", value: damp.abs() });
        }
        let m = damp.exp();
        let (s, c) = (y * x).sin_cos();
        re += m * c;
        im += m * s;
    }
    let n = positions.len() as f64;
    Ok(Complex64::new(re / n, im / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `E[X^k]` keyed by `k`.
    pub moments: BTreeMap<u32, f64>,
    pub c: f64,
    /// `E[exp(cX)]`.
    pub exp_plus: f64,
    /// `E[exp(-cX)]`.
    pub exp_minus: f64,
}

pub fn moment_report(positions: &[f64], orders: &[u32], c: f64) -> Result<MomentReport> {
    if positions.is_empty() {
        return Err(Error::Empty("ensemble positions"));
    }
    let reach = positions.iter().fold(0.0_f64, |m, x| m.max(x.abs())) * c.abs();
    if reach >= 700.0 {
        return Err(Error::Overflow { what: "c*X", value: reach });
    }
    let n = positions.len() as f64;
    let mean = |f: &dyn Fn(f64) -> f64| positions.iter().map(|&x| f(x)).sum::<f64>() / n;
    let moments = orders.iter().map(|&k| (k, mean(&|x| x.powi(k as i32)))).collect();
    Ok(MomentReport {
        moments,
        c,
        exp_plus: mean(&|x| (c * x).exp()),
        exp_minus: mean(&|x| (-c * x).exp()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::builtin_model;

    fn model(name: &str, pairs: &[(&str, f64)]) -> PotentialModel {
        let p: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        builtin_model(name, &p).unwrap()
    }

    #[test]
    fn trivial_horizon_returns_initial_draw() {
        let m = model("hermite", &[]);
        let e = simulate_system(&m, 1, 0.0, 0.01, 7, &InitialLaw::Point { x: 0.3 }).unwrap();
        assert_eq!(e.positions, vec![0.3]);
        let g = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let e = simulate_system(&m, 3, 0.0, 0.01, 7, &g).unwrap();
        let mut r = particle_rng(7, 2);
        assert_eq!(e.positions[2], r.sample::<f64, _>(StandardNormal));
    }

    #[test]
    fn step_size_and_horizon_are_validated() {
        let m = model("zero_interaction", &[("alpha", 1.0)]);
        let init = InitialLaw::default();
        assert!(simulate_system(&m, 10, 1.0, 0.2, 1, &init).unwrap_err().is_config_error());
        assert!(simulate_system(&m, 10, 1.005, 0.01, 1, &init).is_err());
        assert!(matches!(simulate_system(&m, 0, 1.0, 0.01, 1, &init), Err(Error::Empty(_))));
    }

    #[test]
    fn ou_variance_matches_closed_form() {
        let m = model("zero_interaction", &[("alpha", 1.0)]);
        let e = simulate_system(&m, 10_000, 5.0, 1e-3, 11, &InitialLaw::default()).unwrap();
        let n = e.n() as f64;
        let mean = e.positions.iter().sum::<f64>() / n;
        let var = e.positions.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = 0.5 * (1.0 - (-10.0_f64).exp());
        let se = exact * (2.0 / (n - 1.0)).sqrt();
        assert!((var - exact).abs() < 3.0 * se, "{var} vs {exact} (se {se})");
    }

    #[test]
    fn mesh_forces_match_exact_sum() {
        let m = model("hermite", &[]);
        let mut rng = particle_rng(3, 0);
        let xs: Vec<f64> = (0..500).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut exact = vec![0.0; xs.len()];
        let mut mesh = vec![0.0; xs.len()];
        ForceEvaluator::new(&m, InteractionMethod::Exact, &xs).unwrap().drift(&m, &xs, &mut exact);
        ForceEvaluator::new(&m, InteractionMethod::auto(xs.len()), &xs)
            .unwrap()
            .drift(&m, &xs, &mut mesh);
        let worst = exact.iter().zip(&mesh).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn mesh_grows_with_the_ensemble() {
        let m = model("hermite", &[]);
        let xs = vec![-30.0, 0.0, 25.0];
        let mut f = ForceEvaluator::new(&m, InteractionMethod::Mesh { spacing: 0.01 }, &[0.0]).unwrap();
        let mut out = vec![0.0; 3];
        f.drift(&m, &xs, &mut out);
        let mut exact = vec![0.0; 3];
        ForceEvaluator::Exact.drift(&m, &xs, &mut exact);
        for (a, b) in out.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let m = model("hermite", &[]);
        let init = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let a = simulate_system(&m, 300, 1.0, 0.01, 5, &init).unwrap();
        let b = simulate_system(&m, 300, 1.0, 0.01, 5, &init).unwrap();
        assert_eq!(a, b);
        let c = simulate_system(&m, 300, 1.0, 0.01, 6, &init).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn w1_examples() {
        let s = [0.3, -1.0, 2.0];
        assert_eq!(wasserstein1(Measure::Sample(&s), Measure::Sample(&s)).unwrap(), 0.0);
        assert_eq!(wasserstein1(Measure::Sample(&[0.0]), Measure::Sample(&[1.0])).unwrap(), 1.0);
        assert_eq!(wasserstein1(Measure::Sample(&[0.0, 2.0]), Measure::Sample(&[1.0, 3.0])).unwrap(), 1.0);
        assert!(wasserstein1(Measure::Sample(&[]), Measure::Sample(&[1.0])).is_err());
        // unequal sizes: {0} vs {0, 1} moves half the mass by 1
        let d = wasserstein1(Measure::Sample(&[0.0]), Measure::Sample(&[0.0, 1.0])).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn w1_sample_against_density() {
        let grid = Grid::symmetric(8.0, 4001).unwrap();
        let narrow = GridDensity::gaussian(grid, 1.0, 0.01).unwrap();
        // point mass at 0 vs (almost) point mass at 1
        let d = wasserstein1(Measure::Sample(&[0.0]), Measure::Density(&narrow)).unwrap();
        assert!((d - 1.0).abs() < 1e-4, "{d}");
        // density against itself through a fine sample of its quantiles
        let std = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let cdf = std.cdf();
        let xs = grid.points();
        let sample: Vec<f64> = (0..2000)
            .map(|k| {
                let u = (k as f64 + 0.5) / 2000.0;
                let j = cdf.partition_point(|&c| c < u);
                let t = (u - cdf[j - 1]) / (cdf[j] - cdf[j - 1]);
                xs[j - 1] + t * (xs[j] - xs[j - 1])
            })
            .collect();
        let d = wasserstein1(Measure::Density(&std), Measure::Sample(&sample)).unwrap();
        assert!(d < 2e-3, "{d}");
    }

    #[test]
    fn char_fn_examples() {
        let one = empirical_char_fn(&[0.0], Complex64::new(3.7, 0.4)).unwrap();
        assert_eq!(one, Complex64::new(1.0, 0.0));
        let v = empirical_char_fn(&[1.0, -1.0], Complex64::new(std::f64::consts::FRAC_PI_2, 0.0)).unwrap();
        assert!(v.norm() < 1e-15);
        let v = empirical_char_fn(&[1.0, -1.0], Complex64::new(0.0, 1.0)).unwrap();
        assert!((v.re - 1.0_f64.cosh()).abs() < 1e-15 && v.im.abs() < 1e-15);
        assert!(matches!(
            empirical_char_fn(&[800.0], Complex64::new(0.0, 1.0)),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn moment_examples() {
        let r = moment_report(&[0.0; 5], &[1, 2, 4], 1.0).unwrap();
        assert!(r.moments.values().all(|&v| v == 0.0));
        assert_eq!((r.exp_plus, r.exp_minus), (1.0, 1.0));
        assert!(moment_report(&[800.0], &[2], 1.0).is_err());
    }

    #[test]
    fn ou_stationary_moments() {
        let m = model("zero_interaction", &[("alpha", 1.0)]);
        let init = InitialLaw::Gaussian { mean: 0.0, std: 0.5_f64.sqrt() };
        let e = simulate_system(&m, 20_000, 1.0, 1e-3, 0, &init).unwrap();
        let r = moment_report(&e.positions, &[2, 4], 1.0).unwrap();
        let n = e.n() as f64;
        // standard errors from Gaussian moments: Var X² = 2σ⁴, Var X⁴ = 96σ⁸, Var e^X = e^{2σ²} - e^{σ²}
        let se2 = (2.0 * 0.25 / n).sqrt();
        let se4 = (96.0 * 0.0625 / n).sqrt();
        let se_exp = ((1.0_f64).exp() - 0.5_f64.exp()).sqrt() / n.sqrt();
        assert!((r.moments[&2] - 0.5).abs() < 3.0 * se2, "{}", r.moments[&2]);
        assert!((r.moments[&4] - 0.75).abs() < 3.0 * se4, "{}", r.moments[&4]);
        assert!((r.exp_plus - 0.25_f64.exp()).abs() < 3.0 * se_exp, "{}", r.exp_plus);
    }

    #[test]
    fn coupled_copies_coincide_without_interaction() {
        let m = model("zero_interaction", &[("alpha", 1.0)]);
        let grid = Grid::symmetric(8.0, 161).unwrap();
        let init = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let mu0 = init.density_on(grid).unwrap();
        let flow = crate::invariant::fokker_planck_evolve(&m, &mu0, 1.0, 1e-3, 10).unwrap();
        let c = simulate_coupled(&m, &flow, 200, 1.0, 0.01, 9, &init).unwrap();
        let gap = c.system_positions.iter().zip(&c.copy_positions).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(gap < 1e-12);
        // a flow sampled at the wrong times is rejected
        let coarse = crate::invariant::fokker_planck_evolve(&m, &mu0, 1.0, 1e-3, 20).unwrap();
        assert!(matches!(
            simulate_coupled(&m, &coarse, 10, 1.0, 0.01, 9, &init),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn ensemble_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = ParticleEnsemble::new(vec![0.1, -2.5, 1.0 / 3.0], 2.0, 0.01, 42, "hermite").unwrap();
        let p = dir.path().join("e.csv");
        e.write_csv(&p).unwrap();
        assert_eq!(ParticleEnsemble::read_csv(&p).unwrap(), e);
        let b = dir.path().join("e.bin");
        e.write_binary(&b).unwrap();
        assert_eq!(ParticleEnsemble::read_binary(&b).unwrap(), e);
        std::fs::write(&b, b"MKVX1").unwrap();
        assert!(matches!(ParticleEnsemble::read_binary(&b), Err(Error::Schema(_))));
    }

    #[test]
    fn balanced_horizon_and_effective_size() {
        let m = model("hermite", &[]);
        assert_eq!(balanced_horizon(&m, 4000), 30.0);
        let nt = effective_sample_size(&m, 10_000, 34.0);
        let lambda = 0.5 - 2.0 * 0.5 * (-1.5_f64).exp();
        let oracle = 1.0 / (1e-4 + (-lambda * 34.0).exp());
        assert!((nt - oracle).abs() < 1e-9 * oracle);
        assert!((nt - 5506.34).abs() < 0.01, "{nt}");
    }
}

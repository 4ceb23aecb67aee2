//! Seeded convergence sweeps over the ensemble size.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{C1Source, ExperimentConfig, HorizonRule};
use super::rate::{fit_rate, RateFit};
use crate::contrast::build_psi;
use crate::deconvolution::{
    density_line_transform, estimate_interaction, regularized_divide, DeconvolutionSettings, RegularizationMode,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::invariant::{check_gaussian_sandwich, log_derivative_on_grid, solve_invariant, GridDensity, SolverOptions};
use crate::kernel_estimators::{default_c1_hat, derive_config, estimate_density, make_kernel, EstimatorConfig};
use crate::particle_sim::{
    balanced_horizon, effective_sample_size, empirical_char_fn, simulate_system, wasserstein1, Measure,
};
use crate::potentials::PotentialModel;

pub const SCHEMA_VERSION: u32 = 1;

/// Metric names as they appear in `cells.csv`.
pub mod metric {
    pub const HORIZON: &str = "horizon";
    pub const N_T: &str = "n_t";
    pub const EPS_NT: &str = "eps_nt";
    pub const U: &str = "u";
    pub const ALPHA_HAT: &str = "alpha_hat";
    pub const ALPHA_SQ_ERROR: &str = "alpha_sq_error";
    pub const PSI_L2_ERROR: &str = "psi_l2_error";
    pub const W_PRIME_L2_ERROR: &str = "w_prime_l2_error";
    pub const W1: &str = "w1";
    pub const CHAR_FN_SQ_ERROR: &str = "char_fn_sq_error";
    pub const MIN_DEN_ORACLE: &str = "min_denominator_oracle_shift";
    pub const MIN_DEN_CLIP: &str = "min_denominator_clip";
    pub const WARNINGS: &str = "warnings";
}

/// Estimate and oracle curves of one cell, on the estimation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellArtifact {
    pub x: Vec<f64>,
    pub w_prime_hat: Vec<f64>,
    pub w_prime_true: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub psi_oracle: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Set when the cell failed; metrics are then empty.
    pub error: Option<String>,
    pub artifact: Option<CellArtifact>,
}

impl CellResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub n: usize,
    pub n_t: f64,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub rows: Vec<SizeRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Median,
    Mean,
    /// Square root of the mean.
    RootMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    N,
    NT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub label: String,
    pub metric: String,
    pub statistic: Statistic,
    pub against: Abscissa,
    pub theory: f64,
    pub band: Option<[f64; 2]>,
    pub fit: Option<RateFit>,
}

impl SlopeCheck {
    pub fn passed(&self) -> Option<bool> {
        match (self.band, self.fit) {
            (Some([lo, hi]), Some(f)) => Some(f.slope >= lo && f.slope <= hi),
            _ => None,
        }
    }

    pub fn resolvable(&self) -> bool {
        self.fit.map_or(false, |f| f.stderr <= self.theory.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub schema_version: u32,
    pub m: usize,
    pub eps: f64,
    pub c_tilde: f64,
    pub c_v: f64,
    pub gamma: f64,
    pub c_u: f64,
    pub failed_cells: usize,
    pub metrics: Vec<MetricSummary>,
    pub slopes: Vec<SlopeCheck>,
}

impl StudySummary {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn slope(&self, metric: &str) -> Option<&SlopeCheck> {
        self.slopes.iter().find(|s| s.metric == metric)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub summary: StudySummary,
}

/// Seed of cell `(n, replicate)`; independent of the sweep's other cells.
pub fn cell_seed(seed0: u64, n: usize, replicate: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed0);
    rng.set_stream(((n as u64) << 24) ^ replicate as u64);
    rng.next_u64()
}

pub fn horizon_for(rule: HorizonRule, pm: &PotentialModel, n: usize) -> f64 {
    match rule {
        HorizonRule::Fixed { value } => value,
        HorizonRule::Balanced => balanced_horizon(pm, n),
    }
}

/// Quantities shared by every cell.
struct Oracle {
    pm: PotentialModel,
    grid: Grid,
    pi: GridDensity,
    l_exact: GridFunction,
    w_prime: GridFunction,
    c1: f64,
    char_fn: Complex64,
}

impl Oracle {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let pm = cfg.model.build()?;
        let grid = Grid::symmetric(cfg.grid_half_width, cfg.grid_points)?;
        let pi = solve_invariant(&pm, &grid, &SolverOptions::default())?.density;
        let l_exact = GridFunction::new(grid, log_derivative_on_grid(&pm, &pi))?;
        let w_prime = GridFunction::from_fn(grid, |x| pm.interaction.prime(x));
        let c1 = check_gaussian_sandwich(&pm, &pi, 4.0_f64.min(cfg.grid_half_width)).c1;
        let z = Complex64::new(cfg.probe_z[0], cfg.probe_z[1]);
        let integrand: Vec<Complex64> =
            grid.points().iter().zip(pi.values()).map(|(&x, &p)| (Complex64::i() * z * x).exp() * p).collect();
        let w = grid.trapezoid_weights();
        let char_fn = integrand.iter().zip(&w).map(|(v, w)| v * w).sum();
        Ok(Self {
            pm,
            grid,
            pi,
            l_exact,
            w_prime,
            c1,
            char_fn,
        })
    }
}

fn estimator_config(cfg: &ExperimentConfig, o: &Oracle, positions: &[f64], n: usize, t: f64) -> Result<EstimatorConfig> {
    match cfg.c1_source {
        C1Source::Oracle => derive_config(&o.pm, n, t, cfg.m, cfg.eps, cfg.a, o.c1),
        C1Source::Data => {
            let draft = derive_config(&o.pm, n, t, cfg.m, cfg.eps, cfg.a, 1.0)?;
            let pi_hat = estimate_density(positions, &make_kernel(cfg.m)?, draft.h0, &o.grid)?;
            derive_config(&o.pm, n, t, cfg.m, cfg.eps, cfg.a, default_c1_hat(&pi_hat))
        }
    }
}

fn run_cell(cfg: &ExperimentConfig, o: &Oracle, n: usize, seed: u64) -> Result<(BTreeMap<String, f64>, Option<CellArtifact>)> {
    let t = horizon_for(cfg.horizon, &o.pm, n);
    let ensemble = simulate_system(&o.pm, n, t, cfg.dt, seed, &cfg.init)?;
    let xs = &ensemble.positions;
    let mut out = BTreeMap::new();
    out.insert(metric::HORIZON.to_string(), t);
    out.insert(metric::N_T.to_string(), effective_sample_size(&o.pm, n, t));
    out.insert(metric::W1.to_string(), wasserstein1(Measure::Sample(xs), Measure::Density(&o.pi))?);
    let z = Complex64::new(cfg.probe_z[0], cfg.probe_z[1]);
    out.insert(metric::CHAR_FN_SQ_ERROR.to_string(), (empirical_char_fn(xs, z)? - o.char_fn).norm_sqr());
    if !cfg.deconvolve {
        return Ok((out, None));
    }

    let est_cfg = estimator_config(cfg, o, xs, n, t)?;
    let mut settings = DeconvolutionSettings::new(cfg.a, est_cfg.eps_nt, cfg.mode);
    settings.y_max = cfg.y_max;
    settings.n_freq = cfg.n_freq;
    let est = estimate_interaction(xs, &o.pm, &est_cfg, &settings, &o.grid, Some(&o.pi))?;
    let (psi_oracle, _) = build_psi(
        &o.l_exact,
        o.pm.alpha(),
        |y| o.pm.confinement.tilde_v_prime(y),
        est_cfg.eps,
        est_cfg.u,
        &o.grid,
    )?;

    // floor of the mode not used by the estimate, on the same transforms
    let other = match cfg.mode {
        RegularizationMode::OracleShift => RegularizationMode::Clip,
        RegularizationMode::Clip => RegularizationMode::OracleShift,
    };
    let f_pi = density_line_transform(&o.pi, cfg.a, &settings.frequency_grid()?)?;
    let other_div = regularized_divide(
        &est.f_psi,
        &est.f_empirical,
        Some(&f_pi),
        &DeconvolutionSettings { mode: other, ..settings },
    )?;
    let (den_oracle, den_clip) = match cfg.mode {
        RegularizationMode::OracleShift => (est.division.min_denominator, other_div.min_denominator),
        RegularizationMode::Clip => (other_div.min_denominator, est.division.min_denominator),
    };

    out.insert(metric::EPS_NT.to_string(), est_cfg.eps_nt);
    out.insert(metric::U.to_string(), est_cfg.u);
    out.insert(metric::ALPHA_HAT.to_string(), est.alpha_hat);
    out.insert(metric::ALPHA_SQ_ERROR.to_string(), (est.alpha_hat - o.pm.alpha()).powi(2));
    out.insert(metric::PSI_L2_ERROR.to_string(), est.psi.l2_distance(&psi_oracle)?);
    out.insert(metric::W_PRIME_L2_ERROR.to_string(), est.w_prime.l2_distance(&o.w_prime)?);
    out.insert(metric::MIN_DEN_ORACLE.to_string(), den_oracle);
    out.insert(metric::MIN_DEN_CLIP.to_string(), den_clip);
    out.insert(metric::WARNINGS.to_string(), est.warnings.len() as f64);

    let artifact = cfg.artifacts.then(|| CellArtifact {
        x: o.grid.points(),
        w_prime_hat: est.w_prime.values.clone(),
        w_prime_true: o.w_prime.values.clone(),
        psi_hat: est.psi.values.clone(),
        psi_oracle: psi_oracle.values,
    });
    Ok((out, artifact))
}

/// Simulate, estimate and score every `(N, replicate)` cell. A failing cell is
/// recorded with its error and skipped by the aggregates.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let oracle = Oracle::new(cfg)?;
    let jobs: Vec<(usize, usize)> =
        cfg.n_list.iter().flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r))).collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(n, replicate)| {
            let seed = cell_seed(cfg.seed0, n, replicate);
            let outcome = run_cell(cfg, &oracle, n, seed).and_then(|(metrics, artifact)| {
                match metrics.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                    Some((k, v)) => Err(Error::Instability {
                        step: 0,
                        reason: format!("metric {k} = {v}"),
                    }),
                    None => Ok((metrics, artifact)),
                }
            });
            match outcome {
                Ok((metrics, artifact)) => CellResult {
                    n,
                    replicate,
                    seed,
                    metrics,
                    error: None,
                    artifact,
                },
                Err(e) => CellResult {
                    n,
                    replicate,
                    seed,
                    metrics: BTreeMap::new(),
                    error: Some(e.to_string()),
                    artifact: None,
                },
            }
        })
        .collect();
    let summary = summarize(cfg, &oracle.pm, &cells)?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        cells,
        summary,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

fn metric_summary(cfg: &ExperimentConfig, pm: &PotentialModel, cells: &[CellResult], name: &str) -> MetricSummary {
    let rows = cfg
        .n_list
        .iter()
        .filter_map(|&n| {
            let mut v: Vec<f64> = cells.iter().filter(|c| c.n == n).filter_map(|c| c.get(name)).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(SizeRow {
                n,
                n_t: effective_sample_size(pm, n, horizon_for(cfg.horizon, pm, n)),
                count: v.len(),
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
                mean: v.iter().sum::<f64>() / v.len() as f64,
            })
        })
        .collect();
    MetricSummary {
        metric: name.to_string(),
        rows,
    }
}

fn slope_check(
    summary: &MetricSummary,
    label: &str,
    statistic: Statistic,
    against: Abscissa,
    theory: f64,
    band: Option<[f64; 2]>,
) -> SlopeCheck {
    let points: Vec<(f64, f64)> = summary
        .rows
        .iter()
        .map(|r| {
            let x = match against {
                Abscissa::N => r.n as f64,
                Abscissa::NT => r.n_t,
            };
            let y = match statistic {
                Statistic::Median => r.median,
                Statistic::Mean => r.mean,
                Statistic::RootMean => r.mean.sqrt(),
            };
            (x, y)
        })
        .collect();
    SlopeCheck {
        label: label.to_string(),
        metric: summary.metric.clone(),
        statistic,
        against,
        theory,
        band,
        fit: fit_rate(&points).ok(),
    }
}

pub fn summarize(cfg: &ExperimentConfig, pm: &PotentialModel, cells: &[CellResult]) -> Result<StudySummary> {
    let probe = derive_config(pm, cfg.n_list[0], horizon_for(cfg.horizon, pm, cfg.n_list[0]), cfg.m, cfg.eps, cfg.a, 1.0)?;
    let names = [
        metric::W1,
        metric::CHAR_FN_SQ_ERROR,
        metric::ALPHA_HAT,
        metric::ALPHA_SQ_ERROR,
        metric::PSI_L2_ERROR,
        metric::W_PRIME_L2_ERROR,
        metric::EPS_NT,
        metric::MIN_DEN_ORACLE,
        metric::MIN_DEN_CLIP,
    ];
    let metrics: Vec<MetricSummary> = names.iter().map(|n| metric_summary(cfg, pm, cells, n)).collect();
    let by = |n: &str| metrics.iter().find(|m| m.metric == n).unwrap();
    let slopes = vec![
        slope_check(by(metric::W1), "W1", Statistic::Median, Abscissa::N, -0.5, Some([-0.8, -0.2])),
        slope_check(
            by(metric::CHAR_FN_SQ_ERROR),
            "char-fn MSE",
            Statistic::Mean,
            Abscissa::NT,
            -1.0,
            Some([-1.3, -0.7]),
        ),
        slope_check(by(metric::ALPHA_SQ_ERROR), "alpha RMSE", Statistic::RootMean, Abscissa::NT, -probe.gamma / 2.0, None),
        slope_check(by(metric::PSI_L2_ERROR), "Psi L2", Statistic::Median, Abscissa::NT, -probe.gamma / 2.0, None),
        slope_check(by(metric::W_PRIME_L2_ERROR), "W' L2", Statistic::Median, Abscissa::NT, -probe.gamma / 2.0, None),
    ];
    Ok(StudySummary {
        schema_version: SCHEMA_VERSION,
        m: cfg.m,
        eps: cfg.eps,
        c_tilde: probe.c_tilde,
        c_v: probe.c_v,
        gamma: probe.gamma,
        c_u: probe.c_u,
        failed_cells: cells.iter().filter(|c| c.error.is_some()).count(),
        metrics,
        slopes,
    })
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mkv_core::deconvolution::{estimate_interaction, DeconvolutionSettings, RegularizationMode};
use mkv_core::experiments::{self, ExperimentConfig};
use mkv_core::grid::Grid;
use mkv_core::invariant::{check_gaussian_sandwich, solve_invariant, SolverOptions};
use mkv_core::kernel_estimators::{default_c1_hat, derive_config, estimate_density, make_kernel};
use mkv_core::particle_sim::{balanced_horizon, simulate_system, InitialLaw, ParticleEnsemble};
use mkv_core::potentials::{builtin_model, validate_assumptions, PotentialModel};
use mkv_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mkv", version, about = "Mean-field particle simulation and interaction estimation")]
struct Cli {
    /// Override the seed (seed0 for studies).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the regularization mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Override the line offset.
    #[arg(long, global = true, allow_negative_numbers = true)]
    a: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Clip,
}

impl From<Mode> for RegularizationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Oracle => RegularizationMode::OracleShift,
            Mode::Clip => RegularizationMode::Clip,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in model name.
    #[arg(long, default_value = "hermite")]
    model: String,
    /// Model parameter as key=value; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

impl ModelArgs {
    fn build(&self) -> Result<PotentialModel> {
        let p: BTreeMap<String, f64> = self.params.iter().cloned().collect();
        builtin_model(&self.model, &p)
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 8.0)]
    half_width: f64,
    #[arg(long, default_value_t = 1025)]
    points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<Grid> {
        Grid::symmetric(self.half_width, self.points)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a study config and check the model assumptions.
    Validate { config: PathBuf },
    /// Solve for the invariant density and write `x,pi,pi_prime`.
    SolveInvariant {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Simulate the particle system and write the final positions.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: usize,
        /// Time horizon; defaults to ceil(log N / lambda).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Standard deviation of the centred Gaussian initial law.
        #[arg(long, default_value_t = 1.0)]
        init_std: f64,
    },
    /// Estimate W' from an ensemble CSV written by `simulate`.
    Estimate {
        #[command(flatten)]
        model: ModelArgs,
        ensemble: PathBuf,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 0.9)]
        eps: f64,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Run a convergence study from a TOML config, persist it and print the report.
    Study { config: PathBuf },
    /// Print the report of a persisted study.
    Report { dir: PathBuf },
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s}"))?;
    let v: f64 = v.parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.to_string(), v))
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_estimate(path: &Path, xs: &[f64], w: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(["x", "w_prime_hat"])?;
    for (x, v) in xs.iter().zip(w) {
        wr.write_record([x.to_string(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let report = validate_assumptions(&cfg.model.build()?);
            println!("{report}");
            if !report.passed {
                return Err(Error::Assumption(format!("model {} fails its assumptions", cfg.model.name)));
            }
            println!("config ok: {} sizes x {} replicates", cfg.n_list.len(), cfg.replicates);
        }
        Command::SolveInvariant { model, grid } => {
            let pm = model.build()?;
            let sol = solve_invariant(&pm, &grid.grid()?, &SolverOptions::default())?;
            for w in &sol.warnings {
                eprintln!("warning: {w}");
            }
            let path = out_path(cli, "invariant.csv");
            sol.density.write_csv(&path)?;
            println!(
                "{} iterations, residual {:.3e}, variance {:.6}; wrote {}",
                sol.iterations,
                sol.residual,
                sol.density.variance(),
                path.display()
            );
        }
        Command::Simulate {
            model,
            n,
            horizon,
            dt,
            init_std,
        } => {
            let pm = model.build()?;
            let t = horizon.unwrap_or_else(|| balanced_horizon(&pm, *n));
            let init = InitialLaw::Gaussian {
                mean: 0.0,
                std: *init_std,
            };
            let e = simulate_system(&pm, *n, t, *dt, cli.seed.unwrap_or(0), &init)?;
            let path = out_path(cli, "ensemble.csv");
            e.write_csv(&path)?;
            println!("N = {n}, T = {t}, dt = {dt}, seed = {}; wrote {}", e.seed, path.display());
        }
        Command::Estimate {
            model,
            ensemble,
            m,
            eps,
            grid,
        } => {
            let pm = model.build()?;
            let e = ParticleEnsemble::read_csv(ensemble)?;
            let grid = grid.grid()?;
            let mode: RegularizationMode = cli.mode.unwrap_or(Mode::Clip).into();
            let a = cli.a.unwrap_or(0.0);
            let oracle = match mode {
                RegularizationMode::OracleShift => Some(solve_invariant(&pm, &grid, &SolverOptions::default())?.density),
                RegularizationMode::Clip => None,
            };
            let c1 = match &oracle {
                Some(pi) => check_gaussian_sandwich(&pm, pi, 4.0).c1,
                None => {
                    let draft = derive_config(&pm, e.n(), e.horizon, *m, *eps, a, 1.0)?;
                    default_c1_hat(&estimate_density(&e.positions, &make_kernel(*m)?, draft.h0, &grid)?)
                }
            };
            let cfg = derive_config(&pm, e.n(), e.horizon, *m, *eps, a, c1)?;
            let s = DeconvolutionSettings::new(a, cfg.eps_nt, mode);
            let est = estimate_interaction(&e.positions, &pm, &cfg, &s, &grid, oracle.as_ref())?;
            for w in &est.warnings {
                eprintln!("warning: {w}");
            }
            let path = out_path(cli, "w_prime_hat.csv");
            write_estimate(&path, &grid.points(), &est.w_prime.values)?;
            println!(
                "N_T = {:.1}, h0 = {:.4}, h1 = {:.4}, U = {:.4}, eps_NT = {:.4}, alpha_hat = {:.6}, min|den| = {:.4}; wrote {}",
                cfg.n_t,
                cfg.h0,
                cfg.h1,
                cfg.u,
                cfg.eps_nt,
                est.alpha_hat,
                est.division.min_denominator,
                path.display()
            );
        }
        Command::Study { config } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(s) = cli.seed {
                cfg.seed0 = s;
            }
            if let Some(m) = cli.mode {
                cfg.mode = m.into();
            }
            if let Some(a) = cli.a {
                cfg.a = a;
            }
            if let Some(o) = &cli.out {
                cfg.output_dir = Some(o.clone());
            }
            cfg.validate()?;
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("study_out"));
            let result = experiments::run_convergence_study(&cfg)?;
            experiments::persist(&result, &dir)?;
            let rep = experiments::report(&result);
            rep.write(&dir)?;
            print!("{}", rep.text);
            for c in result.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!("cell N={} r={} failed: {}", c.n, c.replicate, c.error.as_deref().unwrap_or(""));
            }
        }
        Command::Report { dir } => {
            let result = experiments::load(dir)?;
            let rep = experiments::report(&result);
            rep.write(cli.out.as_deref().unwrap_or(dir))?;
            print!("{}", rep.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

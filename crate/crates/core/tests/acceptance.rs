//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use num_complex::Complex64;

use mkv_core::contrast::{estimate_alpha, WeightFunction};
use mkv_core::deconvolution::{
    decay_slope, density_line_transform, forward_line_transform, fts_diagnostic, fts_diagnostic_with,
    inverse_line_transform, regularized_divide, DeconvolutionSettings, RegularizationMode,
};
use mkv_core::experiments::study::{median, metric};
use mkv_core::experiments::{fit_rate, run_convergence_study, ExperimentConfig, ExperimentResult};
use mkv_core::grid::{gauss_legendre, integrate_gl, Grid, GridFunction};
use mkv_core::invariant::{
    check_gaussian_sandwich, default_grid, fokker_planck_evolve, force_convolution, residual, solve_invariant, SolverOptions,
};
use mkv_core::kernel_estimators::make_kernel;
use mkv_core::particle_sim::{simulate_coupled, simulate_system, InitialLaw};
use mkv_core::potentials::{builtin_model, PotentialModel};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn model(name: &str, params: &[(&str, f64)]) -> PotentialModel {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin_model(name, &p).unwrap()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn values_by_n(r: &ExperimentResult, name: &str, max_replicate: usize) -> Vec<(usize, f64, Vec<f64>)> {
    r.config
        .n_list
        .iter()
        .map(|&n| {
            let cells: Vec<_> = r.cells.iter().filter(|c| c.n == n && c.replicate < max_replicate).collect();
            let n_t = cells.iter().find_map(|c| c.get(metric::N_T)).unwrap_or(f64::NAN);
            (n, n_t, cells.iter().filter_map(|c| c.get(name)).collect())
        })
        .collect()
}

fn c1_kernel_moments() -> Outcome {
    let rule = gauss_legendre(20);
    let mut worst_zero = 0.0_f64;
    let mut smallest_m = f64::INFINITY;
    for m in [2usize, 4, 6] {
        let k = make_kernel(m).unwrap();
        let r = k.support_radius;
        let mom = |j: i32| integrate_gl(|x| x.powi(j) * k.eval(x), -r, r, 200, &rule);
        worst_zero = worst_zero.max((mom(0) - 1.0).abs());
        for j in 1..m as i32 {
            worst_zero = worst_zero.max(mom(j).abs());
        }
        smallest_m = smallest_m.min(mom(m as i32).abs());
    }
    outcome(
        worst_zero < 1e-8 && smallest_m > 0.1,
        format!("max |moment error| j<m = {worst_zero:.2e} (< 1e-8), min |∫x^m K| = {smallest_m:.3} (> 0.1)"),
    )
}

fn c2_invariant_fixed_point() -> Outcome {
    let pm = model("hermite", &[("alpha", 0.5), ("theta", 0.5)]);
    let grid = default_grid();
    let pi = solve_invariant(&pm, &grid, &SolverOptions::default()).unwrap().density;
    let res = residual(&pm, &pi);
    let mass = pi.mass();
    let v = pi.values();
    let sym = (0..v.len()).fold(0.0_f64, |m, i| m.max((v[i] - v[v.len() - 1 - i]).abs()));
    let fit = check_gaussian_sandwich(&pm, &pi, 4.0);
    outcome(
        res < 1e-8 && (mass - 1.0).abs() < 1e-9 && sym < 1e-9 && fit.passed,
        format!(
            "residual {res:.2e}, |mass-1| {:.2e}, symmetry {sym:.2e}, sandwich c1 = {:.4} c2 = {:.4} {}",
            (mass - 1.0).abs(),
            fit.c1,
            fit.c2,
            if fit.passed { "passes" } else { "fails" }
        ),
    )
}

fn c3_gaussian_oracle() -> Outcome {
    let pm = model("zero_interaction", &[("alpha", 1.0)]);
    let pi = solve_invariant(&pm, &default_grid(), &SolverOptions::default()).unwrap().density;
    let at0 = (pi.at(0.0) - 1.0 / PI.sqrt()).abs();
    let y = Grid::symmetric(10.0, 2001).unwrap();
    let f = density_line_transform(&pi, 0.0, &y).unwrap();
    let worst = (0..y.n_points).fold(0.0_f64, |m, k| {
        let exact = (-y.point(k).powi(2) / 4.0).exp();
        m.max((f.values[k] - Complex64::new(exact, 0.0)).norm())
    });
    outcome(
        at0 < 1e-6 && worst < 1e-5,
        format!("|π(0) − 1/√π| = {at0:.2e}, sup |F(π) − e^(−y²/4)| on |y| ≤ 10 = {worst:.2e}"),
    )
}

fn c4_ou_dynamics() -> Outcome {
    let pm = model("zero_interaction", &[("alpha", 1.0)]);
    let n = 10_000;
    let e = simulate_system(&pm, n, 5.0, 1e-3, 0, &InitialLaw::Point { x: 0.0 }).unwrap();
    let mean = e.positions.iter().sum::<f64>() / n as f64;
    let var = e.positions.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let exact = 0.5 * (1.0 - (-10.0_f64).exp());
    let se = exact * (2.0 / (n - 1) as f64).sqrt();
    let z = (var - exact) / se;
    outcome(z.abs() < 3.0, format!("sample variance {var:.5} vs {exact:.5}, z = {z:.2} (|z| < 3)"))
}

fn chaos_study() -> ExperimentResult {
    let mut cfg = ExperimentConfig::new("hermite", &[], vec![250, 1000, 4000]);
    cfg.replicates = 50;
    cfg.seed0 = 11;
    cfg.deconvolve = false;
    cfg.artifacts = false;
    run_convergence_study(&cfg).unwrap()
}

fn c5_propagation_of_chaos(r: &ExperimentResult) -> Outcome {
    let rows = values_by_n(r, metric::W1, 20);
    let medians: Vec<f64> = rows.iter().map(|(_, _, v)| median(v)).collect();
    let points: Vec<(f64, f64)> = rows.iter().zip(&medians).map(|((n, _, _), m)| (*n as f64, *m)).collect();
    let fit = fit_rate(&points).unwrap();
    outcome(
        (-0.8..=-0.2).contains(&fit.slope),
        format!("median W1 {} over 20 seeds; slope vs N {:.3} ± {:.3} (band [−0.8, −0.2])", fmt(&medians), fit.slope, fit.stderr),
    )
}

fn c6_dual_formulation(r: &ExperimentResult) -> Outcome {
    let rows = values_by_n(r, metric::CHAR_FN_SQ_ERROR, usize::MAX);
    let points: Vec<(f64, f64)> = rows.iter().map(|(_, n_t, v)| (*n_t, v.iter().sum::<f64>() / v.len() as f64)).collect();
    let fit = fit_rate(&points).unwrap();
    let mse: Vec<f64> = points.iter().map(|p| p.1).collect();
    outcome(
        (-1.3..=-0.7).contains(&fit.slope),
        format!(
            "E|F(Π)(2+i) − F(Π_N,T)(2+i)|² {} over {} seeds; slope vs N_T {:.3} ± {:.3} (band [−1.3, −0.7])",
            fmt(&mse),
            rows[0].2.len(),
            fit.slope,
            fit.stderr
        ),
    )
}

fn c7_coupled_moments() -> Outcome {
    let pm = model("hermite", &[]);
    let init = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
    let grid = Grid::symmetric(8.0, 641).unwrap();
    let (horizon, dt, fp_dt) = (10.0, 0.01, 2.5e-4);
    let flow = fokker_planck_evolve(&pm, &init.density_on(grid).unwrap(), horizon, fp_dt, 40).unwrap();
    let sizes = [250usize, 1000, 4000];
    let seeds = 4;
    let mut second = Vec::new();
    let mut fourth = Vec::new();
    for &n in &sizes {
        let (mut s2, mut s4) = (0.0, 0.0);
        for seed in 0..seeds {
            let c = simulate_coupled(&pm, &flow, n, horizon, dt, 100 + seed, &init).unwrap();
            s2 += c.mean_abs_gap_power(2);
            s4 += c.mean_abs_gap_power(4);
        }
        second.push(s2 / seeds as f64);
        fourth.push(s4 / seeds as f64);
    }
    let points: Vec<(f64, f64)> = sizes.iter().zip(&fourth).map(|(&n, &v)| (n as f64, v)).collect();
    let fit = fit_rate(&points).unwrap();
    outcome(
        strictly_decreasing(&second) && strictly_decreasing(&fourth) && fit.slope <= -0.6,
        format!(
            "mean (X−X̄)² {}, (X−X̄)⁴ {}; fourth-moment slope {:.3} (≤ −0.6)",
            fmt(&second),
            fmt(&fourth),
            fit.slope
        ),
    )
}

fn c8_transforms() -> Outcome {
    let g = Grid::symmetric(8.0, 1025).unwrap();
    let gauss = GridFunction::from_fn(g, |x| (-x * x).exp());
    let y = Grid::symmetric(20.0, 4096).unwrap();
    let mut errs = Vec::new();
    for a in [0.0, 0.5] {
        let f = forward_line_transform(&gauss, a, &y).unwrap();
        let back = inverse_line_transform(&f, &g).unwrap().function;
        errs.push(back.values.iter().zip(&gauss.values).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs())));
    }
    let gb = Grid::symmetric(4.0, 1601).unwrap();
    let bump = GridFunction::from_fn(gb, |x| if x.abs() < 1.0 { (-1.0 / (1.0 - x * x)).exp() } else { 0.0 });
    let yb = Grid::symmetric(60.0, 8193).unwrap();
    let f = forward_line_transform(&bump, 0.0, &yb).unwrap();
    let direct = bump.l2_norm().powi(2);
    let spectral = yb.trapezoid(&f.values.iter().map(|v| v.norm_sqr()).collect::<Vec<_>>()) / (2.0 * PI);
    let parseval = ((direct - spectral) / direct).abs();
    outcome(
        errs[0] < 1e-6 && errs[1] < 1e-4 && parseval < 1e-4,
        format!(
            "Gaussian round trip sup error {:.2e} (a=0, < 1e-6), {:.2e} (a=0.5, < 1e-4); Parseval relative error {parseval:.2e} (< 1e-4)",
            errs[0], errs[1]
        ),
    )
}

fn c9_deconvolution_identity() -> Outcome {
    let pm = model("hermite", &[]);
    // W'⋆π has a wider tail than π; the grid must hold it, since its truncation
    // error is divided by |F(π)| ≈ e^{-0.45 y²} at high frequency
    let g = Grid::symmetric(12.0, 1537).unwrap();
    let pi = solve_invariant(&pm, &g, &SolverOptions::default()).unwrap().density;
    let psi = GridFunction::new(g, force_convolution(&pm, &pi).iter().map(|v| -v).collect()).unwrap();
    let y = Grid::symmetric(8.0, 2048).unwrap();
    let f_psi = forward_line_transform(&psi, 0.0, &y).unwrap();
    let f_pi = density_line_transform(&pi, 0.0, &y).unwrap();
    let s = DeconvolutionSettings::new(0.0, 1e-10, RegularizationMode::OracleShift);
    let d = regularized_divide(&f_psi, &f_pi, Some(&f_pi), &s).unwrap();
    let w = inverse_line_transform(&d.quotient, &g).unwrap().function;
    let truth = GridFunction::from_fn(g, |x| pm.interaction.prime(x));
    let rel = w.l2_distance(&truth).unwrap() / truth.l2_norm();
    outcome(rel < 1e-5, format!("relative L² error of recovered W' {rel:.2e} (< 1e-5)"))
}

fn estimation_study() -> ExperimentResult {
    let mut cfg = ExperimentConfig::new("hermite", &[("alpha", 0.5), ("theta", 0.5)], vec![500, 2000, 8000]);
    cfg.replicates = 20;
    cfg.seed0 = 2024;
    cfg.mode = RegularizationMode::OracleShift;
    cfg.artifacts = false;
    run_convergence_study(&cfg).unwrap()
}

fn c10_floor(studies: &[&ExperimentResult]) -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut failed = 0;
    for r in studies {
        for c in &r.cells {
            let Some(eps) = c.get(metric::EPS_NT) else {
                failed += c.error.is_some() as usize;
                continue;
            };
            for name in [metric::MIN_DEN_ORACLE, metric::MIN_DEN_CLIP] {
                checked += 1;
                if !(c.get(name).unwrap() >= eps) {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0 && failed == 0 && checked > 0,
        format!("{checked} (cell, mode) floors checked, {violations} below ε_N,T, {failed} failed cells"),
    )
}

fn c11_end_to_end(r: &ExperimentResult) -> Outcome {
    let rows = values_by_n(r, metric::W_PRIME_L2_ERROR, usize::MAX);
    let medians: Vec<f64> = rows.iter().map(|(_, _, v)| median(v)).collect();
    let points: Vec<(f64, f64)> = rows.iter().zip(&medians).map(|((_, n_t, _), m)| (*n_t, *m)).collect();
    let fit = fit_rate(&points).unwrap();
    let eps: Vec<f64> = values_by_n(r, metric::EPS_NT, 1).iter().map(|(_, _, v)| v[0]).collect();
    outcome(
        strictly_decreasing(&medians) && fit.slope < 0.0,
        format!(
            "median ‖W'_N,T − W'‖₂ {} (‖W'‖₂ = 0.47), slope vs N_T {:.3}; ε_N,T {}; γ = {:.4}, rate N_T^(−γ/2) not resolvable at desk scale",
            fmt(&medians),
            fit.slope,
            fmt(&eps),
            r.summary.gamma
        ),
    )
}

fn c12_alpha(r: &ExperimentResult) -> Outcome {
    let rows = values_by_n(r, metric::ALPHA_SQ_ERROR, usize::MAX);
    let rmse: Vec<f64> = rows.iter().map(|(_, _, v)| (v.iter().sum::<f64>() / v.len() as f64).sqrt()).collect();
    let g = Grid::symmetric(20.0, 8001).unwrap();
    let l = GridFunction::from_fn(g, |y| -2.0 * 0.5 * y);
    let w = WeightFunction::bump(0.9).unwrap();
    let exact = (estimate_alpha(&l, |_| 0.0, &w, 4.0).unwrap() - 0.5).abs();
    outcome(
        strictly_decreasing(&rmse) && exact < 1e-8,
        format!("α RMSE {} over 20 replicates; exact-input error {exact:.2e} (< 1e-8)", fmt(&rmse)),
    )
}

fn c13_fts() -> Outcome {
    let pm = model("hermite", &[]);
    let g = Grid::symmetric(8.0, 1025).unwrap();
    let pi = solve_invariant(&pm, &g, &SolverOptions::default()).unwrap().density;
    let good = fts_diagnostic(|x| pm.interaction.prime(x), &pi, 0.0, 4.0, 400).unwrap();
    let slow = |z: Complex64| Complex64::i() * z / (1.0 + z * z).powf(1.5);
    let bad = fts_diagnostic_with(slow, &pi, 0.0, 4.0, 400).unwrap();
    outcome(
        good.passed && !bad.passed,
        format!(
            "hermite increment ratio {:.2e} ({}), polynomial-decay F(W') increment ratio {:.2e} ({})",
            good.increment_ratio[0].max(good.increment_ratio[1]),
            if good.passed { "pass" } else { "fail" },
            bad.increment_ratio[0].max(bad.increment_ratio[1]),
            if bad.passed { "pass" } else { "fail" }
        ),
    )
}

fn c14_decay() -> Outcome {
    let pm = model("nonsmooth_confinement_J", &[("J", 2.0), ("alpha", 1.0)]);
    let g = Grid::symmetric(8.0, 8193).unwrap();
    let pi = solve_invariant(&pm, &g, &SolverOptions::default()).unwrap().density;
    let slope = decay_slope(&pi, 0.0, 10.0, 40.0, 121).unwrap();
    outcome((slope + 4.0).abs() <= 0.5, format!("log|F(π)| vs log|y| slope on [10, 40] = {slope:.3} (−4 ± 0.5)"))
}

fn c15_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(
        &cfg,
        "n_list = [200, 400]\nreplicates = 2\nseed0 = 5\ngrid_points = 513\nn_freq = 1024\n\
         horizon = { rule = \"fixed\", value = 2.0 }\n[model]\nname = \"hermite\"\n",
    )
    .unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_mkv"))
            .arg("study")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("mkv study exited with {}", status.status));
        }
        files.push(std::fs::read(out.join("cells.csv")).unwrap());
    }
    outcome(
        files[0] == files[1] && !files[0].is_empty(),
        format!("two `mkv study` runs: cells.csv {} bytes, bit-identical: {}", files[0].len(), files[0] == files[1]),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} {id:>2} {name}: {} [{secs:.1} s]", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };

    run(1, "kernel moments", &mut c1_kernel_moments);
    run(2, "invariant fixed point", &mut c2_invariant_fixed_point);
    run(3, "Gaussian oracle", &mut c3_gaussian_oracle);
    run(4, "OU dynamics", &mut c4_ou_dynamics);
    let t = Instant::now();
    let chaos = chaos_study();
    println!("     (propagation-of-chaos sweep: {:.1} s)", t.elapsed().as_secs_f64());
    run(5, "propagation of chaos", &mut || c5_propagation_of_chaos(&chaos));
    run(6, "dual formulation", &mut || c6_dual_formulation(&chaos));
    run(7, "coupled moments", &mut c7_coupled_moments);
    run(8, "transform round trip and Parseval", &mut c8_transforms);
    run(9, "deconvolution oracle identity", &mut c9_deconvolution_identity);
    let t = Instant::now();
    let est = estimation_study();
    println!("     (estimation sweep: {:.1} s)", t.elapsed().as_secs_f64());
    run(10, "regularization floor", &mut || c10_floor(&[&est]));
    run(11, "end-to-end consistency", &mut || c11_end_to_end(&est));
    run(12, "alpha estimator", &mut || c12_alpha(&est));
    run(13, "FTs diagnostic", &mut c13_fts);
    run(14, "polynomial decay of F(pi)", &mut c14_decay);
    run(15, "determinism", &mut c15_determinism);

    let passed = results.iter().filter(|r| r.2.passed).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

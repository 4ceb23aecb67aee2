//! Confinement and interaction potentials, their structural constants and the
//! particle drifts they induce.
//!
//! The confinement is `V(x) = α x²/2 + Ṽ(x)` with a known even correction `Ṽ`; the
//! interaction `W` is even with odd, integrable force `W'`. Functions are closures
//! that return analytic derivatives of a requested order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, integrate_gl, Grid};
use crate::invariant::GridDensity;

/// `f(x, order)` returning the `order`-th derivative at `x`.
pub type DerivativeFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Finite(usize),
    Infinite,
}

#[derive(Clone)]
pub struct ConfinementPotential {
    alpha: f64,
    tilde_v: Option<DerivativeFn>,
    smoothness: Smoothness,
    /// `c̃_j = sup |Ṽ^{(j)}|` for `j = 2..=J` (a single zero entry when `Ṽ = 0`).
    c_tilde: Vec<f64>,
    c_v: f64,
}

impl fmt::Debug for ConfinementPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfinementPotential")
            .field("alpha", &self.alpha)
            .field("has_tilde_v", &self.tilde_v.is_some())
            .field("smoothness", &self.smoothness)
            .field("c_tilde", &self.c_tilde)
            .field("c_v", &self.c_v)
            .finish()
    }
}

impl ConfinementPotential {
    /// `V(x) = α x² / 2`.
    pub fn quadratic(alpha: f64) -> Self {
        Self {
            alpha,
            tilde_v: None,
            smoothness: Smoothness::Infinite,
            c_tilde: vec![0.0],
            c_v: alpha,
        }
    }

    /// `V = α x²/2 + Ṽ` with `Ṽ ∈ C^J`; `Ṽ` must provide derivatives up to order `J + 2`.
    /// `c̃_j` and `C_V` are measured on a dense grid over `[-scan_radius, scan_radius]`.
    pub fn with_correction(alpha: f64, tilde_v: DerivativeFn, smoothness_j: usize, scan_radius: f64) -> Self {
        let scan = Grid::symmetric(scan_radius, 40_001).expect("valid scan grid");
        let xs = scan.points();
        let c_tilde: Vec<f64> = (2..=smoothness_j)
            .map(|j| xs.iter().fold(0.0_f64, |m, &x| m.max(tilde_v(x, j).abs())))
            .collect();
        let inf_second = xs.iter().fold(f64::INFINITY, |m, &x| m.min(tilde_v(x, 2)));
        Self {
            alpha,
            tilde_v: Some(tilde_v),
            smoothness: Smoothness::Finite(smoothness_j),
            c_tilde,
            c_v: alpha + inf_second.min(0.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_v(&self) -> f64 {
        self.c_v
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn c_tilde(&self) -> &[f64] {
        &self.c_tilde
    }

    /// `C̃ = α + c̃₂`, the Gaussian rate of the lower envelope of π.
    pub fn c_tilde_envelope(&self) -> f64 {
        self.alpha + self.c_tilde.first().copied().unwrap_or(0.0)
    }

    pub fn has_correction(&self) -> bool {
        self.tilde_v.is_some()
    }

    pub fn max_order(&self) -> Option<usize> {
        match self.smoothness {
            Smoothness::Finite(j) => Some(j + 2),
            Smoothness::Infinite => None,
        }
    }

    /// `Ṽ^{(order)}(x)`; zero when there is no correction.
    pub fn tilde_eval(&self, x: f64, order: usize) -> Result<f64> {
        if let Some(max) = self.max_order() {
            if order > max {
                return Err(Error::UnsupportedDerivative { order, max });
            }
        }
        Ok(self.tilde_v.as_ref().map_or(0.0, |f| f(x, order)))
    }

    pub fn tilde_v_prime(&self, x: f64) -> f64 {
        self.tilde_v.as_ref().map_or(0.0, |f| f(x, 1))
    }

    /// `V^{(order)}(x)`.
    pub fn eval(&self, x: f64, order: usize) -> Result<f64> {
        let quadratic = match order {
            0 => 0.5 * self.alpha * x * x,
            1 => self.alpha * x,
            2 => self.alpha,
            _ => 0.0,
        };
        Ok(quadratic + self.tilde_eval(x, order)?)
    }

    /// `V'(x)`; always available since `J >= 2`.
    #[inline]
    pub fn prime(&self, x: f64) -> f64 {
        self.alpha * x + self.tilde_v_prime(x)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.alpha * x * x + self.tilde_v.as_ref().map_or(0.0, |f| f(x, 0))
    }
}

#[derive(Clone)]
pub struct InteractionPotential {
    w: DerivativeFn,
    c_w: f64,
    tail_p: f64,
    /// Analytic `∫|W'|` when known in closed form.
    l1_norm_wprime: Option<f64>,
    sup_norm_wprime: f64,
    /// Radius beyond which `|W'|` is below `1e-16` of its sup.
    support_radius: f64,
    is_zero: bool,
}

impl fmt::Debug for InteractionPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InteractionPotential")
            .field("c_w", &self.c_w)
            .field("tail_p", &self.tail_p)
            .field("l1_norm_wprime", &self.l1_norm_wprime)
            .field("sup_norm_wprime", &self.sup_norm_wprime)
            .field("support_radius", &self.support_radius)
            .field("is_zero", &self.is_zero)
            .finish()
    }
}

impl InteractionPotential {
    pub fn zero() -> Self {
        Self {
            w: Arc::new(|_, _| 0.0),
            c_w: 0.0,
            tail_p: f64::INFINITY,
            l1_norm_wprime: Some(0.0),
            sup_norm_wprime: 0.0,
            support_radius: 0.0,
            is_zero: true,
        }
    }

    /// `W(x) = θ (1 - e^{-x²/2})`, `W'(x) = θ x e^{-x²/2}`.
    pub fn hermite(theta: f64) -> Self {
        let w: DerivativeFn = Arc::new(move |x, order| {
            let g = (-0.5 * x * x).exp();
            match order {
                0 => theta * (1.0 - g),
                1 => theta * x * g,
                2 => theta * (1.0 - x * x) * g,
                _ => f64::NAN,
            }
        });
        Self {
            w,
            c_w: 2.0 * theta * (-1.5_f64).exp(),
            tail_p: 0.5,
            l1_norm_wprime: Some(2.0 * theta),
            sup_norm_wprime: theta * (-0.5_f64).exp(),
            support_radius: 9.5,
            is_zero: theta == 0.0,
        }
    }

    /// Force `W' = f₀ + f_{δ,m}` with
    /// `f₀(x) = -(2/√(2π)) e^{-x²/2} sin x` and `f_{δ,m}(x) = -(2δ/√(2π)) e^{-x²/2} sin(m x)`.
    /// `W` is the tail integral of `W'` shifted to be nonnegative.
    pub fn sine_gaussian_pair(delta: f64, freq: f64) -> Self {
        let c = 2.0 / (2.0 * PI).sqrt();
        let force = move |x: f64| -c * (-0.5 * x * x).exp() * (x.sin() + delta * (freq * x).sin());
        let force_prime = move |x: f64| {
            -c * (-0.5 * x * x).exp()
                * (x.cos() - x * x.sin() + delta * (freq * (freq * x).cos() - x * (freq * x).sin()))
        };
        // G(x) = ∫_x^∞ W'(t) dt for x >= 0.
        let rule = Arc::new(gauss_legendre(12));
        let tail = {
            let rule = Arc::clone(&rule);
            move |x: f64| integrate_gl(force, x, x + 13.0, 26, &rule)
        };
        let scan = Grid::new(0.0, 12.0, 2401).expect("valid scan grid");
        let shift = {
            let values: Vec<f64> = scan.points().iter().map(|&x| tail(x)).collect();
            let (k, _) = values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            let h = scan.spacing();
            let (lo, hi) = ((scan.point(k) - h).max(0.0), scan.point(k) + h);
            golden_max(&tail, lo, hi).max(0.0)
        };
        let w: DerivativeFn = Arc::new(move |x, order| match order {
            0 => shift - tail(x.abs()),
            1 => force(x),
            2 => force_prime(x),
            _ => f64::NAN,
        });
        let dense = Grid::symmetric(12.0, 48_001).expect("valid scan grid");
        let xs = dense.points();
        let c_w = -xs.iter().fold(f64::INFINITY, |m, &x| m.min(force_prime(x)));
        let sup = xs.iter().fold(0.0_f64, |m, &x| m.max(force(x).abs()));
        Self {
            w,
            c_w: c_w.max(0.0),
            tail_p: 0.5,
            l1_norm_wprime: None,
            sup_norm_wprime: sup,
            support_radius: 9.5,
            is_zero: false,
        }
    }

    pub fn eval(&self, x: f64, order: usize) -> Result<f64> {
        if order > 2 {
            return Err(Error::UnsupportedDerivative { order, max: 2 });
        }
        Ok((self.w)(x, order))
    }

    #[inline]
    pub fn prime(&self, x: f64) -> f64 {
        (self.w)(x, 1)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (self.w)(x, 0)
    }

    #[inline]
    pub fn second(&self, x: f64) -> f64 {
        (self.w)(x, 2)
    }

    pub fn c_w(&self) -> f64 {
        self.c_w
    }

    pub fn tail_p(&self) -> f64 {
        self.tail_p
    }

    pub fn l1_norm_wprime(&self) -> Option<f64> {
        self.l1_norm_wprime
    }

    pub fn sup_norm_wprime(&self) -> f64 {
        self.sup_norm_wprime
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }
}

#[derive(Clone, Debug)]
pub struct PotentialModel {
    pub name: String,
    pub confinement: ConfinementPotential,
    pub interaction: InteractionPotential,
    lambda: f64,
}

impl PotentialModel {
    /// Assemble a model without checking the assumptions; see [`validate_assumptions`].
    pub fn new(name: impl Into<String>, confinement: ConfinementPotential, interaction: InteractionPotential) -> Self {
        let lambda = confinement.c_v() - interaction.c_w();
        Self {
            name: name.into(),
            confinement,
            interaction,
            lambda,
        }
    }

    /// `λ = C_V - C_W`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.confinement.alpha()
    }

    #[inline]
    pub fn v_prime(&self, x: f64) -> f64 {
        self.confinement.prime(x)
    }
}

/// `V^{(order)}(x)`.
pub fn confinement_eval(cp: &ConfinementPotential, x: f64, order: usize) -> Result<f64> {
    cp.eval(x, order)
}

/// `W^{(order)}(x)` for `order <= 2`.
pub fn interaction_eval(ip: &InteractionPotential, x: f64, order: usize) -> Result<f64> {
    ip.eval(x, order)
}

/// Smooth step `s(t) = f(t) / (f(t) + f(1-t))`, `f(t) = e^{-1/t}`, with derivatives.
///
/// `f^{(n)}(t) = P_n(1/t) e^{-1/t}` where `P_{n+1}(u) = u² (P_n(u) - P_n'(u))`.
#[derive(Clone, Debug)]
struct SmoothStep {
    polys: Vec<Vec<f64>>,
}

impl SmoothStep {
    fn new(max_order: usize) -> Self {
        let mut polys = vec![vec![1.0]];
        for n in 0..max_order {
            let p = &polys[n];
            let mut next = vec![0.0; p.len() + 2];
            for (k, &c) in p.iter().enumerate() {
                next[k + 2] += c;
                if k > 0 {
                    next[k + 1] -= k as f64 * c;
                }
            }
            polys.push(next);
        }
        Self { polys }
    }

    fn f_derivs(&self, t: f64, out: &mut [f64]) {
        if t <= 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let u = 1.0 / t;
        let e = (-u).exp();
        for (n, slot) in out.iter_mut().enumerate() {
            let p = self.polys[n].iter().rev().fold(0.0, |acc, &c| acc * u + c);
            *slot = p * e;
        }
    }

    /// `[s(t), s'(t), ..., s^{(k)}(t)]` for `k = out.len() - 1`.
    fn derivs(&self, t: f64, out: &mut [f64]) {
        let k = out.len();
        if t <= 0.0 || t >= 1.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = if t >= 1.0 { 1.0 } else { 0.0 };
            return;
        }
        let mut f = vec![0.0; k];
        let mut g = vec![0.0; k];
        self.f_derivs(t, &mut f);
        self.f_derivs(1.0 - t, &mut g);
        let d: Vec<f64> = (0..k)
            .map(|n| f[n] + if n % 2 == 0 { g[n] } else { -g[n] })
            .collect();
        for n in 0..k {
            let mut acc = f[n];
            for j in 0..n {
                acc -= binomial(n, j) * out[j] * d[n - j];
            }
            out[n] = acc / d[0];
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `Ṽ(x) = κ |x|^{J+1} χ(x)` with χ = 1 on `[-1, 1]`, 0 outside `[-2, 2]`, smooth between.
fn cutoff_power(kappa: f64, j: usize) -> DerivativeFn {
    let max_order = j + 2;
    let step = SmoothStep::new(max_order);
    let power = j + 1;
    Arc::new(move |x: f64, order: usize| {
        if order > max_order {
            return f64::NAN;
        }
        let r = x.abs();
        if r >= 2.0 {
            return 0.0;
        }
        // χ^{(i)}(r) for r >= 0
        let mut s = vec![0.0; order + 1];
        step.derivs(r - 1.0, &mut s);
        let chi = |i: usize| if i == 0 { 1.0 - s[0] } else { -s[i] };
        let mut total = 0.0;
        for k in 0..=order.min(power) {
            let falling = (0..k).fold(1.0, |acc, i| acc * (power - i) as f64);
            let mono = falling * r.powi((power - k) as i32);
            total += binomial(order, k) * mono * chi(order - k);
        }
        let sign = if x < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
        sign * kappa * total
    })
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_keys(name: &str, params: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "model `{name}` has no parameter `{key}` (expected one of {allowed:?})"
            )));
        }
    }
    Ok(())
}

/// Maximum of a unimodal function on `[lo, hi]` by golden-section search.
fn golden_max(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-12 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    f(lo).max(f(hi)).max(fa).max(fb)
}

pub const BUILTIN_MODELS: [&str; 5] = [
    "zero_interaction",
    "hermite",
    "hermite_pair_f0",
    "hermite_pair_f0_plus_fdm",
    "nonsmooth_confinement_J",
];

/// Build a named model without enforcing the assumptions (used by `validate`).
pub fn builtin_model_unchecked(name: &str, params: &BTreeMap<String, f64>) -> Result<PotentialModel> {
    let positive = |key: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Assumption(format!("`{key}` must be positive and finite, got {v}")))
        }
    };
    let nonnegative = |key: &str, v: f64| {
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Assumption(format!("`{key}` must be nonnegative, got {v}")))
        }
    };
    match name {
        "zero_interaction" => {
            check_keys(name, params, &["alpha"])?;
            let alpha = positive("alpha", param(params, "alpha", 0.5))?;
            Ok(PotentialModel::new(
                name,
                ConfinementPotential::quadratic(alpha),
                InteractionPotential::zero(),
            ))
        }
        "hermite" => {
            check_keys(name, params, &["alpha", "theta"])?;
            let alpha = positive("alpha", param(params, "alpha", 0.5))?;
            let theta = nonnegative("theta", param(params, "theta", 0.5))?;
            Ok(PotentialModel::new(
                name,
                ConfinementPotential::quadratic(alpha),
                InteractionPotential::hermite(theta),
            ))
        }
        "hermite_pair_f0" => {
            check_keys(name, params, &["alpha"])?;
            let alpha = positive("alpha", param(params, "alpha", 1.0))?;
            Ok(PotentialModel::new(
                name,
                ConfinementPotential::quadratic(alpha),
                InteractionPotential::sine_gaussian_pair(0.0, 1.0),
            ))
        }
        "hermite_pair_f0_plus_fdm" => {
            check_keys(name, params, &["alpha", "delta", "m"])?;
            let alpha = positive("alpha", param(params, "alpha", 1.2))?;
            let delta = nonnegative("delta", param(params, "delta", 0.1))?;
            let m = positive("m", param(params, "m", 2.0))?;
            Ok(PotentialModel::new(
                name,
                ConfinementPotential::quadratic(alpha),
                InteractionPotential::sine_gaussian_pair(delta, m),
            ))
        }
        "nonsmooth_confinement_J" => {
            check_keys(name, params, &["alpha", "kappa", "J", "theta"])?;
            let alpha = positive("alpha", param(params, "alpha", 1.0))?;
            let j_raw = param(params, "J", 2.0);
            if j_raw.fract() != 0.0 || !(2.0..=12.0).contains(&j_raw) {
                return Err(Error::Assumption(format!("`J` must be an integer in [2, 12], got {j_raw}")));
            }
            let j = j_raw as usize;
            // Default κ puts C_V at α/2: C_V - α = κ · inf Ṽ''_{κ=1}.
            let kappa = match params.get("kappa") {
                Some(&k) => positive("kappa", k)?,
                None => {
                    let unit = ConfinementPotential::with_correction(alpha, cutoff_power(1.0, j), j, 2.5);
                    0.5 * alpha / (alpha - unit.c_v())
                }
            };
            let theta = nonnegative("theta", param(params, "theta", 0.0))?;
            let interaction = if theta > 0.0 {
                InteractionPotential::hermite(theta)
            } else {
                InteractionPotential::zero()
            };
            Ok(PotentialModel::new(
                name,
                ConfinementPotential::with_correction(alpha, cutoff_power(kappa, j), j, 2.5),
                interaction,
            ))
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Build a named model and reject it unless every assumption check passes.
pub fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<PotentialModel> {
    let model = builtin_model_unchecked(name, params)?;
    let report = validate_assumptions(&model);
    if !report.passed {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({})", c.name, c.detail))
            .collect();
        return Err(Error::Assumption(failed.join("; ")));
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "overall: {}", if self.passed { "pass" } else { "FAIL" })
    }
}

/// Numerically check the structural assumptions on `V` and `W`.
pub fn validate_assumptions(pm: &PotentialModel) -> ValidationReport {
    let grid = Grid::symmetric(10.0, 10_001).expect("valid grid");
    let xs = grid.points();
    let ip = &pm.interaction;
    let cp = &pm.confinement;
    let mut checks = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| checks.push(Check { name, passed, detail });

    let even_w = xs.iter().fold(0.0_f64, |m, &x| m.max((ip.value(x) - ip.value(-x)).abs()));
    push("W even", even_w <= 1e-10, format!("max |W(x)-W(-x)| = {even_w:.3e}"));

    let odd_wp = xs.iter().fold(0.0_f64, |m, &x| m.max((ip.prime(x) + ip.prime(-x)).abs()));
    push("W' odd", odd_wp <= 1e-10, format!("max |W'(x)+W'(-x)| = {odd_wp:.3e}"));

    let min_w = xs.iter().fold(f64::INFINITY, |m, &x| m.min(ip.value(x)));
    push("W nonnegative", min_w >= -1e-12, format!("min W = {min_w:.3e}"));

    let min_curv = xs.iter().fold(f64::INFINITY, |m, &x| m.min(ip.second(x) + ip.c_w()));
    push(
        "W'' >= -C_W",
        min_curv >= -1e-9,
        format!("min W''+C_W = {min_curv:.3e} with C_W = {:.6}", ip.c_w()),
    );

    let abs_wp: Vec<f64> = xs.iter().map(|&x| ip.prime(x).abs()).collect();
    let l1 = grid.trapezoid(&abs_wp);
    let sup = abs_wp.iter().fold(0.0_f64, |m, &v| m.max(v));
    let tail = abs_wp[0].max(abs_wp[abs_wp.len() - 1]);
    let mut ok = l1.is_finite() && sup.is_finite() && tail <= 1e-8 * sup.max(1e-300) + 1e-300;
    let mut detail = format!("numeric ∫|W'| = {l1:.6}, sup|W'| = {sup:.6}");
    if let Some(exact) = ip.l1_norm_wprime() {
        ok &= if exact > 0.0 { (l1 - exact).abs() <= 0.01 * exact } else { l1 <= 1e-12 };
        detail.push_str(&format!(" (analytic ∫|W'| = {exact:.6})"));
    }
    ok &= sup <= ip.sup_norm_wprime() * (1.0 + 1e-6) + 1e-12;
    push("W' bounded and integrable", ok, detail);

    let even_v = xs
        .iter()
        .fold(0.0_f64, |m, &x| m.max((cp.value(x) - cp.value(-x)).abs()));
    push("V~ even", even_v <= 1e-10, format!("max |V~(x)-V~(-x)| = {even_v:.3e}"));

    let vp0 = cp.tilde_v_prime(0.0);
    push("V~'(0) = 0", vp0.abs() <= 1e-10, format!("V~'(0) = {vp0:.3e}"));

    let finite = cp.c_tilde().iter().all(|c| c.is_finite());
    push("c~_j finite", finite, format!("c~ = {:?}", cp.c_tilde()));

    push("C_V > 0", cp.c_v() > 0.0, format!("C_V = {:.6}", cp.c_v()));
    push(
        "lambda > 0",
        pm.lambda() > 0.0,
        format!("lambda = C_V - C_W = {:.6} - {:.6} = {:.6}", cp.c_v(), ip.c_w(), pm.lambda()),
    );

    let passed = checks.iter().all(|c| c.passed);
    ValidationReport { checks, passed }
}

/// `-V'(x) - ½ (W' ⋆ μ)(x)` with the convolution by trapezoid quadrature on μ's grid.
pub fn mean_field_drift(pm: &PotentialModel, x: f64, mu: &GridDensity) -> Result<f64> {
    let grid = mu.grid();
    let reach = pm.interaction.support_radius();
    if x < grid.x_min - reach || x > grid.x_max + reach {
        return Err(Error::Extrapolation {
            x,
            lo: grid.x_min - reach,
            hi: grid.x_max + reach,
        });
    }
    let conv = if pm.interaction.is_zero() {
        0.0
    } else {
        grid.trapezoid_weights()
            .iter()
            .zip(mu.values())
            .enumerate()
            .map(|(j, (w, m))| w * m * pm.interaction.prime(x - grid.point(j)))
            .sum()
    };
    Ok(-pm.v_prime(x) - 0.5 * conv)
}

/// `-V'(x_i) - (1/2N) Σ_j W'(x_i - x_j)`; `i` is zero-based.
pub fn empirical_drift(pm: &PotentialModel, i: usize, positions: &[f64]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::Empty("particle ensemble"));
    }
    let xi = *positions
        .get(i)
        .ok_or_else(|| Error::Config(format!("particle index {i} out of range 0..{}", positions.len())))?;
    let interaction = if pm.interaction.is_zero() {
        0.0
    } else {
        positions.iter().map(|&xj| pm.interaction.prime(xi - xj)).sum::<f64>()
    };
    Ok(-pm.v_prime(xi) - interaction / (2.0 * positions.len() as f64))
}

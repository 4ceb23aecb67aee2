//! Text summary and plot-ready CSV of a study.

use std::fmt::Write as _;
use std::path::Path;

use super::study::{metric, ExperimentResult, SlopeCheck, StudySummary};
use crate::deconvolution::RegularizationMode;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub text: String,
    /// `metric,n,n_t,count,median,q1,q3,mean`
    pub csv: String,
}

impl Report {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::write(dir.as_ref().join("report.txt"), &self.text)?;
        std::fs::write(dir.as_ref().join("report.csv"), &self.csv)?;
        Ok(())
    }
}

/// Fixed-point with a typographic minus sign.
pub fn signed(v: f64, digits: usize) -> String {
    format!("{v:.digits$}").replace('-', "\u{2212}")
}

fn digits_for(v: f64) -> usize {
    if v.abs() >= 0.1 || v == 0.0 {
        2
    } else {
        4
    }
}

pub fn slope_line(s: &SlopeCheck) -> String {
    let theory = signed(s.theory, digits_for(s.theory));
    let Some(fit) = s.fit else {
        return format!("{} slope: fewer than two sizes with data (theory {theory})", s.label);
    };
    let slope = signed(fit.slope, 2);
    match (s.band, s.passed()) {
        (Some([lo, hi]), Some(ok)) => format!(
            "{} slope {slope} (theory {theory}): {} band [{},{}]",
            s.label,
            if ok { "PASS" } else { "FAIL" },
            signed(lo, 1),
            signed(hi, 1)
        ),
        _ => {
            let mut line = format!("{} slope {slope} \u{b1} {:.2} (theory {theory}, nominal)", s.label, fit.stderr);
            if !s.resolvable() {
                line.push_str(": not resolvable at desk scale");
            }
            line
        }
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn header(out: &mut String, r: &ExperimentResult) {
    let c = &r.config;
    let s: &StudySummary = &r.summary;
    let _ = writeln!(
        out,
        "study: model {} {:?}, N = {:?}, {} replicates, mode {}, a = {}, seed0 = {}",
        c.model.name,
        c.model.params,
        c.n_list,
        c.replicates,
        match c.mode {
            RegularizationMode::OracleShift => "oracle_shift",
            RegularizationMode::Clip => "clip",
        },
        c.a,
        c.seed0
    );
    let _ = writeln!(
        out,
        "gamma = m/(2(m+2)) / (1 + 4 C~/(eps^2 C_V)) = {:.4}  [m = {}, eps = {}, C~ = {:.4}, C_V = {:.4}]; c_u = {:.4}",
        s.gamma, s.m, s.eps, s.c_tilde, s.c_v, s.c_u
    );
    if s.failed_cells > 0 {
        let _ = writeln!(out, "failed cells: {} (excluded from aggregates)", s.failed_cells);
    }
}

pub fn report(r: &ExperimentResult) -> Report {
    let s = &r.summary;
    let mut text = String::new();
    let mut csv = String::from("metric,n,n_t,count,median,q1,q3,mean\n");
    header(&mut text, r);

    for m in &s.metrics {
        if m.rows.is_empty() {
            let _ = writeln!(text, "\n{}: no finite values; section omitted", m.metric);
            continue;
        }
        let _ = writeln!(text, "\n{}", m.metric);
        let _ = writeln!(text, "{:>8} {:>10} {:>5} {:>12} {:>12} {:>12}", "N", "N_T", "count", "median", "q1", "q3");
        for row in &m.rows {
            let _ = writeln!(
                text,
                "{:>8} {:>10.1} {:>5} {:>12.5e} {:>12.5e} {:>12.5e}",
                row.n, row.n_t, row.count, row.median, row.q1, row.q3
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                m.metric, row.n, row.n_t, row.count, row.median, row.q1, row.q3, row.mean
            );
        }
    }

    let _ = writeln!(text);
    for slope in &s.slopes {
        if s.metric(&slope.metric).map_or(true, |m| m.rows.is_empty()) {
            continue;
        }
        let _ = writeln!(text, "{}", slope_line(slope));
    }
    if let Some(w) = s.metric(metric::W_PRIME_L2_ERROR).filter(|m| !m.rows.is_empty()) {
        let medians: Vec<f64> = w.rows.iter().map(|r| r.median).collect();
        let _ = writeln!(
            text,
            "W' median L2 error strictly decreasing across N: {}",
            if strictly_decreasing(&medians) { "yes" } else { "no" }
        );
        let _ = writeln!(
            text,
            "note: the asymptotic rate N_T^(\u{2212}gamma/2) with gamma = {:.4} is not resolvable at desk scale; \
             monotone decrease of the median error is checked instead",
            s.gamma
        );
    }
    if let Some(a) = s.metric(metric::ALPHA_SQ_ERROR).filter(|m| !m.rows.is_empty()) {
        let rmse: Vec<f64> = a.rows.iter().map(|r| r.mean.sqrt()).collect();
        let _ = writeln!(
            text,
            "alpha RMSE by N: {:?}; strictly decreasing: {}",
            rmse.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            if strictly_decreasing(&rmse) { "yes" } else { "no" }
        );
    }
    Report { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::rate::RateFit;
    use crate::experiments::study::{Abscissa, Statistic};

    fn check(slope: f64, stderr: f64, theory: f64, band: Option<[f64; 2]>) -> SlopeCheck {
        SlopeCheck {
            label: "W1".into(),
            metric: "w1".into(),
            statistic: Statistic::Median,
            against: Abscissa::N,
            theory,
            band,
            fit: Some(RateFit {
                slope,
                intercept: 0.0,
                stderr,
            }),
        }
    }

    #[test]
    fn formatting_contract() {
        assert_eq!(
            slope_line(&check(-0.48, 0.02, -0.5, Some([-0.8, -0.2]))),
            "W1 slope \u{2212}0.48 (theory \u{2212}0.50): PASS band [\u{2212}0.8,\u{2212}0.2]"
        );
        assert!(slope_line(&check(-0.1, 0.02, -0.5, Some([-0.8, -0.2]))).contains("FAIL"));
        let nominal = slope_line(&check(-0.05, 0.08, -0.0074, None));
        assert!(nominal.ends_with("not resolvable at desk scale"), "{nominal}");
        assert!(!slope_line(&check(-0.05, 0.001, -0.0074, None)).contains("not resolvable"));
    }
}

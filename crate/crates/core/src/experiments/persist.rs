//! Study result files: `config.json`, `cells.csv`, `summary.json` and
//! `cells/n{N}_r{R}.csv` per-cell curves.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::study::{CellArtifact, CellResult, ExperimentResult, StudySummary, SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    schema_version: u32,
    config: ExperimentConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRow {
    n: usize,
    replicate: usize,
    seed: u64,
    metric: String,
    value: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ArtifactRow {
    x: f64,
    w_prime_hat: f64,
    w_prime_true: f64,
    psi_hat: f64,
    psi_oracle: f64,
}

fn artifact_path(dir: &Path, n: usize, replicate: usize) -> PathBuf {
    dir.join("cells").join(format!("n{n}_r{replicate}.csv"))
}

fn check_version(found: u32, file: &str) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Schema(format!("{file}: schema version {found}, expected {SCHEMA_VERSION}")));
    }
    Ok(())
}

pub fn persist(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let echo = ConfigEcho {
        schema_version: SCHEMA_VERSION,
        config: result.config.clone(),
    };
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&echo)?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;

    let mut w = csv::Writer::from_path(dir.join("cells.csv"))?;
    for c in &result.cells {
        let row = |metric: &str, value: Option<f64>| CellRow {
            n: c.n,
            replicate: c.replicate,
            seed: c.seed,
            metric: metric.to_string(),
            value,
            error: c.error.clone(),
        };
        if c.error.is_some() {
            w.serialize(row("", None))?;
        }
        for (k, v) in &c.metrics {
            w.serialize(row(k, Some(*v)))?;
        }
    }
    w.flush()?;

    for c in &result.cells {
        let Some(a) = &c.artifact else { continue };
        let path = artifact_path(dir, c.n, c.replicate);
        fs::create_dir_all(path.parent().unwrap())?;
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..a.x.len() {
            w.serialize(ArtifactRow {
                x: a.x[i],
                w_prime_hat: a.w_prime_hat[i],
                w_prime_true: a.w_prime_true[i],
                psi_hat: a.psi_hat[i],
                psi_oracle: a.psi_oracle[i],
            })?;
        }
        w.flush()?;
    }
    Ok(())
}

fn read_artifact(path: &Path) -> Result<CellArtifact> {
    let mut a = CellArtifact {
        x: vec![],
        w_prime_hat: vec![],
        w_prime_true: vec![],
        psi_hat: vec![],
        psi_oracle: vec![],
    };
    for row in csv::Reader::from_path(path)?.deserialize() {
        let r: ArtifactRow = row?;
        a.x.push(r.x);
        a.w_prime_hat.push(r.w_prime_hat);
        a.w_prime_true.push(r.w_prime_true);
        a.psi_hat.push(r.psi_hat);
        a.psi_oracle.push(r.psi_oracle);
    }
    Ok(a)
}

pub fn load(dir: impl AsRef<Path>) -> Result<ExperimentResult> {
    let dir = dir.as_ref();
    let echo: ConfigEcho = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    check_version(echo.schema_version, "config.json")?;
    let summary: StudySummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    check_version(summary.schema_version, "summary.json")?;

    // cells appear in file order; rows of one cell are contiguous
    let mut cells: Vec<CellResult> = Vec::new();
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for row in csv::Reader::from_path(dir.join("cells.csv"))?.deserialize() {
        let r: CellRow = row?;
        let i = *index.entry((r.n, r.replicate)).or_insert_with(|| {
            cells.push(CellResult {
                n: r.n,
                replicate: r.replicate,
                seed: r.seed,
                metrics: BTreeMap::new(),
                error: r.error.clone(),
                artifact: None,
            });
            cells.len() - 1
        });
        if let Some(v) = r.value {
            cells[i].metrics.insert(r.metric, v);
        }
    }
    if echo.config.artifacts {
        for c in cells.iter_mut().filter(|c| c.error.is_none()) {
            let path = artifact_path(dir, c.n, c.replicate);
            if path.exists() {
                c.artifact = Some(read_artifact(&path)?);
            }
        }
    }
    Ok(ExperimentResult {
        config: echo.config,
        cells,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::HorizonRule;
    use crate::experiments::study::run_convergence_study;

    fn small() -> ExperimentResult {
        let mut cfg = ExperimentConfig::new("hermite", &[], vec![60, 120]);
        cfg.replicates = 2;
        cfg.horizon = HorizonRule::Fixed { value: 0.5 };
        cfg.grid_points = 129;
        cfg.n_freq = 256;
        let mut r = run_convergence_study(&cfg).unwrap();
        r.cells[1].error = Some("simulated, failure".into());
        r.cells[1].metrics.clear();
        r.cells[1].artifact = None;
        r
    }

    #[test]
    fn round_trip() {
        let r = small();
        let dir = tempfile::tempdir().unwrap();
        persist(&r, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), r);
    }

    #[test]
    fn missing_and_tampered() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load(dir.path().join("nope")).is_err());
        persist(&small(), dir.path()).unwrap();
        let p = dir.path().join("summary.json");
        let text = fs::read_to_string(&p).unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Schema(_))));
    }
}

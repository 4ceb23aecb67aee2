//! Experiment configuration (TOML on disk, echoed as JSON).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deconvolution::RegularizationMode;
use crate::error::{Error, Result};
use crate::particle_sim::InitialLaw;
use crate::potentials::{builtin_model, PotentialModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<PotentialModel> {
        builtin_model(&self.name, &self.params)
    }
}

/// Time horizon per ensemble size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum HorizonRule {
    Fixed { value: f64 },
    /// `T = ⌈log N / λ⌉`.
    Balanced,
}

/// Where the threshold constant `ĉ₁` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C1Source {
    /// Lower envelope constant fitted on the oracle invariant density.
    Oracle,
    /// `0.1 · max π_{N,T}`.
    Data,
}

fn default_init() -> InitialLaw {
    InitialLaw::Gaussian { mean: 0.0, std: 1.0 }
}
fn default_dt() -> f64 {
    0.01
}
fn default_m() -> usize {
    2
}
fn default_eps() -> f64 {
    0.9
}
fn default_replicates() -> usize {
    20
}
fn default_probe() -> [f64; 2] {
    [2.0, 1.0]
}
fn default_half_width() -> f64 {
    8.0
}
fn default_grid_points() -> usize {
    1025
}
fn default_y_max() -> f64 {
    20.0
}
fn default_n_freq() -> usize {
    4096
}
fn default_mode() -> RegularizationMode {
    RegularizationMode::OracleShift
}
fn default_c1() -> C1Source {
    C1Source::Oracle
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub n_list: Vec<usize>,
    #[serde(default = "balanced")]
    pub horizon: HorizonRule,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default = "default_mode")]
    pub mode: RegularizationMode,
    #[serde(default = "default_c1")]
    pub c1_source: C1Source,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed0: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_init")]
    pub init: InitialLaw,
    /// Probe point `z = re + i·im` for the characteristic-function error.
    #[serde(default = "default_probe")]
    pub probe_z: [f64; 2],
    #[serde(default = "default_half_width")]
    pub grid_half_width: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_y_max")]
    pub y_max: f64,
    #[serde(default = "default_n_freq")]
    pub n_freq: usize,
    /// Run the estimator; when false only the simulation metrics are scored.
    #[serde(default = "default_true")]
    pub deconvolve: bool,
    /// Write per-cell estimate CSVs.
    #[serde(default = "default_true")]
    pub artifacts: bool,
}

fn balanced() -> HorizonRule {
    HorizonRule::Balanced
}

impl ExperimentConfig {
    /// Defaults for everything but the model and the sweep.
    pub fn new(model: &str, params: &[(&str, f64)], n_list: Vec<usize>) -> Self {
        Self {
            model: ModelSpec {
                name: model.to_string(),
                params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            },
            n_list,
            horizon: HorizonRule::Balanced,
            dt: default_dt(),
            m: default_m(),
            eps: default_eps(),
            a: 0.0,
            mode: default_mode(),
            c1_source: default_c1(),
            replicates: default_replicates(),
            seed0: 0,
            output_dir: None,
            init: default_init(),
            probe_z: default_probe(),
            grid_half_width: default_half_width(),
            grid_points: default_grid_points(),
            y_max: default_y_max(),
            n_freq: default_n_freq(),
            deconvolve: true,
            artifacts: true,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_list.is_empty() {
            return bad("n_list must not be empty".into());
        }
        if self.n_list[0] == 0 || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_list must be positive and strictly ascending, got {:?}", self.n_list));
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if let HorizonRule::Fixed { value } = self.horizon {
            if !(value >= 0.0) {
                return bad(format!("fixed horizon must be >= 0, got {value}"));
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.a >= 0.0) {
            return bad(format!("a must be >= 0, got {}", self.a));
        }
        if !(self.grid_half_width > 0.0) || self.grid_points < 3 {
            return bad("estimation grid needs half width > 0 and >= 3 points".into());
        }
        if !(self.y_max > 0.0) || self.n_freq < 2 {
            return bad("frequency grid needs y_max > 0 and n_freq >= 2".into());
        }
        self.model.build()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            n_list = [500, 2000]
            seed0 = 7
            mode = "clip"
            horizon = { rule = "fixed", value = 10.0 }
            [model]
            name = "hermite"
            params = { alpha = 0.5, theta = 0.5 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.replicates, 20);
        assert_eq!(cfg.mode, RegularizationMode::Clip);
        assert_eq!(cfg.horizon, HorizonRule::Fixed { value: 10.0 });
        assert_eq!(cfg.init, InitialLaw::Gaussian { mean: 0.0, std: 1.0 });
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs() {
        let base = ExperimentConfig::new("hermite", &[], vec![100, 200]);
        assert!(base.validate().is_ok());
        let mut c = base.clone();
        c.n_list = vec![200, 100];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.replicates = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.model.name = "nope".into();
        assert!(c.validate().unwrap_err().is_config_error());
        assert!(ExperimentConfig::from_toml_str("n_list = [1]\nbogus = 3\n[model]\nname = \"hermite\"").is_err());
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reference_anchors, reference_pairs, AnchorSet, Point, RangingScenario};
use crate::noise::NoiseMode;
use crate::quantum::PhaseModel;
use crate::solver::{SolverSettings, DEFAULT_DELTA};

/// Monte Carlo campaign description, read from TOML.
///
/// `dx`, `da`, `trials` and `master_seed` are required; everything else
/// falls back to the reference testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Half-width of the sensor cube, meters.
    pub dx: f64,
    /// Half-width of the anchor cube, meters.
    pub da: f64,
    pub trials: u64,
    pub master_seed: u64,
    #[serde(default = "default_anchors")]
    pub anchors: Vec<[f64; 3]>,
    /// 1-based `(plus, minus)` anchor indices.
    #[serde(default = "default_pairs")]
    pub pairs: Vec<[usize; 2]>,
    #[serde(default = "default_eta_grid")]
    pub eta_grid: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_modes")]
    pub modes: Vec<NoiseMode>,
    #[serde(default)]
    pub weighted: bool,
    /// Phase per meter of the probe state. Only the shot-level tools use it.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_anchors() -> Vec<[f64; 3]> {
    reference_anchors()
        .iter()
        .map(|p| {
            let c = p.coords();
            [c[0], c[1], c[2]]
        })
        .collect()
}

fn default_pairs() -> Vec<[usize; 2]> {
    reference_pairs().into_iter().map(|(i, j)| [i, j]).collect()
}

fn default_eta_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.02, 0.03, 0.04]
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_modes() -> Vec<NoiseMode> {
    vec![NoiseMode::QuantumAssisted, NoiseMode::Classical]
}

fn default_kappa() -> f64 {
    PhaseModel::default().kappa()
}

impl ExperimentConfig {
    /// Reference testbed with the given trial count and seed.
    pub fn reference(trials: u64, master_seed: u64) -> Self {
        ExperimentConfig {
            dx: 2.0,
            da: 1.0,
            trials,
            master_seed,
            anchors: default_anchors(),
            pairs: default_pairs(),
            eta_grid: default_eta_grid(),
            delta: default_delta(),
            modes: default_modes(),
            weighted: false,
            kappa: default_kappa(),
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.da > 0.0 && self.da.is_finite()) {
            return bad(format!("`da` must be positive, got {}", self.da));
        }
        if !(self.dx >= self.da && self.dx.is_finite()) {
            return bad(format!("`dx` ({}) must be at least `da` ({})", self.dx, self.da));
        }
        if self.trials < 1 {
            return bad("`trials` must be at least 1".into());
        }
        if self.anchors.is_empty() {
            return bad("`anchors` is empty".into());
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if a.iter().any(|c| !c.is_finite() || c.abs() > self.da) {
                return bad(format!("`anchors[{i}]` = {a:?} lies outside [-da, da]^3"));
            }
        }
        if self.pairs.is_empty() {
            return bad("`pairs` is empty".into());
        }
        if self.eta_grid.is_empty() {
            return bad("`eta_grid` is empty".into());
        }
        if let Some(e) = self.eta_grid.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return bad(format!("`eta_grid` entry {e} must be finite and nonnegative"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("`delta` must be finite and nonnegative, got {}", self.delta));
        }
        if self.modes.is_empty() {
            return bad("`modes` is empty".into());
        }
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        if modes.len() != self.modes.len() {
            return bad("`modes` lists a mode twice".into());
        }
        PhaseModel::new(self.kappa).map_err(|e| Error::Config(format!("`kappa`: {e}")))?;
        self.solver.validate().map_err(|e| Error::Config(format!("`solver`: {e}")))?;
        self.anchor_set()?;
        self.scenario()?;
        Ok(())
    }

    pub fn anchor_set(&self) -> Result<AnchorSet> {
        AnchorSet::new(self.anchors.iter().map(|&a| Point::from(a)).collect())
            .map_err(|e| Error::Config(format!("`anchors`: {e}")))
    }

    pub fn scenario(&self) -> Result<RangingScenario> {
        let pairs: Vec<(usize, usize)> = self.pairs.iter().map(|p| (p[0], p[1])).collect();
        RangingScenario::from_pairs(&pairs, self.anchors.len())
            .map_err(|e| Error::Config(format!("`pairs`: {e}")))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parse and validate a config file. Parse errors carry the line and key.
pub fn read_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dx = 2.0\nda = 1.0\ntrials = 10\nmaster_seed = 1\n";

    #[test]
    fn minimal_file_gets_reference_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg, ExperimentConfig::reference(10, 1));
    }

    #[test]
    fn missing_key_is_named() {
        let err = ExperimentConfig::from_toml_str("dx = 2.0\nda = 1.0\nmaster_seed = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("trials"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::from_toml_str(&format!("{MINIMAL}sigma = 3\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("sigma"), "{err}");
        let err = ExperimentConfig::from_toml_str(&format!("{MINIMAL}[solver]\ntol = 1e-3\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("tol"), "{err}");
    }

    #[test]
    fn invariants_are_enforced() {
        for (patch, key) in [
            ("dx = 0.5\nda = 1.0\ntrials = 1\nmaster_seed = 0\n", "dx"),
            ("dx = 2.0\nda = 0.0\ntrials = 1\nmaster_seed = 0\n", "da"),
            ("dx = 2.0\nda = 1.0\ntrials = 0\nmaster_seed = 0\n", "trials"),
            ("dx = 2.0\nda = 0.5\ntrials = 1\nmaster_seed = 0\n", "anchors[0]"),
            (&format!("{MINIMAL}modes = [\"quantum\", \"quantum\"]\n"), "modes"),
            (&format!("{MINIMAL}eta_grid = [-0.01]\n"), "eta_grid"),
            (&format!("{MINIMAL}pairs = [[1, 17]]\n"), "pairs"),
        ] {
            let err = ExperimentConfig::from_toml_str(patch).unwrap_err().to_string();
            assert!(err.contains(key), "{key}: {err}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::reference(7, 99);
        cfg.eta_grid = vec![0.0, 0.1 + 0.2, 1e-17];
        cfg.weighted = true;
        cfg.modes = vec![NoiseMode::Classical];
        cfg.solver.max_iters = 33;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}

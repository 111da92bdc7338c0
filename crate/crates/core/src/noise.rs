//! Noisy TDoA measurement generation.
//!
//! Quantum-assisted ranging measures the distance difference in one shot, so
//! a single relative error multiplies the whole difference. Classical TDoA
//! measures each leg separately and the two relative errors superpose.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{truth_vector, AnchorSet, Point, RangingScenario};
use crate::rng::{keyed_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[serde(rename = "quantum")]
    QuantumAssisted,
    Classical,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::QuantumAssisted => "quantum",
            NoiseMode::Classical => "classical",
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quantum" | "quantumassisted" | "quantum-assisted" => Ok(NoiseMode::QuantumAssisted),
            "classical" => Ok(NoiseMode::Classical),
            other => Err(Error::validation(format!(
                "unknown noise mode `{other}` (expected `quantum` or `classical`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    eta: f64,
    mode: NoiseMode,
    seed: u64,
    trial: u64,
}

impl NoiseSpec {
    pub fn new(eta: f64, mode: NoiseMode, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::validation(format!(
                "noise level eta must lie in [0, 1], got {eta}"
            )));
        }
        Ok(NoiseSpec { eta, mode, seed, trial: 0 })
    }

    /// Selects the trial component of the draw key.
    pub fn with_trial(mut self, trial: u64) -> Self {
        self.trial = trial;
        self
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// Standard normal draw keyed by `(seed, trial, row, leg)`.
    fn epsilon(&self, row: usize, leg: usize) -> f64 {
        let mut rng = keyed_rng(self.seed, Stream::Noise, &[self.trial, row as u64, leg as u64]);
        StandardNormal.sample(&mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub values: Vec<f64>,
    pub truth: Vec<f64>,
    pub spec: NoiseSpec,
}

fn tdoa_legs(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
) -> Result<Vec<(f64, f64)>> {
    scenario
        .rows()
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let (i, j) = row.tdoa_pair().ok_or_else(|| {
                Error::UnsupportedScenario(format!("row {} is not a TDoA pair", k + 1))
            })?;
            Ok((x.distance(anchors.get(i)), x.distance(anchors.get(j))))
        })
        .collect()
}

fn expect_mode(spec: &NoiseSpec, mode: NoiseMode) -> Result<()> {
    if spec.mode != mode {
        return Err(Error::validation(format!(
            "noise spec is in {} mode, expected {mode}",
            spec.mode
        )));
    }
    Ok(())
}

/// `d_k = (‖x − a_i‖ − ‖x − a_j‖)(1 + η·ε_k)`.
pub fn measure_quantum(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    spec: &NoiseSpec,
) -> Result<MeasurementBatch> {
    expect_mode(spec, NoiseMode::QuantumAssisted)?;
    let legs = tdoa_legs(x, anchors, scenario)?;
    let truth = truth_vector(x, anchors, scenario)?;
    let values = legs
        .iter()
        .enumerate()
        .map(|(k, (ri, rj))| (ri - rj) * (1.0 + spec.eta * spec.epsilon(k, 0)))
        .collect();
    Ok(MeasurementBatch { values, truth, spec: *spec })
}

/// `d_k = ‖x − a_i‖(1 + η·ε_{k,1}) − ‖x − a_j‖(1 + η·ε_{k,2})`.
pub fn measure_classical(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    spec: &NoiseSpec,
) -> Result<MeasurementBatch> {
    expect_mode(spec, NoiseMode::Classical)?;
    let legs = tdoa_legs(x, anchors, scenario)?;
    let truth = truth_vector(x, anchors, scenario)?;
    let values = legs
        .iter()
        .enumerate()
        .map(|(k, (ri, rj))| {
            ri * (1.0 + spec.eta * spec.epsilon(k, 0)) - rj * (1.0 + spec.eta * spec.epsilon(k, 1))
        })
        .collect();
    Ok(MeasurementBatch { values, truth, spec: *spec })
}

/// Dispatches on `spec.mode()`.
pub fn measure(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    spec: &NoiseSpec,
) -> Result<MeasurementBatch> {
    match spec.mode {
        NoiseMode::QuantumAssisted => measure_quantum(x, anchors, scenario, spec),
        NoiseMode::Classical => measure_classical(x, anchors, scenario, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_anchors, reference_scenario, RangingRow, Sign};

    fn sensor() -> Point {
        Point::from([0.4, -1.3, 0.9])
    }

    #[test]
    fn noiseless_batches_equal_truth() {
        let (a, s) = (reference_anchors(), reference_scenario());
        for mode in [NoiseMode::QuantumAssisted, NoiseMode::Classical] {
            let b = measure(&sensor(), &a, &s, &NoiseSpec::new(0.0, mode, 3).unwrap()).unwrap();
            assert_eq!(b.values, b.truth);
        }
    }

    #[test]
    fn wrong_mode_rejected() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let q = NoiseSpec::new(0.01, NoiseMode::QuantumAssisted, 1).unwrap();
        let c = NoiseSpec::new(0.01, NoiseMode::Classical, 1).unwrap();
        assert!(measure_classical(&sensor(), &a, &s, &q).is_err());
        assert!(measure_quantum(&sensor(), &a, &s, &c).is_err());
    }

    #[test]
    fn eta_range_enforced() {
        assert!(NoiseSpec::new(-0.1, NoiseMode::Classical, 0).is_err());
        assert!(NoiseSpec::new(1.5, NoiseMode::Classical, 0).is_err());
    }

    #[test]
    fn non_tdoa_rows_rejected() {
        let a = reference_anchors();
        let s = RangingScenario::new(
            vec![RangingRow::new(&[1, 2], &[Sign::Plus, Sign::Plus]).unwrap()],
            16,
        )
        .unwrap();
        let spec = NoiseSpec::new(0.01, NoiseMode::QuantumAssisted, 0).unwrap();
        assert!(matches!(
            measure_quantum(&sensor(), &a, &s, &spec),
            Err(Error::UnsupportedScenario(_))
        ));
    }

    #[test]
    fn batches_are_bitwise_deterministic() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let spec = NoiseSpec::new(0.03, NoiseMode::Classical, 77).unwrap().with_trial(5);
        let b1 = measure(&sensor(), &a, &s, &spec).unwrap();
        let b2 = measure(&sensor(), &a, &s, &spec).unwrap();
        assert_eq!(b1, b2);
        let other = measure(&sensor(), &a, &s, &spec.with_trial(6)).unwrap();
        assert_ne!(b1.values, other.values);
    }

    #[test]
    fn modes_share_the_first_leg_draw() {
        let q = NoiseSpec::new(0.02, NoiseMode::QuantumAssisted, 11).unwrap();
        let c = NoiseSpec::new(0.02, NoiseMode::Classical, 11).unwrap();
        assert_eq!(q.epsilon(3, 0), c.epsilon(3, 0));
        assert_ne!(c.epsilon(3, 0), c.epsilon(3, 1));
    }
}

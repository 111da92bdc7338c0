//! Two-branch phase model of quantum ranging.
//!
//! A signed distance combination `D` shifts the relative phase of the probe
//! state by `θ = κ·D`; a binary projective measurement then yields outcome 0
//! with probability `cos²(θ/2)`. The global phase cancels in both outcome
//! probabilities and is not represented.
//!
//! Decoding is only unambiguous on the principal branch `κ·|D| ∈ [0, π]`:
//! `cos²(θ/2)` is even and 2π-periodic, so sign and wrap count are lost.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    kappa: f64,
}

impl PhaseModel {
    /// `kappa` in radians per meter.
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::validation(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        Ok(PhaseModel { kappa })
    }

    /// `κ = 2(E₁ − E₀)/(ħc)` from level energies in joules.
    pub fn from_energies(e0: f64, e1: f64, hbar: f64, c: f64) -> Result<Self> {
        Self::new(2.0 * (e1 - e0) / (hbar * c))
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Default for PhaseModel {
    fn default() -> Self {
        PhaseModel { kappa: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotRecord {
    shots: u64,
    zeros: u64,
}

impl ShotRecord {
    pub fn new(shots: u64, zeros: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::validation("shot count must be positive"));
        }
        if zeros > shots {
            return Err(Error::validation(format!("{zeros} zero outcomes exceed {shots} shots")));
        }
        Ok(ShotRecord { shots, zeros })
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn zeros(&self) -> u64 {
        self.zeros
    }
}

pub fn phase_from_distance(distance: f64, model: &PhaseModel) -> f64 {
    model.kappa * distance
}

/// `(p0, p1) = (cos²(θ/2), sin²(θ/2))`.
pub fn outcome_probability(theta: f64) -> (f64, f64) {
    let (s, c) = (theta / 2.0).sin_cos();
    (c * c, s * s)
}

pub fn sample_shots<R: Rng + ?Sized>(theta: f64, shots: u64, rng: &mut R) -> Result<ShotRecord> {
    if shots == 0 {
        return Err(Error::validation("shot count must be positive"));
    }
    let (p0, _) = outcome_probability(theta);
    let p0 = p0.clamp(0.0, 1.0);
    let zeros = Binomial::new(shots, p0)
        .map_err(|e| Error::validation(format!("binomial parameters: {e}")))?
        .sample(rng);
    ShotRecord::new(shots, zeros)
}

/// `θ̂ = 2·arccos(√(k/N))`, in `[0, π]`.
pub fn estimate_phase(record: &ShotRecord) -> f64 {
    let frac = record.zeros as f64 / record.shots as f64;
    2.0 * frac.sqrt().clamp(0.0, 1.0).acos()
}

pub fn decode_distance(theta_hat: f64, model: &PhaseModel) -> f64 {
    theta_hat / model.kappa
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{keyed_rng, Stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn phase_is_linear_in_distance() {
        let unit = PhaseModel::new(1.0).unwrap();
        assert_eq!(phase_from_distance(FRAC_PI_2, &unit), FRAC_PI_2);
        assert_eq!(phase_from_distance(0.0, &PhaseModel::new(2.0).unwrap()), 0.0);
        assert_eq!(phase_from_distance(-1.5, &unit), -1.5);
    }

    #[test]
    fn kappa_must_be_positive() {
        assert!(PhaseModel::new(0.0).is_err());
        assert!(PhaseModel::new(f64::NAN).is_err());
        assert!(PhaseModel::from_energies(2.0, 1.0, HBAR, SPEED_OF_LIGHT).is_err());
        let m =
            PhaseModel::from_energies(0.0, HBAR * SPEED_OF_LIGHT, HBAR, SPEED_OF_LIGHT).unwrap();
        assert_relative_eq!(m.kappa(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn probability_examples() {
        assert_eq!(outcome_probability(0.0), (1.0, 0.0));
        let (p0, p1) = outcome_probability(PI);
        assert!(p0 < 1e-30 && (p1 - 1.0).abs() < 1e-15);
        let (p0, p1) = outcome_probability(FRAC_PI_2);
        assert_relative_eq!(p0, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_extremes() {
        let mut rng = keyed_rng(1, Stream::Shots, &[0]);
        assert_eq!(sample_shots(0.0, 1000, &mut rng).unwrap().zeros(), 1000);
        assert_eq!(sample_shots(PI, 1000, &mut rng).unwrap().zeros(), 0);
        assert!(sample_shots(0.3, 0, &mut rng).is_err());
        assert!(ShotRecord::new(5, 6).is_err());
    }

    #[test]
    fn half_probability_concentrates() {
        let mut rng = keyed_rng(42, Stream::Shots, &[1]);
        let r = sample_shots(FRAC_PI_2, 1_000_000, &mut rng).unwrap();
        let frac = r.zeros() as f64 / 1e6;
        // 0.0015 is three standard deviations of the sample fraction at N = 10⁶.
        assert!((0.4985..=0.5015).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_shots(1.0, 5000, &mut keyed_rng(9, Stream::Shots, &[2])).unwrap();
        let b = sample_shots(1.0, 5000, &mut keyed_rng(9, Stream::Shots, &[2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_phase_examples() {
        assert_eq!(estimate_phase(&ShotRecord::new(100, 100).unwrap()), 0.0);
        assert_relative_eq!(estimate_phase(&ShotRecord::new(100, 0).unwrap()), PI, epsilon = 1e-15);
        assert_relative_eq!(
            estimate_phase(&ShotRecord::new(100, 50).unwrap()),
            FRAC_PI_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn decode_examples() {
        let unit = PhaseModel::default();
        assert_eq!(decode_distance(FRAC_PI_2, &unit), FRAC_PI_2);
        let m = PhaseModel::new(PI).unwrap();
        let theta = phase_from_distance(0.5, &m);
        assert_relative_eq!(theta, FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(decode_distance(theta, &m), 0.5, epsilon = 1e-15);
    }

    /// Inverse of `cos²(θ/2)` evaluated on exact probabilities.
    fn exact_roundtrip(distance: f64, model: &PhaseModel) -> f64 {
        let (p0, _) = outcome_probability(phase_from_distance(distance, model));
        decode_distance(2.0 * p0.sqrt().acos(), model)
    }

    proptest! {
        #[test]
        fn probabilities_normalized(theta in -50.0..50.0f64) {
            let (p0, p1) = outcome_probability(theta);
            prop_assert!((p0 + p1 - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn principal_branch_roundtrip(d in -3.0..3.0f64, kappa in 0.1..1.0f64) {
            let m = PhaseModel::new(kappa).unwrap();
            prop_assume!(kappa * d.abs() <= PI);
            prop_assert!((exact_roundtrip(d, &m) - d.abs()).abs() < 1e-7);
        }
    }
}

//! Conic relaxation of TDoA localization and the interior-point method that
//! solves it.

pub mod cone;
pub mod ipm;
pub mod nls;
pub mod relaxation;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{AnchorSet, Point, RangingScenario};
pub use ipm::{IpmStatus as SolveStatus, SolverSettings};
pub use nls::{nls_oracle, OracleSettings};
pub use relaxation::{assemble_relaxation, mle_weights, ConicProblem, LiftedPoint, DEFAULT_DELTA};

/// Solution of one relaxation solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSolution {
    pub x_hat: Point,
    pub y_hat: Vec<f64>,
    pub y_mat: DMatrix<f64>,
    pub gamma_hat: f64,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub solve_seconds: f64,
    /// Set when the point came from the local refinement after `MaxIters`.
    pub fallback_used: bool,
}

impl LocalizationSolution {
    pub fn lifted(&self) -> LiftedPoint {
        LiftedPoint {
            x: self.x_hat.coords().to_vec(),
            y: self.y_hat.clone(),
            big_y: self.y_mat.clone(),
            gamma: self.gamma_hat,
        }
    }

    pub fn psd_min_eigenvalue(&self) -> f64 {
        self.lifted().psd_min_eigenvalue()
    }
}

impl SolveStatus {
    pub fn label(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Printable summary for the CLI.
#[derive(Debug, Serialize)]
pub struct SolutionReport<'a> {
    pub x_hat: &'a [f64],
    pub y_hat: &'a [f64],
    pub gamma_hat: f64,
    pub status: &'static str,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub solve_seconds: f64,
    pub psd_min_eigenvalue: f64,
    pub fallback_used: bool,
}

impl LocalizationSolution {
    pub fn report(&self) -> SolutionReport<'_> {
        SolutionReport {
            x_hat: self.x_hat.coords(),
            y_hat: &self.y_hat,
            gamma_hat: self.gamma_hat,
            status: self.status.label(),
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            gap: self.gap,
            iterations: self.iterations,
            solve_seconds: self.solve_seconds,
            psd_min_eigenvalue: self.psd_min_eigenvalue(),
            fallback_used: self.fallback_used,
        }
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

// `Instant` is unavailable on the bare wasm target.
#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}

pub fn solve_conic(
    problem: &ConicProblem,
    settings: &SolverSettings,
) -> Result<LocalizationSolution> {
    settings.validate().map_err(crate::error::Error::Validation)?;
    let (sol, seconds) = timed(|| ipm::solve(&problem.program, settings));
    let lifted = LiftedPoint::from_vector(&sol.x, &problem.layout);
    let mut x_hat = Point::new(lifted.x.clone()).unwrap_or_else(|_| Point::origin(problem.d()));
    let mut fallback_used = false;
    if sol.status == SolveStatus::MaxIters {
        let local = nls::refine(
            &problem.anchors,
            &problem.scenario,
            &problem.measurements,
            problem.weights.as_deref(),
            &x_hat,
            &OracleSettings::default(),
        )?;
        if let Some(m) = local {
            if m.objective < problem.raw_objective(&x_hat) {
                x_hat = m.x;
                fallback_used = true;
            }
        }
    }
    Ok(LocalizationSolution {
        x_hat,
        y_hat: lifted.y,
        y_mat: lifted.big_y,
        gamma_hat: lifted.gamma,
        status: sol.status,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
        iterations: sol.iterations,
        solve_seconds: seconds,
        fallback_used,
    })
}

/// Assemble and solve. `delta` defaults to [`DEFAULT_DELTA`].
pub fn localize(
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    measurements: &[f64],
    delta: Option<f64>,
    weights: Option<&[f64]>,
    settings: &SolverSettings,
) -> Result<LocalizationSolution> {
    let problem = assemble_relaxation(
        anchors,
        scenario,
        measurements,
        delta.unwrap_or(DEFAULT_DELTA),
        weights,
    )?;
    solve_conic(&problem, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_anchors, reference_scenario, truth_vector};
    use crate::noise::{measure, NoiseMode, NoiseSpec};

    #[test]
    fn noiseless_reference_instance() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let x = Point::from([0.5, 0.3, -0.7]);
        let d = truth_vector(&x, &a, &s).unwrap();
        let sol = localize(&a, &s, &d, None, None, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "{sol:?}");
        assert!(sol.x_hat.distance(&x) < 1e-2, "x_hat {:?}", sol.x_hat);
        assert!(
            sol.psd_min_eigenvalue() >= -1e-8,
            "{} {:?}",
            sol.psd_min_eigenvalue(),
            (sol.primal_residual, sol.gap, sol.iterations)
        );
        assert!(!sol.fallback_used);
    }

    #[test]
    fn noisy_instance_is_deterministic() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let x = Point::from([-1.1, 0.6, 1.4]);
        let spec = NoiseSpec::new(0.01, NoiseMode::QuantumAssisted, 4).unwrap();
        let d = measure(&x, &a, &s, &spec).unwrap().values;
        let s1 = localize(&a, &s, &d, None, None, &SolverSettings::default()).unwrap();
        let s2 = localize(&a, &s, &d, None, None, &SolverSettings::default()).unwrap();
        assert_eq!(s1.status, SolveStatus::Optimal);
        assert_eq!(s1.x_hat, s2.x_hat);
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn optimum_dominates_truth_lift() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let x = Point::from([0.9, -1.7, 0.2]);
        let spec = NoiseSpec::new(0.03, NoiseMode::Classical, 8).unwrap();
        let d = measure(&x, &a, &s, &spec).unwrap().values;
        let problem = assemble_relaxation(&a, &s, &d, DEFAULT_DELTA, None).unwrap();
        let sol = solve_conic(&problem, &SolverSettings::default()).unwrap();
        let truth = LiftedPoint::from_position(&x, &a);
        assert!(problem.max_violation(&truth) < 1e-9);
        assert!(problem.objective(&sol.lifted()) <= problem.objective(&truth) + 1e-7);
    }

    #[test]
    fn invalid_settings_rejected() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let bad = SolverSettings { max_iters: 0, ..SolverSettings::default() };
        assert!(localize(&a, &s, &[0.0; 8], None, None, &bad).is_err());
    }
}

//! Multi-start Levenberg–Marquardt on the raw range-difference objective
//! `Σ_k w_k²(Σ_i ω_{i,k}‖x − a_i‖ − d_k)²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{AnchorSet, Point, RangingScenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Random initializations, uniform in `[-half_width, half_width]^d`.
    pub starts: usize,
    pub half_width: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings { starts: 50, half_width: 2.0, grad_tol: 1e-10, max_iters: 500 }
    }
}

/// Outcome of one local refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMinimum {
    pub x: Point,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

struct Residual<'a> {
    anchors: &'a AnchorSet,
    scenario: &'a RangingScenario,
    d: &'a [f64],
    w: Option<&'a [f64]>,
}

impl Residual<'_> {
    fn weight(&self, k: usize) -> f64 {
        self.w.map_or(1.0, |w| w[k])
    }

    fn eval(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.scenario.m();
        let dim = x.len();
        let mut r = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, dim);
        for (k, row) in self.scenario.rows().iter().enumerate() {
            let wk = self.weight(k);
            // Same summation order as `combined_distance`, so the residual at
            // the truth is exactly zero.
            let mut acc = 0.0;
            for (i, sign) in row.terms() {
                let a = self.anchors.get(i).coords();
                let dist = x.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                acc += sign * dist;
                if dist > 0.0 {
                    for c in 0..dim {
                        jac[(k, c)] += wk * sign * (x[c] - a[c]) / dist;
                    }
                }
            }
            r[k] = wk * (acc - self.d[k]);
        }
        (r, jac)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.eval(x).0.norm_squared()
    }
}

fn check_inputs(
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    d: &[f64],
    weights: Option<&[f64]>,
) -> Result<()> {
    if scenario.n() != anchors.len() {
        return Err(Error::validation("scenario and anchor set disagree on n"));
    }
    if d.len() != scenario.m() {
        return Err(Error::validation(format!(
            "{} measurements for {} rows",
            d.len(),
            scenario.m()
        )));
    }
    if let Some(w) = weights {
        if w.len() != d.len() || w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::validation("weights must be positive, one per row"));
        }
    }
    Ok(())
}

/// Levenberg–Marquardt from a single start. `None` when the iterate diverges.
pub fn refine(
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    d: &[f64],
    weights: Option<&[f64]>,
    start: &Point,
    settings: &OracleSettings,
) -> Result<Option<LocalMinimum>> {
    check_inputs(anchors, scenario, d, weights)?;
    if start.dim() != anchors.dim() {
        return Err(Error::validation("start dimension differs from anchor dimension"));
    }
    let f = Residual { anchors, scenario, d, w: weights };
    let dim = start.dim();
    let mut x = DVector::from_column_slice(start.coords());
    let (mut r, mut jac) = f.eval(x.as_slice());
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut grad = jac.transpose() * &r * 2.0;
    while iterations < settings.max_iters && grad.norm() >= settings.grad_tol {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let scale = jtj.diagonal().max().max(1e-12);
        let mut accepted = false;
        for _ in 0..60 {
            let mut lhs = jtj.clone();
            for c in 0..dim {
                lhs[(c, c)] += mu * scale;
            }
            let Some(step) = lhs.cholesky().map(|ch| ch.solve(&(-&jtr))) else {
                mu *= 10.0;
                continue;
            };
            let trial = &x + &step;
            let trial_cost = f.objective(trial.as_slice());
            if trial_cost.is_finite() && trial_cost <= cost {
                let tiny = step.norm() <= 1e-15 * (1.0 + x.norm());
                x = trial;
                (r, jac) = f.eval(x.as_slice());
                cost = r.norm_squared();
                mu = (mu / 3.0).max(1e-15);
                accepted = !tiny;
                break;
            }
            mu *= 4.0;
        }
        grad = jac.transpose() * &r * 2.0;
        if !accepted {
            // No descent left in double precision.
            break;
        }
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e8 {
            return Ok(None);
        }
    }
    if !cost.is_finite() {
        return Ok(None);
    }
    Ok(Some(LocalMinimum {
        x: Point::new(x.as_slice().to_vec())?,
        objective: cost,
        gradient_norm: grad.norm(),
        iterations,
    }))
}

/// Best local minimizer over `settings.starts` uniform starts plus any
/// `extra_starts` supplied by the caller.
pub fn nls_oracle<R: Rng + ?Sized>(
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    d: &[f64],
    weights: Option<&[f64]>,
    extra_starts: &[Point],
    settings: &OracleSettings,
    rng: &mut R,
) -> Result<LocalMinimum> {
    if settings.starts == 0 && extra_starts.is_empty() {
        return Err(Error::validation("oracle needs at least one start"));
    }
    if !(settings.half_width > 0.0) {
        return Err(Error::validation("oracle start cube must have positive width"));
    }
    let dim = anchors.dim();
    let mut starts: Vec<Point> = extra_starts.to_vec();
    for _ in 0..settings.starts {
        let c = (0..dim)
            .map(|_| rng.random_range(-settings.half_width..=settings.half_width))
            .collect();
        starts.push(Point::new(c)?);
    }
    let mut best: Option<LocalMinimum> = None;
    for s in &starts {
        if let Some(m) = refine(anchors, scenario, d, weights, s, settings)? {
            if best.as_ref().is_none_or(|b| m.objective < b.objective) {
                best = Some(m);
            }
        }
    }
    best.ok_or(Error::OracleFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_anchors, reference_scenario, truth_vector};
    use crate::rng::{keyed_rng, Stream};

    #[test]
    fn noiseless_instance_recovers_truth() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let x = Point::from([0.5, 0.3, -0.7]);
        let d = truth_vector(&x, &a, &s).unwrap();
        let mut rng = keyed_rng(1, Stream::Oracle, &[0]);
        let best = nls_oracle(&a, &s, &d, None, &[], &OracleSettings::default(), &mut rng).unwrap();
        assert!(best.x.distance(&x) < 1e-6, "{:?}", best.x);
    }

    #[test]
    fn residual_at_truth_is_zero() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let x = Point::from([-1.2, 0.1, 0.4]);
        let d = truth_vector(&x, &a, &s).unwrap();
        let f = Residual { anchors: &a, scenario: &s, d: &d, w: None };
        assert_eq!(f.objective(x.coords()), 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let d = vec![0.1; 8];
        let w: Vec<f64> = (0..8).map(|k| 1.0 + k as f64).collect();
        let f = Residual { anchors: &a, scenario: &s, d: &d, w: Some(&w) };
        let x = [0.3, -0.4, 0.8];
        let (_, jac) = f.eval(&x);
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let fd = (f.eval(&xp).0 - f.eval(&xm).0) / (2.0 * h);
            for k in 0..8 {
                assert!((fd[k] - jac[(k, c)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn zero_starts_rejected() {
        let (a, s) = (reference_anchors(), reference_scenario());
        let settings = OracleSettings { starts: 0, ..OracleSettings::default() };
        let mut rng = keyed_rng(0, Stream::Oracle, &[]);
        assert!(nls_oracle(&a, &s, &[0.0; 8], None, &[], &settings, &mut rng).is_err());
    }
}

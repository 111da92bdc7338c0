//! Three browser operations over the core library. Each returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use quantum_tdoa::crlb::{fisher_information, jensen_bound};
use quantum_tdoa::geometry::{reference_anchors, reference_scenario, Point};
use quantum_tdoa::noise::{measure, NoiseMode, NoiseSpec};
use quantum_tdoa::quantum::{
    decode_distance, estimate_phase, outcome_probability, phase_from_distance, sample_shots,
    PhaseModel,
};
use quantum_tdoa::rng::{keyed_rng, Stream};
use quantum_tdoa::solver::{localize, SolverSettings};

type Out = Result<String, String>;

fn json(v: &impl Serialize) -> Out {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct ShotPoint {
    shots: u64,
    theta_hat: f64,
    distance_hat: f64,
    rmse_rad: f64,
}

#[derive(Serialize)]
struct ShotCurve {
    theta: f64,
    p0: f64,
    points: Vec<ShotPoint>,
}

/// Phase readout of one distance at increasing shot counts.
pub fn shot_curve_impl(distance: f64, kappa: f64, reps: u32, seed: u64) -> Out {
    let model = PhaseModel::new(kappa).map_err(err)?;
    let theta = phase_from_distance(distance, &model);
    let mut points = Vec::new();
    for shots in [100u64, 400, 1_600, 6_400, 25_600] {
        let mut sq = 0.0;
        let mut theta_hat = 0.0;
        for r in 0..reps.max(1) {
            let mut rng = keyed_rng(seed, Stream::Shots, &[shots, u64::from(r)]);
            let est = estimate_phase(&sample_shots(theta, shots, &mut rng).map_err(err)?);
            if r == 0 {
                theta_hat = est;
            }
            sq += (est - theta).powi(2);
        }
        points.push(ShotPoint {
            shots,
            theta_hat,
            distance_hat: decode_distance(theta_hat, &model),
            rmse_rad: (sq / f64::from(reps.max(1))).sqrt(),
        });
    }
    json(&ShotCurve { theta, p0: outcome_probability(theta).0, points })
}

#[derive(Serialize)]
struct Localized {
    truth: Vec<f64>,
    estimate: Vec<f64>,
    error_m: f64,
    bound_m: Option<f64>,
    status: &'static str,
    iterations: usize,
    anchors: Vec<Vec<f64>>,
}

/// Noisy measurement and relaxation solve on the reference testbed.
pub fn localize_one_impl(x: &[f64], eta: f64, mode: &str, seed: u64) -> Out {
    let (a, s) = (reference_anchors(), reference_scenario());
    let x = Point::new(x.to_vec()).map_err(err)?;
    let mode: NoiseMode = mode.parse().map_err(err)?;
    let spec = NoiseSpec::new(eta, mode, seed).map_err(err)?;
    let d = measure(&x, &a, &s, &spec).map_err(err)?.values;
    let sol = localize(&a, &s, &d, None, None, &SolverSettings::default()).map_err(err)?;
    let bound_m = if eta > 0.0 {
        fisher_information(&x, &a, &s, eta).and_then(|j| jensen_bound(&j)).ok()
    } else {
        Some(0.0)
    };
    json(&Localized {
        truth: x.coords().to_vec(),
        estimate: sol.x_hat.coords().to_vec(),
        error_m: sol.x_hat.distance(&x),
        bound_m,
        status: sol.status.label(),
        iterations: sol.iterations,
        anchors: a.iter().map(|p| p.coords().to_vec()).collect(),
    })
}

#[derive(Serialize)]
struct RowSpread {
    pair: (usize, usize),
    truth: f64,
    quantum_std: f64,
    classical_std: f64,
    quantum_model_std: f64,
    classical_model_std: f64,
}

/// Empirical per-row spread of both noise models at one position.
pub fn noise_compare_impl(x: &[f64], eta: f64, draws: u32, seed: u64) -> Out {
    let (a, s) = (reference_anchors(), reference_scenario());
    let x = Point::new(x.to_vec()).map_err(err)?;
    let draws = draws.max(2);
    let std_of = |mode: NoiseMode| -> Result<Vec<f64>, String> {
        let mut sq = vec![0.0; s.m()];
        for t in 0..u64::from(draws) {
            let spec = NoiseSpec::new(eta, mode, seed).map_err(err)?.with_trial(t);
            let b = measure(&x, &a, &s, &spec).map_err(err)?;
            for (acc, (v, d)) in sq.iter_mut().zip(b.values.iter().zip(&b.truth)) {
                *acc += (v - d).powi(2);
            }
        }
        Ok(sq.iter().map(|q| (q / f64::from(draws)).sqrt()).collect())
    };
    let (q, c) = (std_of(NoiseMode::QuantumAssisted)?, std_of(NoiseMode::Classical)?);
    let rows = s
        .rows()
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let (i, j) = row.tdoa_pair().expect("reference rows are pairs");
            let (ri, rj) = (x.distance(a.get(i)), x.distance(a.get(j)));
            RowSpread {
                pair: (i + 1, j + 1),
                truth: ri - rj,
                quantum_std: q[k],
                classical_std: c[k],
                quantum_model_std: eta * (ri - rj).abs(),
                classical_model_std: eta * (ri * ri + rj * rj).sqrt(),
            }
        })
        .collect::<Vec<_>>();
    json(&rows)
}

fn to_js(r: Out) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn shot_curve(distance: f64, kappa: f64, reps: u32, seed: u64) -> Result<String, JsValue> {
    to_js(shot_curve_impl(distance, kappa, reps, seed))
}

#[wasm_bindgen]
pub fn localize_one(x: Vec<f64>, eta: f64, mode: &str, seed: u64) -> Result<String, JsValue> {
    to_js(localize_one_impl(&x, eta, mode, seed))
}

#[wasm_bindgen]
pub fn noise_compare(x: Vec<f64>, eta: f64, draws: u32, seed: u64) -> Result<String, JsValue> {
    to_js(noise_compare_impl(&x, eta, draws, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn shot_curve_error_shrinks() {
        let v: Value = serde_json::from_str(&shot_curve_impl(1.0, 1.0, 200, 1).unwrap()).unwrap();
        let pts = v["points"].as_array().unwrap();
        let first = pts[0]["rmse_rad"].as_f64().unwrap();
        let last = pts[4]["rmse_rad"].as_f64().unwrap();
        // 256× the shots, so about 16× smaller.
        assert!(first / last > 10.0 && first / last < 25.0, "{first} {last}");
        assert!(shot_curve_impl(1.0, 0.0, 10, 1).is_err());
    }

    #[test]
    fn localize_one_noiseless() {
        let v: Value =
            serde_json::from_str(&localize_one_impl(&[0.5, 0.3, -0.7], 0.0, "quantum", 2).unwrap())
                .unwrap();
        assert_eq!(v["status"], "optimal");
        assert!(v["error_m"].as_f64().unwrap() < 1e-2);
        assert!(localize_one_impl(&[0.5, 0.3, -0.7], 0.01, "laser", 2).is_err());
    }

    #[test]
    fn noise_compare_orders_modes() {
        let v: Value =
            serde_json::from_str(&noise_compare_impl(&[0.4, -1.3, 0.9], 0.02, 4000, 3).unwrap())
                .unwrap();
        for row in v.as_array().unwrap() {
            assert!(row["classical_std"].as_f64() > row["quantum_std"].as_f64());
        }
    }
}

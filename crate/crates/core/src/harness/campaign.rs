use rand::Rng;

use crate::crlb::{fisher_information, jensen_bound, DEGENERATE_ROW_CLAMP};
use crate::error::{Error, Result};
use crate::geometry::{truth_vector, AnchorSet, Point, RangingScenario};
use crate::noise::{measure, NoiseMode, NoiseSpec};
use crate::rng::{keyed_rng, Stream};
use crate::solver::{localize, mle_weights, SolveStatus};

use super::ExperimentConfig;

pub const SAMPLING_ATTEMPTS: usize = 100;

/// Closest a sampled sensor may sit to an anchor, meters.
const MIN_ANCHOR_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Solved(SolveStatus),
    /// No admissible sensor position within the retry budget.
    Skipped,
    /// Assembly or solve returned an error.
    Failed,
}

impl TrialStatus {
    pub fn label(self) -> &'static str {
        match self {
            TrialStatus::Solved(s) => s.label(),
            TrialStatus::Skipped => "skipped",
            TrialStatus::Failed => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "optimal" => TrialStatus::Solved(SolveStatus::Optimal),
            "max_iters" => TrialStatus::Solved(SolveStatus::MaxIters),
            "numerical_failure" => TrialStatus::Solved(SolveStatus::NumericalFailure),
            "skipped" => TrialStatus::Skipped,
            "error" => TrialStatus::Failed,
            _ => return None,
        })
    }

    /// `MaxIters` still carries a usable (refined) estimate.
    pub fn is_success(self) -> bool {
        matches!(self, TrialStatus::Solved(SolveStatus::Optimal | SolveStatus::MaxIters))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub eta: f64,
    pub mode: NoiseMode,
    /// `None` only for skipped trials.
    pub x: Option<[f64; 3]>,
    pub x_hat: Option<[f64; 3]>,
    pub error: Option<f64>,
    /// `None` when the Fisher information is singular or ill-conditioned.
    pub bound: Option<f64>,
    pub status: TrialStatus,
    pub iterations: usize,
    pub seconds: f64,
}

fn admissible(x: &Point, anchors: &AnchorSet, scenario: &RangingScenario) -> bool {
    anchors.iter().all(|a| x.distance(a) > MIN_ANCHOR_DISTANCE)
        && truth_vector(x, anchors, scenario)
            .is_ok_and(|d| d.iter().all(|v| v.abs() >= DEGENERATE_ROW_CLAMP))
}

/// Uniform draw from `[-dx, dx]³`, redrawn while some true difference is
/// below [`DEGENERATE_ROW_CLAMP`].
pub fn sample_sensor(config: &ExperimentConfig, trial: u64) -> Result<Point> {
    let anchors = config.anchor_set()?;
    let scenario = config.scenario()?;
    sample_with(config, &anchors, &scenario, trial)
}

fn sample_with(
    config: &ExperimentConfig,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    trial: u64,
) -> Result<Point> {
    let mut rng = keyed_rng(config.master_seed, Stream::Sensor, &[trial]);
    let dx = config.dx;
    for _ in 0..SAMPLING_ATTEMPTS {
        let x = Point::from([
            rng.random_range(-dx..=dx),
            rng.random_range(-dx..=dx),
            rng.random_range(-dx..=dx),
        ]);
        if admissible(&x, anchors, scenario) {
            return Ok(x);
        }
    }
    Err(Error::SamplingExhausted { trial, attempts: SAMPLING_ATTEMPTS })
}

fn triple(p: &Point) -> [f64; 3] {
    let c = p.coords();
    [c[0], c[1], c[2]]
}

/// Bound for one geometry. At η = 0 it is the limit 0.
pub fn geometry_bound(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    eta: f64,
) -> Option<f64> {
    if eta == 0.0 {
        return Some(0.0);
    }
    fisher_information(x, anchors, scenario, eta).and_then(|j| jensen_bound(&j)).ok()
}

struct Setup {
    anchors: AnchorSet,
    scenario: RangingScenario,
}

fn run_trial(
    config: &ExperimentConfig,
    setup: &Setup,
    sensor: &Result<Point>,
    eta: f64,
    mode: NoiseMode,
    trial: u64,
) -> TrialRecord {
    let mut rec = TrialRecord {
        trial,
        eta,
        mode,
        x: None,
        x_hat: None,
        error: None,
        bound: None,
        status: TrialStatus::Skipped,
        iterations: 0,
        seconds: 0.0,
    };
    let Ok(x) = sensor else { return rec };
    rec.x = Some(triple(x));
    rec.bound = geometry_bound(x, &setup.anchors, &setup.scenario, eta);
    rec.status = TrialStatus::Failed;
    let solved = NoiseSpec::new(eta, mode, config.master_seed)
        .map(|s| s.with_trial(trial))
        .and_then(|spec| measure(x, &setup.anchors, &setup.scenario, &spec))
        .and_then(|batch| {
            let w = config.weighted.then(|| mle_weights(&batch.values, &setup.anchors));
            localize(
                &setup.anchors,
                &setup.scenario,
                &batch.values,
                Some(config.delta),
                w.as_deref(),
                &config.solver,
            )
        });
    if let Ok(sol) = solved {
        rec.x_hat = Some(triple(&sol.x_hat));
        rec.error = Some(sol.x_hat.distance(x));
        rec.status = TrialStatus::Solved(sol.status);
        rec.iterations = sol.iterations;
        rec.seconds = sol.solve_seconds;
    }
    rec
}

/// All `(η, mode, trial)` cells in grid order. Per-row failures are recorded;
/// only an invalid config aborts.
pub fn run_campaign(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let setup = Setup { anchors: config.anchor_set()?, scenario: config.scenario()? };
    let trials: Vec<u64> = (0..config.trials).collect();
    let sensors: Vec<Result<Point>> =
        map_ordered(&trials, |&t| sample_with(config, &setup.anchors, &setup.scenario, t));
    let mut cells = Vec::new();
    for &eta in &config.eta_grid {
        for &mode in &config.modes {
            cells.extend(trials.iter().map(|&t| (eta, mode, t)));
        }
    }
    Ok(map_ordered(&cells, |&(eta, mode, t)| {
        run_trial(config, &setup, &sensors[t as usize], eta, mode, t)
    }))
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Aggregates for one `(η, mode)` cell. `None` fields mean no trial in the
/// cell contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub eta: f64,
    pub mode: NoiseMode,
    pub trials: usize,
    pub successes: usize,
    pub me: Option<f64>,
    /// Standard error of the mean error.
    pub me_stderr: Option<f64>,
    /// `‖mean(x̂ − x)‖` over successful trials.
    pub bias: Option<f64>,
    pub mean_bound: Option<f64>,
    pub bounds_available: usize,
    pub mean_seconds: Option<f64>,
    pub mean_iterations: Option<f64>,
}

impl SummaryRow {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per `(η, mode)`, sorted by η then mode. Within a cell, records
/// are taken in trial order so the result does not depend on input order.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.eta.total_cmp(&b.eta).then(a.mode.cmp(&b.mode)).then(a.trial.cmp(&b.trial))
    });
    sorted
        .chunk_by(|a, b| a.eta.to_bits() == b.eta.to_bits() && a.mode == b.mode)
        .map(summarize_cell)
        .collect()
}

fn summarize_cell(cell: &[&TrialRecord]) -> SummaryRow {
    let ok: Vec<&&TrialRecord> = cell.iter().filter(|r| r.status.is_success()).collect();
    let errors: Vec<f64> = ok.iter().filter_map(|r| r.error).collect();
    let me = mean(&errors);
    let me_stderr = me.filter(|_| errors.len() > 1).map(|m| {
        let var = errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (errors.len() - 1) as f64;
        (var / errors.len() as f64).sqrt()
    });
    let bias = (!ok.is_empty()).then(|| {
        let mut acc = [0.0; 3];
        for r in &ok {
            if let (Some(x), Some(h)) = (r.x, r.x_hat) {
                for i in 0..3 {
                    acc[i] += h[i] - x[i];
                }
            }
        }
        acc.iter().map(|a| (a / ok.len() as f64).powi(2)).sum::<f64>().sqrt()
    });
    let bounds: Vec<f64> = cell.iter().filter_map(|r| r.bound).collect();
    let solved: Vec<&&TrialRecord> =
        cell.iter().filter(|r| matches!(r.status, TrialStatus::Solved(_))).collect();
    let seconds: Vec<f64> = solved.iter().map(|r| r.seconds).collect();
    let iters: Vec<f64> = solved.iter().map(|r| r.iterations as f64).collect();
    SummaryRow {
        eta: cell[0].eta,
        mode: cell[0].mode,
        trials: cell.len(),
        successes: ok.len(),
        me,
        me_stderr,
        bias,
        mean_bound: mean(&bounds),
        bounds_available: bounds.len(),
        mean_seconds: mean(&seconds),
        mean_iterations: mean(&iters),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: u64, eta: f64, mode: NoiseMode, error: f64) -> TrialRecord {
        TrialRecord {
            trial,
            eta,
            mode,
            x: Some([0.0; 3]),
            x_hat: Some([error, 0.0, 0.0]),
            error: Some(error),
            bound: Some(0.1),
            status: TrialStatus::Solved(SolveStatus::Optimal),
            iterations: 20,
            seconds: 0.25,
        }
    }

    #[test]
    fn sensor_sampling_is_keyed_and_in_range() {
        let cfg = ExperimentConfig::reference(1, 17);
        for t in 0..200 {
            let x = sample_sensor(&cfg, t).unwrap();
            assert!(x.coords().iter().all(|c| c.abs() <= 2.0));
            assert_eq!(x, sample_sensor(&cfg, t).unwrap());
        }
        assert_ne!(sample_sensor(&cfg, 0).unwrap(), sample_sensor(&cfg, 1).unwrap());
        let other = ExperimentConfig { master_seed: 18, ..cfg.clone() };
        assert_ne!(sample_sensor(&cfg, 0).unwrap(), sample_sensor(&other, 0).unwrap());
    }

    #[test]
    fn sampling_budget_is_reported() {
        // Every difference in a 1e-8 cube is far below the clamp.
        let mut cfg = ExperimentConfig::reference(1, 3);
        cfg.dx = 1e-8;
        cfg.da = 1e-8;
        cfg.anchors = vec![[1e-8, 0.0, 0.0], [-1e-8, 0.0, 0.0]];
        cfg.pairs = vec![[1, 2]];
        let err = sample_sensor(&cfg, 0).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { trial: 0, attempts: 100 }), "{err}");
    }

    #[test]
    fn summary_single_record() {
        let s = summarize(&[record(0, 0.01, NoiseMode::Classical, 0.5)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].me, Some(0.5));
        assert_eq!(s[0].me_stderr, None);
        assert_eq!(s[0].bias, Some(0.5));
        assert_eq!(s[0].success_rate(), 1.0);
    }

    #[test]
    fn summary_is_order_invariant_and_sorted() {
        let mut recs = Vec::new();
        for t in 0..30u64 {
            let e = 0.1 + (t as f64 * 0.37).sin().abs();
            recs.push(record(t, 0.02, NoiseMode::Classical, e));
            recs.push(record(t, 0.01, NoiseMode::QuantumAssisted, e / 3.0));
            recs.push(record(t, 0.02, NoiseMode::QuantumAssisted, e / 2.0));
        }
        let a = summarize(&recs);
        recs.reverse();
        recs.swap(3, 40);
        assert_eq!(a, summarize(&recs));
        let keys: Vec<(f64, NoiseMode)> = a.iter().map(|r| (r.eta, r.mode)).collect();
        assert_eq!(
            keys,
            [
                (0.01, NoiseMode::QuantumAssisted),
                (0.02, NoiseMode::QuantumAssisted),
                (0.02, NoiseMode::Classical)
            ]
        );
    }

    #[test]
    fn failed_cell_is_empty() {
        let mut r = record(0, 0.03, NoiseMode::QuantumAssisted, 1.0);
        r.status = TrialStatus::Solved(SolveStatus::NumericalFailure);
        let mut skipped = record(1, 0.03, NoiseMode::QuantumAssisted, 1.0);
        skipped.status = TrialStatus::Skipped;
        skipped.bound = None;
        let s = summarize(&[r, skipped]);
        assert_eq!(s[0].trials, 2);
        assert_eq!(s[0].successes, 0);
        assert_eq!(s[0].me, None);
        assert_eq!(s[0].bias, None);
        assert_eq!(s[0].mean_bound, Some(0.1));
        assert_eq!(s[0].mean_seconds, Some(0.25));
    }

    #[test]
    fn status_labels_round_trip() {
        for s in [
            TrialStatus::Solved(SolveStatus::Optimal),
            TrialStatus::Solved(SolveStatus::MaxIters),
            TrialStatus::Solved(SolveStatus::NumericalFailure),
            TrialStatus::Skipped,
            TrialStatus::Failed,
        ] {
            assert_eq!(TrialStatus::parse(s.label()), Some(s));
        }
    }

    #[test]
    fn small_campaign_shape() {
        let mut cfg = ExperimentConfig::reference(3, 5);
        cfg.eta_grid = vec![0.0, 0.02];
        let recs = run_campaign(&cfg).unwrap();
        assert_eq!(recs.len(), 2 * 2 * 3);
        assert_eq!(
            (recs[0].eta, recs[0].mode, recs[0].trial),
            (0.0, NoiseMode::QuantumAssisted, 0)
        );
        assert_eq!((recs[5].eta, recs[5].mode, recs[5].trial), (0.0, NoiseMode::Classical, 2));
        assert_eq!(recs[0].x, recs[9].x);
        for r in &recs {
            assert_eq!(r.status, TrialStatus::Solved(SolveStatus::Optimal));
            assert!(r.error.unwrap() >= 0.0 && r.bound.unwrap() >= 0.0);
            if r.eta == 0.0 {
                assert!(r.error.unwrap() < 1e-2);
            }
        }
    }
}

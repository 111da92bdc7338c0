//! Fisher information of TDoA measurements with proportional noise, the
//! Jensen/CRLB lower bound on mean localization error, and the mean error
//! metric itself.
//!
//! With `d_k ~ N(μ_k(x), η²μ_k²)` and the variance held at its noise-free
//! value, `J = Σ_k u_k u_kᵀ / (η² μ_k²)` where `u_k = ∇μ_k` is the difference
//! of the two unit vectors from the anchors towards `x`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{truth_vector, AnchorSet, Point, RangingScenario};

/// Rows whose true difference is below this magnitude (meters) have
/// unbounded information and are rejected.
pub const DEGENERATE_ROW_CLAMP: f64 = 1e-6;

/// Largest condition number for which the bound is reported.
pub const MAX_CONDITION: f64 = 1e12;

/// Sensor-to-anchor distance treated as coincident.
const COINCIDENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    /// `d × d`, units 1/m².
    pub j: DMatrix<f64>,
    pub eta: f64,
    pub x: Point,
}

pub fn fisher_information(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    eta: f64,
) -> Result<FisherInfo> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::validation(format!(
            "eta must be positive for a Fisher information, got {eta}"
        )));
    }
    if !scenario.is_tdoa() {
        return Err(Error::UnsupportedScenario(
            "the Fisher information is defined for TDoA pairs only".into(),
        ));
    }
    let truth = truth_vector(x, anchors, scenario)?;
    let dim = x.dim();
    let unit = |i: usize| -> Result<Vec<f64>> {
        let a = anchors.get(i);
        let r = x.distance(a);
        if r <= COINCIDENT {
            return Err(Error::SingularGeometry { anchor: i + 1 });
        }
        Ok(x.coords().iter().zip(a.coords()).map(|(p, q)| (p - q) / r).collect())
    };
    let mut j = DMatrix::zeros(dim, dim);
    for (k, row) in scenario.rows().iter().enumerate() {
        let (plus, minus) = row.tdoa_pair().expect("checked TDoA above");
        let (ui, uj) = (unit(plus)?, unit(minus)?);
        let dk = truth[k];
        if dk.abs() < DEGENERATE_ROW_CLAMP {
            return Err(Error::DegenerateRow {
                row: k + 1,
                value: dk.abs(),
                clamp: DEGENERATE_ROW_CLAMP,
            });
        }
        let u: Vec<f64> = ui.iter().zip(&uj).map(|(a, b)| a - b).collect();
        let w = 1.0 / (eta * eta * dk * dk);
        for a in 0..dim {
            for b in 0..dim {
                j[(a, b)] += w * u[a] * u[b];
            }
        }
    }
    Ok(FisherInfo { j, eta, x: x.clone() })
}

/// `√tr(J⁻¹)`, through the eigendecomposition of `J`.
pub fn jensen_bound(info: &FisherInfo) -> Result<f64> {
    let eig = SymmetricEigen::new(info.j.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::UnboundedBound { condition });
    }
    Ok(eig.iter().map(|l| 1.0 / l).sum::<f64>().sqrt())
}

/// `(1/r) Σ ‖x⁽ˡ⁾ − x̂⁽ˡ⁾‖`.
pub fn mean_error(truths: &[Point], estimates: &[Point]) -> Result<f64> {
    if truths.len() != estimates.len() {
        return Err(Error::validation(format!(
            "{} truths but {} estimates",
            truths.len(),
            estimates.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::validation("mean error needs at least one pair"));
    }
    if truths.iter().zip(estimates).any(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::validation("truth and estimate dimensions differ"));
    }
    let total: f64 = truths.iter().zip(estimates).map(|(a, b)| a.distance(b)).sum();
    Ok(total / truths.len() as f64)
}

//! Anchor geometry, ranging scenarios and exact combined distances.
//!
//! Anchor indices are 1-based wherever they cross the API (configuration,
//! [`RangingRow::new`], error messages) and 0-based internally.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anchors closer than this are considered duplicates.
pub const MIN_ANCHOR_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::validation(format!(
                "point dimension must be at least 2, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("point coordinates must be finite"));
        }
        Ok(Point(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim.max(2)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl From<[f64; 3]> for Point {
    fn from(c: [f64; 3]) -> Self {
        Point(c.to_vec())
    }
}

impl From<[f64; 2]> for Point {
    fn from(c: [f64; 2]) -> Self {
        Point(c.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Point>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<Point>) -> Result<Self> {
        let Some(first) = anchors.first() else {
            return Err(Error::validation("anchor set must contain at least one anchor"));
        };
        let dim = first.dim();
        if let Some(bad) = anchors.iter().position(|a| a.dim() != dim) {
            return Err(Error::validation(format!(
                "anchor {} has dimension {}, expected {dim}",
                bad + 1,
                anchors[bad].dim()
            )));
        }
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                if anchors[i].distance(&anchors[j]) <= MIN_ANCHOR_SEPARATION {
                    return Err(Error::validation(format!(
                        "anchors {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(AnchorSet { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].dim()
    }

    /// Anchor by 0-based index.
    pub fn get(&self, index: usize) -> &Point {
        &self.anchors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point> {
        self.anchors.iter()
    }

    /// Largest pairwise anchor distance (0 for a single anchor).
    pub fn span(&self) -> f64 {
        let mut span = 0.0f64;
        for i in 0..self.anchors.len() {
            for j in i + 1..self.anchors.len() {
                span = span.max(self.anchors[i].distance(&self.anchors[j]));
            }
        }
        span
    }
}

/// Sign attached to an anchor within a ranging row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// One ranging: a signed subset of anchors, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangingRow {
    indices: Vec<usize>,
    signs: Vec<Sign>,
}

impl RangingRow {
    /// Builds a row from 1-based anchor indices.
    pub fn new(indices: &[usize], signs: &[Sign]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::validation("ranging row must reference at least one anchor"));
        }
        if indices.len() != signs.len() {
            return Err(Error::validation(format!(
                "ranging row has {} indices but {} signs",
                indices.len(),
                signs.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i == 0) {
            return Err(Error::validation(format!(
                "anchor index {bad} out of range (indices are 1-based)"
            )));
        }
        for (k, i) in indices.iter().enumerate() {
            if indices[k + 1..].contains(i) {
                return Err(Error::validation(format!("anchor index {i} repeated in row")));
            }
        }
        Ok(RangingRow { indices: indices.iter().map(|i| i - 1).collect(), signs: signs.to_vec() })
    }

    /// TDoA row `‖x − a_plus‖ − ‖x − a_minus‖` from 1-based indices.
    pub fn tdoa(plus: usize, minus: usize) -> Result<Self> {
        Self::new(&[plus, minus], &[Sign::Plus, Sign::Minus])
    }

    /// 0-based anchor indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn signs(&self) -> &[Sign] {
        &self.signs
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.signs).map(|(&i, s)| (i, s.value()))
    }

    /// Exactly two anchors with opposite signs.
    pub fn is_tdoa(&self) -> bool {
        self.indices.len() == 2 && self.signs[0] != self.signs[1]
    }

    /// `(plus, minus)` 0-based anchor indices of a TDoA row.
    pub fn tdoa_pair(&self) -> Option<(usize, usize)> {
        if !self.is_tdoa() {
            return None;
        }
        Some(match self.signs[0] {
            Sign::Plus => (self.indices[0], self.indices[1]),
            Sign::Minus => (self.indices[1], self.indices[0]),
        })
    }

    fn validate_against(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(&bad) => {
                Err(Error::validation(format!("anchor index {} out of range 1..={n}", bad + 1)))
            }
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangingScenario {
    rows: Vec<RangingRow>,
    n: usize,
}

impl RangingScenario {
    pub fn new(rows: Vec<RangingRow>, n: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("scenario must contain at least one ranging row"));
        }
        for (k, row) in rows.iter().enumerate() {
            row.validate_against(n)
                .map_err(|e| Error::validation(format!("row {}: {e}", k + 1)))?;
        }
        Ok(RangingScenario { rows, n })
    }

    /// TDoA scenario from 1-based `(plus, minus)` pairs.
    pub fn from_pairs(pairs: &[(usize, usize)], n: usize) -> Result<Self> {
        let rows =
            pairs.iter().map(|&(i, j)| RangingRow::tdoa(i, j)).collect::<Result<Vec<_>>>()?;
        Self::new(rows, n)
    }

    pub fn rows(&self) -> &[RangingRow] {
        &self.rows
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_tdoa(&self) -> bool {
        self.rows.iter().all(RangingRow::is_tdoa)
    }

    fn check_anchors(&self, anchors: &AnchorSet) -> Result<()> {
        if anchors.len() != self.n {
            return Err(Error::validation(format!(
                "scenario addresses {} anchors but {} were supplied",
                self.n,
                anchors.len()
            )));
        }
        Ok(())
    }
}

/// Signed m×n incidence matrix of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(DMatrix<f64>);

impl IncidenceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.0.nrows())
            .map(|k| (0..self.0.ncols()).map(|i| self.0[(k, i)] * y[i]).sum())
            .collect()
    }
}

pub fn build_incidence(scenario: &RangingScenario) -> IncidenceMatrix {
    let mut p = DMatrix::zeros(scenario.m(), scenario.n());
    for (k, row) in scenario.rows().iter().enumerate() {
        for (i, w) in row.terms() {
            p[(k, i)] = w;
        }
    }
    IncidenceMatrix(p)
}

/// `Σ ω_i ‖x − a_i‖` over the anchors of one row.
pub fn combined_distance(x: &Point, anchors: &AnchorSet, row: &RangingRow) -> Result<f64> {
    row.validate_against(anchors.len())?;
    if x.dim() != anchors.dim() {
        return Err(Error::validation(format!(
            "point dimension {} does not match anchor dimension {}",
            x.dim(),
            anchors.dim()
        )));
    }
    Ok(row.terms().map(|(i, w)| w * x.distance(anchors.get(i))).sum())
}

pub fn truth_vector(
    x: &Point,
    anchors: &AnchorSet,
    scenario: &RangingScenario,
) -> Result<Vec<f64>> {
    scenario.check_anchors(anchors)?;
    scenario.rows().iter().map(|row| combined_distance(x, anchors, row)).collect()
}

/// Per-anchor distances `‖x − a_i‖`.
pub fn anchor_distances(x: &Point, anchors: &AnchorSet) -> Vec<f64> {
    anchors.iter().map(|a| x.distance(a)).collect()
}

/// Anchor placement of the reference testbed (16 anchors in `[-1, 1]³`).
pub fn reference_anchors() -> AnchorSet {
    let coords: [[f64; 3]; 16] = [
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0],
        [-1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [1.0, -1.0, -1.0],
        [-1.0, -1.0, -1.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 0.0, 0.5],
        [0.0, 0.0, -0.5],
    ];
    AnchorSet::new(coords.iter().map(|&c| Point::from(c)).collect())
        .expect("reference anchors are distinct")
}

/// Reference ranging scenario: `y_1 − y_2, y_3 − y_4, …, y_15 − y_16`.
pub fn reference_pairs() -> Vec<(usize, usize)> {
    (1..=8).map(|k| (2 * k - 1, 2 * k)).collect()
}

pub fn reference_scenario() -> RangingScenario {
    RangingScenario::from_pairs(&reference_pairs(), 16).expect("reference pairs are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pair_set() -> (AnchorSet, RangingRow) {
        let anchors =
            AnchorSet::new(vec![[1.0, 1.0, 1.0].into(), [-1.0, -1.0, -1.0].into()]).unwrap();
        (anchors, RangingRow::tdoa(1, 2).unwrap())
    }

    #[test]
    fn incidence_small_cases() {
        let s = RangingScenario::from_pairs(&[(1, 2), (3, 4)], 4).unwrap();
        let p = build_incidence(&s);
        let expected = DMatrix::from_row_slice(2, 4, &[1., -1., 0., 0., 0., 0., 1., -1.]);
        assert_eq!(p.matrix(), &expected);

        let s = RangingScenario::from_pairs(&[(1, 2)], 2).unwrap();
        assert_eq!(build_incidence(&s).matrix(), &DMatrix::from_row_slice(1, 2, &[1., -1.]));
    }

    #[test]
    fn incidence_reference_scenario() {
        let p = build_incidence(&reference_scenario());
        let p = p.matrix();
        assert_eq!((p.nrows(), p.ncols()), (8, 16));
        for k in 0..8 {
            for c in 0..16 {
                let expected = if c == 2 * k {
                    1.0
                } else if c == 2 * k + 1 {
                    -1.0
                } else {
                    0.0
                };
                assert_eq!(p[(k, c)], expected);
            }
            assert_eq!(p.row(k).sum(), 0.0);
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        assert!(RangingScenario::from_pairs(&[(1, 5)], 4).is_err());
        assert!(RangingRow::tdoa(0, 1).is_err());
        assert!(RangingRow::tdoa(2, 2).is_err());
    }

    #[test]
    fn duplicate_anchors_rejected() {
        let r = AnchorSet::new(vec![[0.0, 0.0].into(), [0.0, 5e-10].into()]);
        assert!(r.is_err());
        assert!(AnchorSet::new(vec![]).is_err());
    }

    #[test]
    fn combined_distance_examples() {
        let (anchors, row) = pair_set();
        let origin = Point::from([0.0, 0.0, 0.0]);
        assert_eq!(combined_distance(&origin, &anchors, &row).unwrap(), 0.0);

        let x = Point::from([2.0, 2.0, 2.0]);
        let d = combined_distance(&x, &anchors, &row).unwrap();
        assert_relative_eq!(d, -2.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(d, -3.46410, epsilon = 1e-5);

        let single = RangingRow::new(&[1], &[Sign::Plus]).unwrap();
        let at_anchor = Point::from([1.0, 1.0, 1.0]);
        assert_eq!(combined_distance(&at_anchor, &anchors, &single).unwrap(), 0.0);
    }

    #[test]
    fn reference_truth_at_origin_vanishes() {
        let t =
            truth_vector(&Point::origin(3), &reference_anchors(), &reference_scenario()).unwrap();
        assert_eq!(t, vec![0.0; 8]);
    }

    #[test]
    fn single_row_truth_matches_combined_distance() {
        let (anchors, row) = pair_set();
        let s = RangingScenario::new(vec![row.clone()], 2).unwrap();
        let x = Point::from([0.3, -0.2, 1.7]);
        assert_eq!(
            truth_vector(&x, &anchors, &s).unwrap(),
            vec![combined_distance(&x, &anchors, &row).unwrap()]
        );
    }

    #[test]
    fn two_dimensional_geometry() {
        let anchors = AnchorSet::new(vec![[0.0, 0.0].into(), [3.0, 0.0].into()]).unwrap();
        let row = RangingRow::tdoa(2, 1).unwrap();
        let x = Point::from([0.0, 4.0]);
        assert_relative_eq!(combined_distance(&x, &anchors, &row).unwrap(), 1.0, epsilon = 1e-12);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -3.0..3.0f64
    }

    proptest! {
        #[test]
        fn incidence_times_distances_is_truth(x in prop::array::uniform3(coord())) {
            let anchors = reference_anchors();
            let scenario = reference_scenario();
            let x = Point::from(x);
            let y = anchor_distances(&x, &anchors);
            let py = build_incidence(&scenario).apply(&y);
            let truth = truth_vector(&x, &anchors, &scenario).unwrap();
            for (a, b) in py.iter().zip(&truth) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn tdoa_rows_annihilate_constants(tau in -10.0..10.0f64, x in prop::array::uniform3(coord())) {
            let scenario = reference_scenario();
            let p = build_incidence(&scenario);
            let y = anchor_distances(&Point::from(x), &reference_anchors());
            let shifted: Vec<f64> = y.iter().map(|v| v + tau).collect();
            for (a, b) in p.apply(&y).iter().zip(p.apply(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + tau.abs()));
            }
            prop_assert!(p.apply(&[1.0; 16]).iter().all(|v| *v == 0.0));
        }

        #[test]
        fn tdoa_magnitude_bounded_by_baseline(x in prop::array::uniform3(coord())) {
            let anchors = reference_anchors();
            let x = Point::from(x);
            for row in reference_scenario().rows() {
                let (i, j) = row.tdoa_pair().unwrap();
                let d = combined_distance(&x, &anchors, row).unwrap();
                prop_assert!(d.abs() <= anchors.get(i).distance(anchors.get(j)) + 1e-12);
            }
        }

        #[test]
        fn row_permutation_permutes_truth(x in prop::array::uniform3(coord()), seed in 0usize..1000) {
            let anchors = reference_anchors();
            let mut pairs = reference_pairs();
            let base = truth_vector(&Point::from(x), &anchors, &reference_scenario()).unwrap();
            pairs.rotate_left(seed % 8);
            let rotated = RangingScenario::from_pairs(&pairs, 16).unwrap();
            let mut expected = base.clone();
            expected.rotate_left(seed % 8);
            prop_assert_eq!(truth_vector(&Point::from(x), &anchors, &rotated).unwrap(), expected);
        }
    }
}

//! Mixed SOCP/SDP relaxation of TDoA localization.
//!
//! Variables are `x ∈ Rᵈ`, `y ∈ Rⁿ` (surrogates for `‖x − aᵢ‖`), a symmetric
//! `Y ∈ Sⁿ` (surrogate for `yyᵀ`) and `γ` (surrogate for `‖x‖²`). The program
//! minimizes `‖W(Py − d)‖²` in lifted form plus a trace penalty:
//!
//! ```text
//! min  PᵀW²P • Y − 2dᵀW²Py + δ·tr(Y)
//! s.t. Y_ii = γ − 2aᵢᵀx + ‖aᵢ‖²                  i = 1..n
//!      Y_ij ≥ |γ − (aᵢ + aⱼ)ᵀx + aᵢᵀaⱼ|          i < j
//!      γ ≥ ‖x‖²,  yᵢ ≥ ‖x − aᵢ‖
//!      [[Y, y], [yᵀ, 1]] ⪰ 0
//! ```
//!
//! Without the penalty, difference-only measurements leave `y → y + τ1`
//! undetermined at the level of the objective (`P1 = 0`).

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::SQRT_2;

use super::cone::{svec_index, Cone};
use super::ipm::{ConeProgram, SparseRows};
use crate::error::{Error, Result};
use crate::geometry::{anchor_distances, AnchorSet, Point, RangingScenario};

/// Default trace penalty coefficient.
pub const DEFAULT_DELTA: f64 = 6e-7;

/// Lower clamp on `|d_k|` for MLE weights, relative to the anchor span.
pub const WEIGHT_CLAMP_FRACTION: f64 = 1e-3;

/// Column positions of the lifted variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub d: usize,
    pub n: usize,
}

impl VariableLayout {
    pub fn x(&self, k: usize) -> usize {
        k
    }

    pub fn y(&self, i: usize) -> usize {
        self.d + i
    }

    /// Column of `Y_ij` (symmetric, natural scaling).
    pub fn big_y(&self, i: usize, j: usize) -> usize {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        // Upper triangle, row-major: row `lo` starts after Σ_{r<lo} (n − r).
        self.d + self.n + lo * self.n - lo * lo.saturating_sub(1) / 2 + (hi - lo)
    }

    pub fn gamma(&self) -> usize {
        self.d + self.n + self.n * (self.n + 1) / 2
    }

    pub fn num_vars(&self) -> usize {
        self.gamma() + 1
    }
}

/// A point in the lifted variable space.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub big_y: DMatrix<f64>,
    pub gamma: f64,
}

impl LiftedPoint {
    /// Rank-one lift of a sensor position: `y = (‖x − aᵢ‖)`, `Y = yyᵀ`, `γ = ‖x‖²`.
    pub fn from_position(x: &Point, anchors: &AnchorSet) -> Self {
        let y = anchor_distances(x, anchors);
        let n = y.len();
        let big_y = DMatrix::from_fn(n, n, |i, j| y[i] * y[j]);
        LiftedPoint { x: x.coords().to_vec(), y, big_y, gamma: x.norm_squared() }
    }

    pub fn to_vector(&self, layout: &VariableLayout) -> Vec<f64> {
        let mut v = vec![0.0; layout.num_vars()];
        v[..layout.d].copy_from_slice(&self.x);
        for i in 0..layout.n {
            v[layout.y(i)] = self.y[i];
            for j in i..layout.n {
                v[layout.big_y(i, j)] = self.big_y[(i, j)] - self.gamma;
            }
        }
        v[layout.gamma()] = self.gamma;
        v
    }

    pub fn from_vector(v: &[f64], layout: &VariableLayout) -> Self {
        let n = layout.n;
        LiftedPoint {
            x: v[..layout.d].to_vec(),
            y: (0..n).map(|i| v[layout.y(i)]).collect(),
            big_y: DMatrix::from_fn(n, n, |i, j| v[layout.big_y(i, j)] + v[layout.gamma()]),
            gamma: v[layout.gamma()],
        }
    }

    /// `[[Y, y], [yᵀ, 1]]`.
    pub fn psd_block(&self) -> DMatrix<f64> {
        let n = self.y.len();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&self.big_y);
        for i in 0..n {
            m[(i, n)] = self.y[i];
            m[(n, i)] = self.y[i];
        }
        m[(n, n)] = 1.0;
        m
    }

    pub fn psd_min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.psd_block()).eigenvalues.min()
    }
}

/// Assembled relaxation together with the data it was built from.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub layout: VariableLayout,
    pub program: ConeProgram,
    pub anchors: AnchorSet,
    pub scenario: RangingScenario,
    pub measurements: Vec<f64>,
    pub delta: f64,
    pub weights: Option<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
}

/// Constraint family sizes, for inspection and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintCounts {
    pub diagonal_equalities: usize,
    pub abs_value_pairs: usize,
    pub linear_inequalities: usize,
    pub anchor_socs: usize,
    pub anchor_soc_dim: usize,
    pub gamma_soc_dim: usize,
    pub psd_order: usize,
}

impl ConicProblem {
    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    pub fn d(&self) -> usize {
        self.layout.d
    }

    pub fn counts(&self) -> ConstraintCounts {
        let mut counts = ConstraintCounts {
            diagonal_equalities: self.program.a.nrows(),
            abs_value_pairs: 0,
            linear_inequalities: 0,
            anchor_socs: 0,
            anchor_soc_dim: 0,
            gamma_soc_dim: 0,
            psd_order: 0,
        };
        for (k, cone) in self.program.cones.iter().enumerate() {
            match *cone {
                Cone::Nonneg(q) => {
                    counts.linear_inequalities += q;
                    counts.abs_value_pairs += q / 2;
                }
                Cone::Soc(q) if k == 1 => counts.gamma_soc_dim = q,
                Cone::Soc(q) => {
                    counts.anchor_socs += 1;
                    counts.anchor_soc_dim = q;
                }
                Cone::Psd(q) => counts.psd_order = q,
            }
        }
        counts
    }

    /// Squared weights on each row (all ones when unweighted).
    fn row_weights_sq(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.iter().map(|v| v * v).collect(),
            None => vec![1.0; self.m()],
        }
    }

    /// Objective value of a lifted point.
    pub fn objective(&self, p: &LiftedPoint) -> f64 {
        let v = p.to_vector(&self.layout);
        v.iter().zip(&self.program.c).map(|(a, b)| a * b).sum()
    }

    /// Raw non-convex objective `Σ w_k²(‖x − a_i‖ − ‖x − a_j‖ − d_k)²` at `x`.
    pub fn raw_objective(&self, x: &Point) -> f64 {
        let w2 = self.row_weights_sq();
        self.pairs
            .iter()
            .zip(&self.measurements)
            .zip(&w2)
            .map(|((&(i, j), d), w)| {
                let r = x.distance(self.anchors.get(i)) - x.distance(self.anchors.get(j)) - d;
                w * r * r
            })
            .sum()
    }

    /// Largest violation of any relaxation constraint at `p` (0 when feasible).
    pub fn max_violation(&self, p: &LiftedPoint) -> f64 {
        let n = self.n();
        let x = Point::new(p.x.clone()).expect("finite lifted point");
        let mut worst = 0.0f64;
        for i in 0..n {
            let a = self.anchors.get(i);
            let rhs = p.gamma - 2.0 * a.dot(&x) + a.norm_squared();
            worst = worst.max((p.big_y[(i, i)] - rhs).abs());
            worst = worst.max(x.distance(a) - p.y[i]);
            for j in i + 1..n {
                let b = self.anchors.get(j);
                let inner = p.gamma - (a.dot(&x) + b.dot(&x)) + a.dot(b);
                worst = worst.max(inner.abs() - p.big_y[(i, j)]);
            }
        }
        worst = worst.max(x.norm_squared() - p.gamma);
        worst.max(-p.psd_min_eigenvalue())
    }
}

/// MLE weights `1/|d_k|`, with `|d_k|` clamped below at a fraction of the
/// anchor span.
pub fn mle_weights(measurements: &[f64], anchors: &AnchorSet) -> Vec<f64> {
    let clamp = WEIGHT_CLAMP_FRACTION * anchors.span().max(f64::MIN_POSITIVE);
    measurements.iter().map(|d| 1.0 / d.abs().max(clamp)).collect()
}

/// Rewrites the program in terms of `Z = Y − γ11ᵀ`. With `P1 = 0`, the
/// uniform shift of `Y` and `γ` is otherwise a combination of many columns
/// that only the trace penalty sees; here it is the `γ` column alone.
fn shift_coordinates(program: &mut ConeProgram, layout: &VariableLayout) {
    let gamma = layout.gamma();
    let first = layout.big_y(0, 0);
    let is_y = |c: usize| c >= first && c < gamma;
    program.c[gamma] += (first..gamma).map(|c| program.c[c]).sum::<f64>();
    for rows in [&mut program.a, &mut program.g] {
        rows.map_rows(|row| {
            let extra: f64 = row.iter().filter(|(c, _)| is_y(*c)).map(|(_, v)| v).sum();
            if extra != 0.0 {
                match row.iter_mut().find(|(c, _)| *c == gamma) {
                    Some(e) => e.1 += extra,
                    None => row.push((gamma, extra)),
                }
                row.retain(|(_, v)| *v != 0.0);
            }
        });
    }
}

pub fn assemble_relaxation(
    anchors: &AnchorSet,
    scenario: &RangingScenario,
    measurements: &[f64],
    delta: f64,
    weights: Option<&[f64]>,
) -> Result<ConicProblem> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::validation(format!(
            "penalty delta must be finite and ≥ 0, got {delta}"
        )));
    }
    if anchors.len() != scenario.n() {
        return Err(Error::validation(format!(
            "scenario addresses {} anchors but {} were supplied",
            scenario.n(),
            anchors.len()
        )));
    }
    if measurements.len() != scenario.m() {
        return Err(Error::validation(format!(
            "{} measurements for {} ranging rows",
            measurements.len(),
            scenario.m()
        )));
    }
    if measurements.iter().any(|d| !d.is_finite()) {
        return Err(Error::validation("measurements must be finite"));
    }
    let pairs = scenario
        .rows()
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.tdoa_pair().ok_or_else(|| {
                Error::UnsupportedScenario(format!(
                    "row {} is not a two-anchor TDoA row; the relaxation supports only TDoA pairs",
                    k + 1
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(w) = weights {
        if w.len() != pairs.len() {
            return Err(Error::validation(format!("{} weights for {} rows", w.len(), pairs.len())));
        }
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::validation("weights must be strictly positive and finite"));
        }
    }

    let n = anchors.len();
    let d = anchors.dim();
    let layout = VariableLayout { d, n };
    let nv = layout.num_vars();

    // Objective: Q • Y − 2 bᵀy + δ tr(Y), Q = PᵀW²P, b = PᵀW²d.
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut lin = vec![0.0; n];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let w2 = weights.map_or(1.0, |w| w[k] * w[k]);
        q[(i, i)] += w2;
        q[(j, j)] += w2;
        q[(i, j)] -= w2;
        q[(j, i)] -= w2;
        lin[i] += w2 * measurements[k];
        lin[j] -= w2 * measurements[k];
    }
    let mut c = vec![0.0; nv];
    for i in 0..n {
        c[layout.y(i)] = -2.0 * lin[i];
        c[layout.big_y(i, i)] = q[(i, i)] + delta;
        for j in i + 1..n {
            c[layout.big_y(i, j)] = 2.0 * q[(i, j)];
        }
    }

    // Y_ii − γ + 2aᵢᵀx = ‖aᵢ‖².
    let mut a = SparseRows::new(nv);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let ai = anchors.get(i);
        let mut row = vec![(layout.big_y(i, i), 1.0), (layout.gamma(), -1.0)];
        row.extend(ai.coords().iter().enumerate().map(|(k, v)| (layout.x(k), 2.0 * v)));
        a.push(row);
        b.push(ai.norm_squared());
    }

    let mut g = SparseRows::new(nv);
    let mut h = Vec::new();
    let mut cones = Vec::new();

    // ±(γ − (aᵢ + aⱼ)ᵀx + aᵢᵀaⱼ) − Y_ij ≤ 0.
    for i in 0..n {
        for j in i + 1..n {
            let (ai, aj) = (anchors.get(i), anchors.get(j));
            let cross = ai.dot(aj);
            for sign in [1.0, -1.0] {
                let mut row = vec![(layout.gamma(), sign), (layout.big_y(i, j), -1.0)];
                row.extend(
                    (0..d).map(|k| (layout.x(k), -sign * (ai.coords()[k] + aj.coords()[k]))),
                );
                g.push(row);
                h.push(-sign * cross);
            }
        }
    }
    cones.push(Cone::Nonneg(n * (n - 1)));

    // γ ≥ ‖x‖² as ‖(x, (γ − 1)/2)‖ ≤ (γ + 1)/2.
    g.push(vec![(layout.gamma(), -0.5)]);
    h.push(0.5);
    for k in 0..d {
        g.push(vec![(layout.x(k), -1.0)]);
        h.push(0.0);
    }
    g.push(vec![(layout.gamma(), -0.5)]);
    h.push(-0.5);
    cones.push(Cone::Soc(d + 2));

    // yᵢ ≥ ‖x − aᵢ‖.
    for i in 0..n {
        g.push(vec![(layout.y(i), -1.0)]);
        h.push(0.0);
        for k in 0..d {
            g.push(vec![(layout.x(k), -1.0)]);
            h.push(-anchors.get(i).coords()[k]);
        }
        cones.push(Cone::Soc(d + 1));
    }

    // [[Y, y], [yᵀ, 1]] ⪰ 0, in svec order.
    let order = n + 1;
    let mut psd_rows = vec![(Vec::new(), 0.0); order * (order + 1) / 2];
    for j in 0..order {
        for i in j..order {
            let k = svec_index(order, i, j);
            let scale = if i == j { 1.0 } else { SQRT_2 };
            psd_rows[k] = if i < n {
                (vec![(layout.big_y(i, j), -scale)], 0.0)
            } else if j < n {
                (vec![(layout.y(j), -scale)], 0.0)
            } else {
                (Vec::new(), 1.0)
            };
        }
    }
    for (row, hv) in psd_rows {
        g.push(row);
        h.push(hv);
    }
    cones.push(Cone::Psd(order));

    let mut program = ConeProgram { c, a, b, g, h, cones };
    shift_coordinates(&mut program, &layout);
    Ok(ConicProblem {
        layout,
        program,
        anchors: anchors.clone(),
        scenario: scenario.clone(),
        measurements: measurements.to_vec(),
        delta,
        weights: weights.map(<[f64]>::to_vec),
        pairs,
    })
}

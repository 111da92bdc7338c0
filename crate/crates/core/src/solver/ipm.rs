//! Primal-dual path-following interior-point method for linear cone programs
//!
//! ```text
//! minimize    cᵀx
//! subject to  Ax = b
//!             Gx + s = h,   s ∈ K
//! ```
//!
//! where `K` is a product of nonnegative orthants, second-order cones and PSD
//! cones. The dual is `maximize −bᵀy − hᵀz` subject to `Aᵀy + Gᵀz + c = 0`,
//! `z ∈ K`. Each iteration computes the Nesterov–Todd scaling of `(s, z)`,
//! eliminates `Δs` and `Δz` from the Newton system, and takes a Mehrotra
//! predictor-corrector step on the reduced dense system
//!
//! ```text
//! [ Gᵀ(WᵀW)⁻¹G  Aᵀ ] [Δx]
//! [ A           0  ] [Δy]
//! ```
//!
//! which is small for the problems this crate builds (a few hundred columns).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cone::{self, dot, norm, Cone, Scaling, ScalingOp};

/// `(Δx, Δy, Δz)`.
type Direction = (Vec<f64>, Vec<f64>, Vec<f64>);

/// `(x, y, s, z)`.
type Iterate = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Row-sparse matrix with a fixed column count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        SparseRows { rows: Vec::new(), ncols }
    }

    pub fn push(&mut self, entries: Vec<(usize, f64)>) {
        debug_assert!(entries.iter().all(|&(c, _)| c < self.ncols));
        self.rows.push(entries);
    }

    /// Edits every row in place.
    pub fn map_rows(&mut self, f: impl FnMut(&mut Vec<(usize, f64)>)) {
        self.rows.iter_mut().for_each(f);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(c, v)| v * x[c]).sum()).collect()
    }

    pub fn tmul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &yi) in self.rows.iter().zip(y) {
            for &(c, v) in r {
                out[c] += v * yi;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                m[(i, c)] += v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub c: Vec<f64>,
    pub a: SparseRows,
    pub b: Vec<f64>,
    pub g: SparseRows,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConeProgram {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn check_dims(&self) -> Result<(), String> {
        let n = self.c.len();
        if self.a.ncols() != n || self.g.ncols() != n {
            return Err("constraint matrices do not match the variable count".into());
        }
        if self.a.nrows() != self.b.len() {
            return Err("A and b disagree in row count".into());
        }
        if self.g.nrows() != self.h.len() || self.h.len() != cone::total_dim(&self.cones) {
            return Err("G, h and the cone dimensions disagree".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.c) && finite(&self.b) && finite(&self.h)) {
            return Err("problem data must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iters: usize,
    pub step_fraction: f64,
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol_gap > 0.0 && self.tol_feas > 0.0) {
            return Err("solver tolerances must be positive".into());
        }
        if self.max_iters == 0 {
            return Err("solver max_iters must be at least 1".into());
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err("solver step_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol_gap: 1e-8, tol_feas: 1e-8, max_iters: 200, step_fraction: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    MaxIters,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    /// Relative primal residual `max(‖Ax−b‖/max(1,‖b‖), ‖Gx+s−h‖/max(1,‖h‖))`.
    pub primal_residual: f64,
    /// Relative dual residual `‖Aᵀy+Gᵀz+c‖/max(1,‖c‖)`.
    pub dual_residual: f64,
    /// Relative duality gap `sᵀz / max(1, min(|pcost|, |dcost|))`.
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
    pcost: f64,
    dcost: f64,
}

/// Orthogonal splitting of the variable space by the equality constraints:
/// `Aᵀ = Q₁R`, with the columns of `Q₂` spanning the null space of `A`.
/// Computed once per program; the equalities are then eliminated instead of
/// being carried through a Schur complement.
struct NullSpace {
    q1: DMatrix<f64>,
    q2: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl NullSpace {
    /// `None` when `A` is rank deficient.
    fn new(prog: &ConeProgram) -> Option<Self> {
        let n = prog.num_vars();
        let p = prog.a.nrows();
        if p == 0 {
            return Some(NullSpace {
                q1: DMatrix::zeros(n, 0),
                q2: DMatrix::identity(n, n),
                r: DMatrix::zeros(0, 0),
            });
        }
        if p > n {
            return None;
        }
        // QR of [Aᵀ I] yields a full orthogonal basis whose leading p columns span range(Aᵀ).
        let mut aug = DMatrix::zeros(n, p + n);
        aug.view_mut((0, 0), (n, p)).copy_from(&prog.a.to_dense().transpose());
        aug.view_mut((0, p), (n, n)).fill_with_identity();
        let qr = aug.qr();
        let q = qr.q();
        let r = qr.r().view((0, 0), (p, p)).into_owned();
        let big = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if r.diagonal().iter().any(|v| !(v.abs() > 1e-10 * big)) {
            return None;
        }
        Some(NullSpace {
            q1: q.columns(0, p).into_owned(),
            q2: q.columns(p, n - p).into_owned(),
            r,
        })
    }
}

/// Factored reduced KKT system for the current scaling.
struct Kkt<'a> {
    prog: &'a ConeProgram,
    scaling: &'a Scaling,
    null: &'a NullSpace,
    blocks: Vec<DMatrix<f64>>,
    reduced: Reduced,
}

/// Factorization of `Q₂ᵀHQ₂` with `H = Gᵀ(WᵀW)⁻¹G = BᵀB`, `B = W⁻ᵀG`.
enum Reduced {
    Normal(NormalFactor),
    /// `BQ₂D = Q_C R`; keeps `B` and `Q_C` so that right-hand sides of the
    /// form `Bᵀc` never pass through `(RᵀR)⁻¹`.
    Orthogonal {
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        factor: NormalFactor,
    },
}

/// `H = Gᵀ(WᵀW)⁻¹G`, accumulated blockwise from the sparse rows of `G`.
fn gram(prog: &ConeProgram, blocks: &[DMatrix<f64>]) -> Option<DMatrix<f64>> {
    let n = prog.num_vars();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for ((cone, off), m) in cone::blocks(&prog.cones).zip(blocks) {
        let d = cone.dim();
        let diagonal = matches!(cone, Cone::Nonneg(_));
        for u in 0..d {
            let gu = prog.g.row(off + u);
            if gu.is_empty() {
                continue;
            }
            let vs = if diagonal { u..u + 1 } else { 0..d };
            for v in vs {
                let muv = m[(u, v)];
                if muv == 0.0 {
                    continue;
                }
                for &(cv, gv) in prog.g.row(off + v) {
                    let w = muv * gv;
                    for &(cu, gu_val) in gu {
                        h[(cu, cv)] += gu_val * w;
                    }
                }
            }
        }
    }
    h.iter().all(|v| v.is_finite()).then_some(h)
}

/// Dense `W⁻ᵀG`.
fn scaled_g(prog: &ConeProgram, scaling: &Scaling) -> Option<DMatrix<f64>> {
    let g = prog.g.to_dense();
    let mut out = DMatrix::zeros(g.nrows(), g.ncols());
    for j in 0..g.ncols() {
        let col = scaling.apply(ScalingOp::WInvT, g.column(j).as_slice());
        out.set_column(j, &DVector::from_vec(col));
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

impl<'a> Kkt<'a> {
    /// `orthogonal` selects QR on `W⁻ᵀGQ₂` instead of Cholesky on `Q₂ᵀHQ₂`;
    /// slower, but accurate when the scaling is badly conditioned.
    fn factor(
        prog: &'a ConeProgram,
        scaling: &'a Scaling,
        null: &'a NullSpace,
        orthogonal: bool,
    ) -> Option<Self> {
        let blocks: Vec<DMatrix<f64>> =
            (0..prog.cones.len()).map(|k| scaling.inverse_gram_block(k)).collect();
        let reduced = if orthogonal {
            let b = scaled_g(prog, scaling)?;
            let (factor, q) = NormalFactor::from_columns(&b * &null.q2)?;
            Reduced::Orthogonal { b, q, factor }
        } else {
            let h = gram(prog, &blocks)?;
            Reduced::Normal(NormalFactor::from_gram(null.q2.transpose() * h * &null.q2)?)
        };
        Some(Kkt { prog, scaling, null, blocks, reduced })
    }

    fn apply_m(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for ((cone, off), m) in cone::blocks(&self.prog.cones).zip(&self.blocks) {
            let d = cone.dim();
            let r = m * DVector::from_column_slice(&u[off..off + d]);
            out[off..off + d].copy_from_slice(r.as_slice());
        }
        out
    }

    fn apply_h(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.prog.g.tmul(&self.apply_m(&self.prog.g.mul(v.as_slice()))))
    }

    /// One pass through the reduced system, no refinement.
    fn reduced_solve(
        &self,
        bx: &[f64],
        by: &[f64],
        bz: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let ns = self.null;
        let bxv = DVector::from_column_slice(bx);
        // Particular solution of A dx = by in range(Aᵀ), then the null-space part.
        let u = ns.r.tr_solve_upper_triangular(&DVector::from_column_slice(by))?;
        let xp = &ns.q1 * u;
        let (dx, dy, dz) = match &self.reduced {
            Reduced::Normal(factor) => {
                let gt = self.prog.g.tmul(&self.apply_m(bz));
                let r1 = &bxv + DVector::from_vec(gt);
                let wv = factor.solve_vec(&ns.q2.tr_mul(&(&r1 - self.apply_h(&xp))))?;
                let dx = xp + &ns.q2 * wv;
                let dy = ns.r.solve_upper_triangular(&ns.q1.tr_mul(&(&r1 - self.apply_h(&dx))))?;
                let diff: Vec<f64> =
                    self.prog.g.mul(dx.as_slice()).iter().zip(bz).map(|(g, b)| g - b).collect();
                (dx, dy, self.apply_m(&diff))
            }
            Reduced::Orthogonal { b, q, factor } => {
                let c = DVector::from_vec(self.scaling.apply(ScalingOp::WInvT, bz));
                let half = factor.half_solve_vec(&ns.q2.tr_mul(&bxv))? + q.tr_mul(&(&c - b * &xp));
                let wv = factor.finish_vec(&half)?;
                let dx = xp + &ns.q2 * wv;
                let e = b * &dx - c;
                let dy = ns.r.solve_upper_triangular(&ns.q1.tr_mul(&(&bxv - b.tr_mul(&e))))?;
                (dx, dy, self.scaling.apply(ScalingOp::WInv, e.as_slice()))
            }
        };
        if dx.iter().chain(dy.iter()).chain(dz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx.iter().copied().collect(), dy.iter().copied().collect(), dz))
    }

    /// Solves `Aᵀdy + Gᵀdz = bx`, `A dx = by`, `G dx − WᵀW dz = bz` with
    /// iterative refinement on the unreduced system, keeping the iterate with
    /// the smallest residual. Returns `None` when the equality block is
    /// inconsistent (e.g. contradictory equality constraints).
    /// Returns the direction and its relative residual.
    fn solve(&self, bx: &[f64], by: &[f64], bz: &[f64]) -> Option<(Direction, f64)> {
        let mut cur = self.reduced_solve(bx, by, bz)?;
        // The third block is measured after scaling by W⁻ᵀ, where it has the
        // same units as the other blocks.
        let scaled = |r1: &[f64], r2: &[f64], r3: &[f64]| {
            let r3s = self.scaling.apply(ScalingOp::WInvT, r3);
            (dot(r1, r1) + dot(r2, r2) + dot(&r3s, &r3s)).sqrt()
        };
        let rhs_norm = scaled(bx, by, bz).max(1e-300);
        let mut best: Option<(f64, Direction)> = None;
        for _ in 0..REFINEMENT_STEPS {
            let (r1, r2, r3) = self.full_residual(bx, by, bz, &cur.0, &cur.1, &cur.2);
            let res = scaled(&r1, &r2, &r3);
            if !res.is_finite() {
                break;
            }
            if best.as_ref().is_none_or(|(b, _)| res < *b) {
                best = Some((res, cur.clone()));
            } else {
                break;
            }
            if res <= 1e-14 * rhs_norm {
                break;
            }
            let Some((cx, cy, cz)) = self.reduced_solve(&r1, &r2, &r3) else {
                break;
            };
            axpy(1.0, &cx, &mut cur.0);
            axpy(1.0, &cy, &mut cur.1);
            axpy(1.0, &cz, &mut cur.2);
        }
        let (best_res, (dx, dy, dz)) = best?;
        let adx = self.prog.a.mul(&dx);
        let eq_res = adx.iter().zip(by).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if eq_res > 1e-6 * (1.0 + norm(by) + norm(&dx)) {
            return None;
        }
        Some(((dx, dy, dz), best_res / rhs_norm))
    }

    fn full_residual(
        &self,
        bx: &[f64],
        by: &[f64],
        bz: &[f64],
        dx: &[f64],
        dy: &[f64],
        dz: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let aty = self.prog.a.tmul(dy);
        let gtz = self.prog.g.tmul(dz);
        let r1 = (0..bx.len()).map(|i| bx[i] - aty[i] - gtz[i]).collect();
        let adx = self.prog.a.mul(dx);
        let r2 = (0..by.len()).map(|i| by[i] - adx[i]).collect();
        let gdx = self.prog.g.mul(dx);
        let wtw = self.scaling.apply(ScalingOp::WT, &self.scaling.apply(ScalingOp::W, dz));
        let r3 = (0..bz.len()).map(|i| bz[i] - gdx[i] + wtw[i]).collect();
        (r1, r2, r3)
    }
}

const REFINEMENT_STEPS: usize = 4;

/// Relative KKT residual above which the Cholesky path is abandoned.
const CHOLESKY_ACCURACY: f64 = 1e-10;

/// Triangular factor of a normal-equations matrix `H`: `DHD = RᵀR` with
/// `D` a positive diagonal equilibration.
struct NormalFactor {
    r: DMatrix<f64>,
    scale: DVector<f64>,
}

impl NormalFactor {
    /// From `H` directly, by Cholesky.
    fn from_gram(mut h: DMatrix<f64>) -> Option<Self> {
        let n = h.nrows();
        let scale = DVector::from_iterator(
            n,
            h.diagonal()
                .iter()
                .map(|&v| if v > 0.0 && v.is_finite() { 1.0 / v.sqrt() } else { 1.0 }),
        );
        for j in 0..n {
            for i in 0..n {
                h[(i, j)] *= scale[i] * scale[j];
            }
        }
        let l = cholesky_with_shift(h)?.unpack();
        Some(NormalFactor { r: l.transpose(), scale })
    }

    /// From `B` with `H = BᵀB`, by Householder QR. Avoids squaring the
    /// condition number of `B`.
    fn from_columns(mut b: DMatrix<f64>) -> Option<(Self, DMatrix<f64>)> {
        let n = b.ncols();
        if b.nrows() < n {
            return None;
        }
        let scale = DVector::from_iterator(
            n,
            b.column_iter().map(|c| {
                let v = c.norm();
                if v > 0.0 && v.is_finite() {
                    1.0 / v
                } else {
                    1.0
                }
            }),
        );
        for (j, mut c) in b.column_iter_mut().enumerate() {
            c *= scale[j];
        }
        let (q, r) = b.qr().unpack();
        if r.diagonal().iter().any(|v| !(v.abs() > 1e-300) || !v.is_finite()) {
            return None;
        }
        Some((NormalFactor { r, scale }, q))
    }

    /// `R⁻ᵀ D b`, so that `bᵀH⁻¹b = ‖half_solve(b)‖²`.
    fn half_solve(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let mut rhs = b.clone();
        for mut col in rhs.column_iter_mut() {
            col.component_mul_assign(&self.scale);
        }
        self.r.tr_solve_upper_triangular(&rhs)
    }

    fn solve(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let half = self.half_solve(b)?;
        let mut out = self.r.solve_upper_triangular(&half)?;
        for mut col in out.column_iter_mut() {
            col.component_mul_assign(&self.scale);
        }
        Some(out)
    }

    fn half_solve_vec(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        self.r.tr_solve_upper_triangular(&b.component_mul(&self.scale))
    }

    /// `D R⁻¹ v`, the second half of [`Self::solve`].
    fn finish_vec(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.r.solve_upper_triangular(v)?.component_mul(&self.scale))
    }

    fn solve_vec(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve(&m).map(|v| v.column(0).into_owned())
    }
}

/// Cholesky factorization, retried with growing diagonal shifts when the
/// matrix is numerically semidefinite.
fn cholesky_with_shift(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut shift = 1e-14 * scale;
    while shift <= 1e-6 * scale {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}

fn residuals(prog: &ConeProgram, x: &[f64], y: &[f64], s: &[f64], z: &[f64]) -> Residuals {
    let mut rx = prog.a.tmul(y);
    for (r, (g, c)) in rx.iter_mut().zip(prog.g.tmul(z).iter().zip(&prog.c)) {
        *r += g + c;
    }
    let ry: Vec<f64> = prog.a.mul(x).iter().zip(&prog.b).map(|(a, b)| a - b).collect();
    let rz: Vec<f64> =
        prog.g.mul(x).iter().zip(s).zip(&prog.h).map(|((g, s), h)| g + s - h).collect();
    let pcost = dot(&prog.c, x);
    let dcost = -dot(&prog.b, y) - dot(&prog.h, z);
    let gap_abs = dot(s, z);
    let pres = (norm(&ry) / norm(&prog.b).max(1.0)).max(norm(&rz) / norm(&prog.h).max(1.0));
    let dres = norm(&rx) / norm(&prog.c).max(1.0);
    let gap = gap_abs / pcost.abs().min(dcost.abs()).max(1.0);
    Residuals { rx, ry, rz, pres, dres, gap, pcost, dcost }
}

/// Starting point: least-squares primal and minimum-norm dual, shifted into
/// the cone interior.
fn initial_point(prog: &ConeProgram, null: &NullSpace) -> Option<Iterate> {
    let unit =
        Scaling::compute(&prog.cones, &cone::identity(&prog.cones), &cone::identity(&prog.cones))?;
    let kkt = Kkt::factor(prog, &unit, null, false)?;

    // Gᵀz + Aᵀy = −c, Ax = b, Gx − z = h: x minimizes cᵀx + ½‖Gx − h‖².
    let neg_c: Vec<f64> = prog.c.iter().map(|v| -v).collect();
    let ((x, y, z), _) = kkt.solve(&neg_c, &prog.b, &prog.h)?;
    let mut s: Vec<f64> = z.iter().map(|v| -v).collect();
    let mut z = z;

    let e = cone::identity(&prog.cones);
    let nrms = norm(&s).max(1.0);
    let ts = -cone::min_eigenvalue(&prog.cones, &s);
    if ts >= -1e-8 * nrms {
        let a = 1.0 + ts;
        for (v, ei) in s.iter_mut().zip(&e) {
            *v += a * ei;
        }
    }
    let nrmz = norm(&z).max(1.0);
    let tz = -cone::min_eigenvalue(&prog.cones, &z);
    if tz >= -1e-8 * nrmz {
        let a = 1.0 + tz;
        for (v, ei) in z.iter_mut().zip(&e) {
            *v += a * ei;
        }
    }
    Some((x, y, s, z))
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn solve(prog: &ConeProgram, settings: &SolverSettings) -> IpmSolution {
    let n = prog.num_vars();
    let p = prog.a.nrows();
    let m = cone::total_dim(&prog.cones);
    let failure = |iterations| IpmSolution {
        x: vec![0.0; n],
        y: vec![0.0; p],
        s: vec![0.0; m],
        z: vec![0.0; m],
        status: IpmStatus::NumericalFailure,
        iterations,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        gap: f64::INFINITY,
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
    };
    if prog.check_dims().is_err() {
        return failure(0);
    }
    let Some(null) = NullSpace::new(prog) else {
        return failure(0);
    };
    let Some((mut x, mut y, mut s, mut z)) = initial_point(prog, &null) else {
        return failure(0);
    };
    let Some(mut w) = Scaling::compute(&prog.cones, &s, &z) else {
        return failure(0);
    };
    let degree = cone::total_degree(&prog.cones) as f64;
    let e = cone::identity(&prog.cones);
    let mut orthogonal = false;

    let pack =
        |x: &[f64], y: &[f64], s: &[f64], z: &[f64], r: &Residuals, status, it| IpmSolution {
            x: x.to_vec(),
            y: y.to_vec(),
            s: s.to_vec(),
            z: z.to_vec(),
            status,
            iterations: it,
            primal_residual: r.pres,
            dual_residual: r.dres,
            gap: r.gap,
            primal_objective: r.pcost,
            dual_objective: r.dcost,
        };

    for iter in 0..=settings.max_iters {
        let r = residuals(prog, &x, &y, &s, &z);
        if !(r.pres.is_finite() && r.dres.is_finite() && r.gap.is_finite()) {
            return failure(iter);
        }
        if r.pres <= settings.tol_feas && r.dres <= settings.tol_feas && r.gap <= settings.tol_gap {
            return pack(&x, &y, &s, &z, &r, IpmStatus::Optimal, iter);
        }
        if iter == settings.max_iters {
            return pack(&x, &y, &s, &z, &r, IpmStatus::MaxIters, iter);
        }
        // Diverging iterates signal an infeasible or unbounded program.
        if norm(&x) > 1e12 || norm(&z) > 1e12 || norm(&y) > 1e12 {
            return pack(&x, &y, &s, &z, &r, IpmStatus::NumericalFailure, iter);
        }

        let lambda = w.lambda().to_vec();
        let mut kkt = Kkt::factor(prog, &w, &null, orthogonal);
        if kkt.is_none() && !orthogonal {
            orthogonal = true;
            kkt = Kkt::factor(prog, &w, &null, true);
        }
        let Some(mut kkt) = kkt else {
            return pack(&x, &y, &s, &z, &r, IpmStatus::NumericalFailure, iter);
        };
        let mu = dot(&lambda, &lambda) / degree;
        let bx: Vec<f64> = r.rx.iter().map(|v| -v).collect();
        let by: Vec<f64> = r.ry.iter().map(|v| -v).collect();

        let mut sigma = 0.0;
        let mut ds_a = vec![0.0; m];
        let mut dz_a = vec![0.0; m];
        let mut step = None;
        for corrector in [false, true] {
            // Right-hand side of λ ∘ (W⁻ᵀds + Wdz) = rc.
            let mut rc: Vec<f64> =
                cone::jordan_product(&prog.cones, &lambda, &lambda).iter().map(|v| -v).collect();
            if corrector {
                let cross = cone::jordan_product(&prog.cones, &ds_a, &dz_a);
                for k in 0..m {
                    rc[k] += sigma * mu * e[k] - cross[k];
                }
            }
            let lrc = w.lambda_solve(&rc);
            let wt_lrc = w.apply(ScalingOp::WT, &lrc);
            let bz: Vec<f64> = r.rz.iter().zip(&wt_lrc).map(|(rz, t)| -rz - t).collect();
            let mut solved = kkt.solve(&bx, &by, &bz);
            if !orthogonal && solved.as_ref().is_none_or(|d| d.1 > CHOLESKY_ACCURACY) {
                // Cholesky on H has lost too many digits; switch for the rest of the run.
                orthogonal = true;
                if let Some(k) = Kkt::factor(prog, &w, &null, true) {
                    kkt = k;
                    solved = kkt.solve(&bx, &by, &bz);
                }
            }
            let Some(((dx, dy, dz), _)) = solved else {
                return pack(&x, &y, &s, &z, &r, IpmStatus::NumericalFailure, iter);
            };
            let dz_scaled = w.apply(ScalingOp::W, &dz);
            // ds from the linearized primal equation keeps Gx + s = h exact;
            // in scaled form it differs from λ⁻¹∘rc − Wdz only by the scaled
            // KKT residual.
            let gdx = prog.g.mul(&dx);
            let ds: Vec<f64> = r.rz.iter().zip(&gdx).map(|(rz, g)| -rz - g).collect();
            let ds_scaled = w.apply(ScalingOp::WInvT, &ds);
            let alpha = w.max_step(&ds_scaled).min(w.max_step(&dz_scaled));

            if !corrector {
                let a = alpha.min(1.0);
                let num = dot(&ds_scaled, &dz_scaled);
                sigma = (1.0 - a + num / dot(&lambda, &lambda) * a * a).clamp(0.0, 1.0).powi(3);
                ds_a = ds_scaled;
                dz_a = dz_scaled;
            } else {
                let a = (settings.step_fraction * alpha).min(1.0);
                step = Some((a, dx, dy, ds, dz, ds_scaled, dz_scaled));
            }
        }
        let (mut a, dx, dy, ds, dz, ds_scaled, dz_scaled) = step.expect("corrector step computed");
        // Very close to the boundary the new scaling may not factor; shorter
        // steps keep the iterate further inside.
        let mut next = None;
        for _ in 0..8 {
            if !(a > 1e-12) {
                break;
            }
            next = w.update(a, &ds_scaled, &dz_scaled);
            if next.is_some() {
                break;
            }
            a *= 0.5;
        }
        let Some(next) = next else {
            return pack(&x, &y, &s, &z, &r, IpmStatus::NumericalFailure, iter);
        };
        w = next;
        axpy(a, &dx, &mut x);
        axpy(a, &dy, &mut y);
        axpy(a, &ds, &mut s);
        axpy(a, &dz, &mut z);
    }
    unreachable!("loop returns at max_iters")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp_row(entries: &[(usize, f64)]) -> Vec<(usize, f64)> {
        entries.to_vec()
    }

    /// minimize −x₀ − x₁ s.t. x₀ + 2x₁ ≤ 4, 3x₀ + x₁ ≤ 6, x ≥ 0. Optimum (1.6, 1.2).
    fn small_lp() -> ConeProgram {
        let mut g = SparseRows::new(2);
        g.push(lp_row(&[(0, 1.0), (1, 2.0)]));
        g.push(lp_row(&[(0, 3.0), (1, 1.0)]));
        g.push(lp_row(&[(0, -1.0)]));
        g.push(lp_row(&[(1, -1.0)]));
        ConeProgram {
            c: vec![-1.0, -1.0],
            a: SparseRows::new(2),
            b: vec![],
            g,
            h: vec![4.0, 6.0, 0.0, 0.0],
            cones: vec![Cone::Nonneg(4)],
        }
    }

    #[test]
    fn solves_small_lp() {
        let sol = solve(&small_lp(), &SolverSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert!((sol.x[0] - 1.6).abs() < 1e-7 && (sol.x[1] - 1.2).abs() < 1e-7, "{:?}", sol.x);
        assert!((sol.primal_objective - sol.dual_objective).abs() < 1e-7);
    }

    /// minimize t s.t. ‖(x₀ − 1, x₁ − 2)‖ ≤ t, x₀ + x₁ = 0.
    /// Distance from (1, 2) to the line x₀ + x₁ = 0 is 3/√2.
    #[test]
    fn solves_small_socp() {
        let mut a = SparseRows::new(3);
        a.push(vec![(1, 1.0), (2, 1.0)]);
        let mut g = SparseRows::new(3);
        g.push(vec![(0, -1.0)]);
        g.push(vec![(1, -1.0)]);
        g.push(vec![(2, -1.0)]);
        let prog = ConeProgram {
            c: vec![1.0, 0.0, 0.0],
            a,
            b: vec![0.0],
            g,
            h: vec![0.0, -1.0, -2.0],
            cones: vec![Cone::Soc(3)],
        };
        let sol = solve(&prog, &SolverSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert!((sol.x[0] - 3.0 / 2f64.sqrt()).abs() < 1e-7);
        assert!((sol.x[1] + 0.5).abs() < 1e-6 && (sol.x[2] - 0.5).abs() < 1e-6);
    }

    /// minimize ⟨C, X⟩ s.t. tr X = 1, X ⪰ 0: optimum is λ_min(C).
    #[test]
    fn solves_small_sdp() {
        let c_mat = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let n = 3;
        let dim = 6;
        let c = cone::svec(&c_mat);
        let mut a = SparseRows::new(dim);
        a.push((0..n).map(|i| (cone::svec_index(n, i, i), 1.0)).collect());
        let mut g = SparseRows::new(dim);
        for k in 0..dim {
            g.push(vec![(k, -1.0)]);
        }
        let prog =
            ConeProgram { c, a, b: vec![1.0], g, h: vec![0.0; dim], cones: vec![Cone::Psd(3)] };
        let sol = solve(&prog, &SolverSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        let expected = 2.0 - 2f64.sqrt();
        assert!((sol.primal_objective - expected).abs() < 1e-7, "{}", sol.primal_objective);
    }

    #[test]
    fn contradictory_equalities_are_flagged() {
        let mut prog = small_lp();
        let mut a = SparseRows::new(2);
        a.push(vec![(0, 1.0)]);
        a.push(vec![(0, 1.0)]);
        prog.a = a;
        prog.b = vec![0.5, 1.0];
        let sol = solve(&prog, &SolverSettings::default());
        assert_ne!(sol.status, IpmStatus::Optimal);
    }

    #[test]
    fn infeasible_inequalities_are_not_optimal() {
        // x ≥ 1 and x ≤ 0.
        let mut g = SparseRows::new(1);
        g.push(vec![(0, -1.0)]);
        g.push(vec![(0, 1.0)]);
        let prog = ConeProgram {
            c: vec![1.0],
            a: SparseRows::new(1),
            b: vec![],
            g,
            h: vec![-1.0, 0.0],
            cones: vec![Cone::Nonneg(2)],
        };
        let sol = solve(&prog, &SolverSettings { max_iters: 60, ..Default::default() });
        assert_ne!(sol.status, IpmStatus::Optimal);
    }

    #[test]
    fn dimension_mismatch_fails_fast() {
        let mut prog = small_lp();
        prog.h.pop();
        let sol = solve(&prog, &SolverSettings::default());
        assert_eq!(sol.status, IpmStatus::NumericalFailure);
        assert_eq!(sol.iterations, 0);
    }
}

//! Symmetric cones and their Nesterov–Todd scalings.
//!
//! Slack and dual vectors are concatenations of per-cone blocks. PSD blocks
//! are stored as `svec`: the lower triangle in column-major order with
//! off-diagonal entries scaled by √2, which makes `svec` an isometry between
//! the trace inner product and the Euclidean one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Nonnegative orthant of the given dimension.
    Nonneg(usize),
    /// Second-order cone `{(t, u) : t ≥ ‖u‖}` of the given total dimension.
    Soc(usize),
    /// Positive semidefinite cone of `n × n` symmetric matrices.
    Psd(usize),
}

impl Cone {
    /// Length of the block in a stacked vector.
    pub fn dim(self) -> usize {
        match self {
            Cone::Nonneg(n) | Cone::Soc(n) => n,
            Cone::Psd(n) => n * (n + 1) / 2,
        }
    }

    /// Barrier degree (rank of the Jordan algebra).
    pub fn degree(self) -> usize {
        match self {
            Cone::Nonneg(n) | Cone::Psd(n) => n,
            Cone::Soc(_) => 1,
        }
    }
}

/// Position of `(i, j)`, `i ≥ j`, inside an `svec` of order `n`.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * n - j * j.saturating_sub(1) / 2 + (i - j)
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

pub fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2 };
            k += 1;
        }
    }
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * (n + 1) / 2];
    svec_into(m, &mut out);
    out
}

/// Iterates `(cone, offset)` over a stacked vector.
pub fn blocks(cones: &[Cone]) -> impl Iterator<Item = (Cone, usize)> + '_ {
    cones.iter().scan(0usize, |off, &c| {
        let start = *off;
        *off += c.dim();
        Some((c, start))
    })
}

pub fn total_dim(cones: &[Cone]) -> usize {
    cones.iter().map(|c| c.dim()).sum()
}

pub fn total_degree(cones: &[Cone]) -> usize {
    cones.iter().map(|c| c.degree()).sum()
}

pub fn identity(cones: &[Cone]) -> Vec<f64> {
    let mut e = vec![0.0; total_dim(cones)];
    for (cone, off) in blocks(cones) {
        match cone {
            Cone::Nonneg(n) => e[off..off + n].fill(1.0),
            Cone::Soc(_) => e[off] = 1.0,
            Cone::Psd(n) => {
                for i in 0..n {
                    e[off + svec_index(n, i, i)] = 1.0;
                }
            }
        }
    }
    e
}

/// Jordan product `u ∘ v`.
pub fn jordan_product(cones: &[Cone], u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for (cone, off) in blocks(cones) {
        let d = cone.dim();
        let (u, v, w) = (&u[off..off + d], &v[off..off + d], &mut out[off..off + d]);
        match cone {
            Cone::Nonneg(_) => {
                for k in 0..d {
                    w[k] = u[k] * v[k];
                }
            }
            Cone::Soc(_) => {
                w[0] = dot(u, v);
                for k in 1..d {
                    w[k] = u[0] * v[k] + v[0] * u[k];
                }
            }
            Cone::Psd(n) => {
                let (um, vm) = (smat(u, n), smat(v, n));
                let p = &um * &vm;
                svec_into(&((&p + p.transpose()) * 0.5), w);
            }
        }
    }
    out
}

/// Smallest eigenvalue of each block, minimized over blocks.
pub fn min_eigenvalue(cones: &[Cone], u: &[f64]) -> f64 {
    blocks(cones)
        .map(|(cone, off)| {
            let u = &u[off..off + cone.dim()];
            match cone {
                Cone::Nonneg(_) => u.iter().copied().fold(f64::INFINITY, f64::min),
                Cone::Soc(_) => u[0] - norm(&u[1..]),
                Cone::Psd(n) => SymmetricEigen::new(smat(u, n)).eigenvalues.min(),
            }
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `t² − ‖u‖²` for an SOC block.
fn soc_det(u: &[f64]) -> f64 {
    let tail = norm(&u[1..]);
    (u[0] - tail) * (u[0] + tail)
}

/// NT scaling of one cone block.
#[derive(Debug, Clone)]
enum BlockScaling {
    /// `W = diag(w)`.
    Nonneg { w: Vec<f64> },
    /// `W` and its inverse; `β(2vvᵀ − J)` when freshly computed, a product
    /// of such factors after updates.
    Soc { w: DMatrix<f64>, winv: DMatrix<f64> },
    /// `W(U) = RᵀUR`; `λ` is diagonal with entries `lambda`.
    Psd { n: usize, r: DMatrix<f64>, rinv: DMatrix<f64>, lambda: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingOp {
    W,
    WT,
    WInv,
    WInvT,
}

/// Nesterov–Todd scaling `W` with `W⁻ᵀs = Wz = λ`.
#[derive(Debug, Clone)]
pub struct Scaling {
    cones: Vec<Cone>,
    blocks: Vec<BlockScaling>,
    lambda: Vec<f64>,
}

impl Scaling {
    /// Returns `None` when `s` or `z` is not strictly interior.
    pub fn compute(cones: &[Cone], s: &[f64], z: &[f64]) -> Option<Self> {
        let mut out = Vec::with_capacity(cones.len());
        let mut lambda = vec![0.0; s.len()];
        for (cone, off) in blocks(cones) {
            let d = cone.dim();
            let (s, z, lam) = (&s[off..off + d], &z[off..off + d], &mut lambda[off..off + d]);
            let b = match cone {
                Cone::Nonneg(_) => {
                    if s.iter().chain(z).any(|&v| !(v > 0.0)) {
                        return None;
                    }
                    for k in 0..d {
                        lam[k] = (s[k] * z[k]).sqrt();
                    }
                    BlockScaling::Nonneg {
                        w: s.iter().zip(z).map(|(a, b)| (a / b).sqrt()).collect(),
                    }
                }
                Cone::Soc(_) => {
                    let (sd, zd) = (soc_det(s), soc_det(z));
                    if !(sd > 0.0 && zd > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                        return None;
                    }
                    let (sn, zn) = (sd.sqrt(), zd.sqrt());
                    let sbar: Vec<f64> = s.iter().map(|v| v / sn).collect();
                    let zbar: Vec<f64> = z.iter().map(|v| v / zn).collect();
                    let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
                    let mut wbar = vec![0.0; d];
                    wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                    for k in 1..d {
                        wbar[k] = (sbar[k] - zbar[k]) / (2.0 * gamma);
                    }
                    let beta = (sn / zn).sqrt();
                    let scale = (2.0 * (wbar[0] + 1.0)).sqrt();
                    let mut v = DVector::from_column_slice(&wbar);
                    v[0] += 1.0;
                    v /= scale;
                    let mut jv = v.clone();
                    for k in 1..d {
                        jv[k] = -jv[k];
                    }
                    let mut jmat = DMatrix::identity(d, d) * -1.0;
                    jmat[(0, 0)] = 1.0;
                    let w = (&v * v.transpose() * 2.0 - &jmat) * beta;
                    let winv = (&jv * jv.transpose() * 2.0 - &jmat) / beta;
                    let l = &w * DVector::from_column_slice(z);
                    lam.copy_from_slice(l.as_slice());
                    BlockScaling::Soc { w, winv }
                }
                Cone::Psd(n) => {
                    let ls = smat(s, n).cholesky()?.l();
                    let lz = smat(z, n).cholesky()?.l();
                    let (u, sigma, v) = jacobi_svd(lz.transpose() * &ls)?;
                    let vt = v.transpose();
                    if sigma.iter().any(|&x| !(x > 0.0)) {
                        return None;
                    }
                    let inv_sqrt = DMatrix::from_diagonal(&sigma.map(|x| 1.0 / x.sqrt()));
                    let r = &ls * vt.transpose() * &inv_sqrt;
                    let rinv = &inv_sqrt * u.transpose() * lz.transpose();
                    lam.fill(0.0);
                    for i in 0..n {
                        lam[svec_index(n, i, i)] = sigma[i];
                    }
                    BlockScaling::Psd { n, r, rinv, lambda: sigma.iter().copied().collect() }
                }
            };
            out.push(b);
        }
        Some(Scaling { cones: cones.to_vec(), blocks: out, lambda })
    }

    /// Scaling at `(s + α·ds, z + α·dz)`, given the step in scaled
    /// coordinates (`ds_scaled = W⁻ᵀds`, `dz_scaled = Wdz`). The new scaling is
    /// the current one composed with the scaling of the scaled iterates
    /// `λ + α·ds_scaled`, `λ + α·dz_scaled`, which stays accurate when `s`
    /// and `z` themselves are badly conditioned.
    pub fn update(&self, alpha: f64, ds_scaled: &[f64], dz_scaled: &[f64]) -> Option<Self> {
        let st: Vec<f64> = self.lambda.iter().zip(ds_scaled).map(|(l, d)| l + alpha * d).collect();
        let zt: Vec<f64> = self.lambda.iter().zip(dz_scaled).map(|(l, d)| l + alpha * d).collect();
        let tilde = Scaling::compute(&self.cones, &st, &zt)?;
        let blocks = self
            .blocks
            .iter()
            .zip(tilde.blocks)
            .map(|(old, new)| match (old, new) {
                (BlockScaling::Nonneg { w }, BlockScaling::Nonneg { w: wt }) => {
                    BlockScaling::Nonneg { w: w.iter().zip(&wt).map(|(a, b)| a * b).collect() }
                }
                (BlockScaling::Soc { w, winv }, BlockScaling::Soc { w: wt, winv: wti }) => {
                    BlockScaling::Soc { w: wt * w, winv: winv * wti }
                }
                (
                    BlockScaling::Psd { n, r, rinv, .. },
                    BlockScaling::Psd { r: rt, rinv: rti, lambda, .. },
                ) => BlockScaling::Psd { n: *n, r: r * rt, rinv: rti * rinv, lambda },
                _ => unreachable!("cone layout is fixed"),
            })
            .collect();
        Some(Scaling { cones: self.cones.clone(), blocks, lambda: tilde.lambda })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn apply(&self, op: ScalingOp, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for ((cone, off), b) in blocks(&self.cones).zip(&self.blocks) {
            let d = cone.dim();
            let (u, o) = (&u[off..off + d], &mut out[off..off + d]);
            match b {
                BlockScaling::Nonneg { w } => {
                    let inverse = matches!(op, ScalingOp::WInv | ScalingOp::WInvT);
                    for k in 0..d {
                        o[k] = if inverse { u[k] / w[k] } else { u[k] * w[k] };
                    }
                }
                BlockScaling::Soc { w, winv } => {
                    let u = DVector::from_column_slice(u);
                    let r = match op {
                        ScalingOp::W => w * u,
                        ScalingOp::WT => w.tr_mul(&u),
                        ScalingOp::WInv => winv * u,
                        ScalingOp::WInvT => winv.tr_mul(&u),
                    };
                    o.copy_from_slice(r.as_slice());
                }
                BlockScaling::Psd { n, r, rinv, .. } => {
                    let um = smat(u, *n);
                    let res = match op {
                        ScalingOp::W => r.transpose() * um * r,
                        ScalingOp::WT => r * um * r.transpose(),
                        ScalingOp::WInv => rinv.transpose() * um * rinv,
                        ScalingOp::WInvT => rinv * um * rinv.transpose(),
                    };
                    svec_into(&res, o);
                }
            }
        }
        out
    }

    /// Dense `(WᵀW)⁻¹` restricted to block `index`.
    pub fn inverse_gram_block(&self, index: usize) -> DMatrix<f64> {
        match &self.blocks[index] {
            BlockScaling::Nonneg { w } => DMatrix::from_diagonal(&DVector::from_iterator(
                w.len(),
                w.iter().map(|v| 1.0 / (v * v)),
            )),
            BlockScaling::Soc { winv, .. } => winv * winv.transpose(),
            BlockScaling::Psd { n, rinv, .. } => {
                // (WᵀW)⁻¹(U) = Q U Q with Q = R⁻ᵀR⁻¹.
                let q = rinv.transpose() * rinv;
                let n = *n;
                let dim = n * (n + 1) / 2;
                let pairs: Vec<(usize, usize)> =
                    (0..n).flat_map(|j| (j..n).map(move |i| (i, j))).collect();
                let mut m = DMatrix::zeros(dim, dim);
                for (p, &(a, b)) in pairs.iter().enumerate() {
                    let ka = if a == b { 1.0 / SQRT_2 } else { 1.0 };
                    for (t, &(c, d)) in pairs.iter().enumerate().skip(p) {
                        let kc = if c == d { 1.0 / SQRT_2 } else { 1.0 };
                        let v = (q[(a, c)] * q[(b, d)] + q[(a, d)] * q[(b, c)]) * ka * kc;
                        m[(p, t)] = v;
                        m[(t, p)] = v;
                    }
                }
                m
            }
        }
    }

    /// Solves `λ ∘ x = r` for `x`.
    pub fn lambda_solve(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        for ((cone, off), b) in blocks(&self.cones).zip(&self.blocks) {
            let d = cone.dim();
            let (lam, r, o) =
                (&self.lambda[off..off + d], &r[off..off + d], &mut out[off..off + d]);
            match b {
                BlockScaling::Nonneg { .. } => {
                    for k in 0..d {
                        o[k] = r[k] / lam[k];
                    }
                }
                BlockScaling::Soc { .. } => {
                    let det = soc_det(lam);
                    let x0 = (lam[0] * r[0] - dot(&lam[1..], &r[1..])) / det;
                    o[0] = x0;
                    for k in 1..d {
                        o[k] = (r[k] - x0 * lam[k]) / lam[0];
                    }
                }
                BlockScaling::Psd { n, lambda, .. } => {
                    let mut k = 0;
                    for j in 0..*n {
                        for i in j..*n {
                            o[k] = 2.0 * r[k] / (lambda[i] + lambda[j]);
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest `α` with `λ + α·u` in the cone (`f64::INFINITY` if unbounded).
    pub fn max_step(&self, u: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for ((cone, off), b) in blocks(&self.cones).zip(&self.blocks) {
            let d = cone.dim();
            let (lam, u) = (&self.lambda[off..off + d], &u[off..off + d]);
            let min_eig = match b {
                BlockScaling::Nonneg { .. } => {
                    (0..d).map(|k| u[k] / lam[k]).fold(f64::INFINITY, f64::min)
                }
                BlockScaling::Soc { .. } => {
                    let q = soc_inverse_sqrt(lam);
                    let p = soc_quadratic_rep(&q, u);
                    p[0] - norm(&p[1..])
                }
                BlockScaling::Psd { n, lambda, .. } => {
                    let mut m = smat(u, *n);
                    for i in 0..*n {
                        for j in 0..*n {
                            m[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
                        }
                    }
                    SymmetricEigen::new(m).eigenvalues.min()
                }
            };
            if min_eig < 0.0 {
                alpha = alpha.min(-1.0 / min_eig);
            }
        }
        alpha
    }
}

/// One-sided Jacobi SVD `M = U diag(σ) Vᵀ` of a square matrix. Used instead
/// of `nalgebra`'s bidiagonal SVD, which returns factors that do not
/// reproduce some nearly block-diagonal inputs.
fn jacobi_svd(mut a: DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            let sigma = DVector::from_iterator(n, a.column_iter().map(|c| c.norm()));
            if sigma.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return None;
            }
            let mut u = a;
            for (j, mut col) in u.column_iter_mut().enumerate() {
                col /= sigma[j];
            }
            return Some((u, sigma, v));
        }
    }
    None
}

/// `x^{-1/2}` in the Jordan algebra of the second-order cone.
fn soc_inverse_sqrt(x: &[f64]) -> Vec<f64> {
    let tail = norm(&x[1..]);
    let (lp, lm) = (x[0] + tail, x[0] - tail);
    let (a, b) = (1.0 / lp.sqrt(), 1.0 / lm.sqrt());
    let mut out = vec![0.0; x.len()];
    out[0] = 0.5 * (a + b);
    if tail > 0.0 {
        for k in 1..x.len() {
            out[k] = 0.5 * (a - b) * x[k] / tail;
        }
    }
    out
}

/// Quadratic representation `P(q)u = 2q(qᵀu) − det(q)·Ju`.
fn soc_quadratic_rep(q: &[f64], u: &[f64]) -> Vec<f64> {
    let qu = dot(q, u);
    let det = soc_det(q);
    let mut out: Vec<f64> = q.iter().map(|v| 2.0 * qu * v).collect();
    out[0] -= det * u[0];
    for k in 1..u.len() {
        out[k] += det * u[k];
    }
    out
}

//! The reduced Newton system: after eliminating the auxiliary group in
//! closed form, the multiplier direction solves the SPD Schur operator
//!
//!   H̃11 = C D̄p C* + blkdiag(D̄₂, D̄f | I, D̄₁, Q) + τI,  C = (A; B; I; −Q),
//!
//! restricted to the present slots.  Solvers: dense Cholesky on a
//! materialization (with a Gram cache for the D = I case and an SMW path
//! when D̄p splits into a sparse diagonal plus a few rank-one spikes), or
//! Jacobi-preconditioned conjugate gradients on the matrix-free operator.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::la::{self, Csc};
use crate::model::{LinearOperator, OpRep, Problem};
use crate::prox::{DerivedOps, JacobianRep};
use crate::saddle::{Evaluation, Offsets};

/// Largest multiplier-group dimension attacked with dense Cholesky.
pub const DIRECT_THRESHOLD: usize = 2000;

#[derive(Debug, Error)]
pub enum LinsysError {
    #[error("regularized Newton operator lost positive definiteness during factorization")]
    BreakdownNonSpd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Direct,
    Iterative,
}

/// Outcome bookkeeping for one linear solve; `residual` is the achieved
/// row-one residual S·d1 − rhs, which is exactly the top block of the
/// inexactness vector of the full system (the bottom block is zero because
/// the auxiliary directions are recovered in closed form).
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub mode: SolveMode,
    pub iterations: usize,
    pub residual_norm: f64,
    pub residual: Vec<f64>,
}

/// What shape each D̄ block has; drives the materialization strategy.
#[derive(Debug, Clone, Copy)]
pub struct StructureHints {
    pub dp_uniform: bool,
    pub dp_diagonal: bool,
    pub dp_spikes: bool,
    pub blocks_diagonal: bool,
}

/// Iterate-independent dense pieces reused across Newton iterations.
#[derive(Default)]
pub struct SchurCache {
    c_mat: Option<DMatrix<f64>>,
    gram: Option<DMatrix<f64>>,
    q_dense: Option<DMatrix<f64>>,
}

pub struct SchurSystem<'a> {
    problem: &'a Problem,
    off: &'a Offsets,
    pub sigma: f64,
    pub tau: f64,
    /// right-hand side H12 (H22+τI)⁻¹ F̃2 − F̃1
    pub rhs: Vec<f64>,
    pub hints: StructureHints,
    dp: &'a JacobianRep,
    dp_ops: DerivedOps,
    d2_jac: Option<JacobianRep>,
    d2_ops: Option<DerivedOps>,
    df_jac: Option<&'a JacobianRep>,
    df_ops: Option<DerivedOps>,
    d1_jac: Option<JacobianRep>,
    d1_ops: Option<DerivedOps>,
    z_smooth: bool,
    f: &'a [f64],
}

/// Assemble the reduced system at the current iterate.
pub fn build_schur<'a>(
    problem: &'a Problem,
    off: &'a Offsets,
    ev: &'a Evaluation,
    sigma: f64,
    tau: f64,
) -> SchurSystem<'a> {
    assert!(tau > 0.0, "regularization must be positive");
    let dp_ops = ev.dp.derived(sigma, tau);
    let d2_jac = ev.d2.as_ref().map(|d| JacobianRep::Diagonal(d.clone()));
    let d2_ops = d2_jac.as_ref().map(|j| j.derived(sigma, tau));
    let df_jac = ev.df.as_ref();
    let df_ops = df_jac.map(|j| j.derived(sigma, tau));
    let d1_jac = ev.d1.as_ref().map(|d| JacobianRep::Diagonal(d.clone()));
    let d1_ops = d1_jac.as_ref().map(|j| j.derived(sigma, tau));
    let z_smooth = off.z.is_some() && off.x2.is_none();

    let hints = StructureHints {
        dp_uniform: dp_ops.dbar_uniform().is_some(),
        dp_diagonal: dp_ops.dbar_diag().is_some(),
        dp_spikes: dp_ops.dbar_structure().is_some(),
        blocks_diagonal: off.v.is_none()
            && (z_smooth || df_ops.as_ref().map_or(true, |o| o.dbar_diag().is_some())),
    };

    let mut sys = SchurSystem {
        problem,
        off,
        sigma,
        tau,
        rhs: Vec::new(),
        hints,
        dp: &ev.dp,
        dp_ops,
        d2_jac,
        d2_ops,
        df_jac,
        df_ops,
        d1_jac,
        d1_ops,
        z_smooth,
        f: &ev.f,
    };
    sys.rhs = sys.assemble_rhs();
    sys
}

impl<'a> SchurSystem<'a> {
    pub fn dim(&self) -> usize {
        self.off.d1_len
    }

    /// C* restricted to the present slots: A*gy + B*gz + gr − Q gv.
    fn adjoint_gather(&self, g: &[f64]) -> Vec<f64> {
        let spec = &self.problem.spec;
        let n = self.problem.layout.n;
        let mut t = vec![0.0; n];
        if let (Some(sy), Some(a)) = (self.off.y, &spec.a) {
            la::axpy(1.0, &a.apply_adjoint_vec(&g[sy.range()]), &mut t);
        }
        if let (Some(sz), Some(b)) = (self.off.z, &spec.b) {
            la::axpy(1.0, &b.apply_adjoint_vec(&g[sz.range()]), &mut t);
        }
        if let Some(sr) = self.off.r {
            la::axpy(1.0, &g[sr.range()], &mut t);
        }
        if let (Some(sv), Some(q)) = (self.off.v, &spec.q) {
            la::axpy(-1.0, &q.apply_vec(&g[sv.range()]), &mut t);
        }
        t
    }

    /// Scatter s through C onto the slots: out += (A s; B s; s; −Q s).
    fn forward_scatter(&self, s: &[f64], out: &mut [f64]) {
        let spec = &self.problem.spec;
        if let (Some(sy), Some(a)) = (self.off.y, &spec.a) {
            la::axpy(1.0, &a.apply_vec(s), &mut out[sy.range()]);
        }
        if let (Some(sz), Some(b)) = (self.off.z, &spec.b) {
            la::axpy(1.0, &b.apply_vec(s), &mut out[sz.range()]);
        }
        if let Some(sr) = self.off.r {
            la::axpy(1.0, s, &mut out[sr.range()]);
        }
        if let (Some(sv), Some(q)) = (self.off.v, &spec.q) {
            la::axpy(-1.0, &q.apply_vec(s), &mut out[sv.range()]);
        }
    }

    /// H̃11 g, matrix-free.
    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        let spec = &self.problem.spec;
        let t = self.adjoint_gather(g);
        let mut s = vec![0.0; t.len()];
        self.dp_ops.dbar_apply(&t, &mut s);

        out.fill(0.0);
        self.forward_scatter(&s, out);

        if let (Some(sy), Some(ops)) = (self.off.y, &self.d2_ops) {
            let mut add = vec![0.0; sy.len];
            ops.dbar_apply(&g[sy.range()], &mut add);
            la::axpy(1.0, &add, &mut out[sy.range()]);
        }
        if let Some(sz) = self.off.z {
            if self.z_smooth {
                la::axpy(1.0, &g[sz.range()], &mut out[sz.range()]);
            } else if let Some(ops) = &self.df_ops {
                let mut add = vec![0.0; sz.len];
                ops.dbar_apply(&g[sz.range()], &mut add);
                la::axpy(1.0, &add, &mut out[sz.range()]);
            }
        }
        if let (Some(sr), Some(ops)) = (self.off.r, &self.d1_ops) {
            let mut add = vec![0.0; sr.len];
            ops.dbar_apply(&g[sr.range()], &mut add);
            la::axpy(1.0, &add, &mut out[sr.range()]);
        }
        if let (Some(sv), Some(q)) = (self.off.v, &spec.q) {
            la::axpy(1.0, &q.apply_vec(&g[sv.range()]), &mut out[sv.range()]);
        }
        la::axpy(self.tau, g, out);
    }

    fn assemble_rhs(&self) -> Vec<f64> {
        let spec = &self.problem.spec;
        let off = self.off;
        let n = self.problem.layout.n;
        let mut h4 = vec![0.0; n];
        self.dp_ops.dtau_inv_apply(&self.f[off.x4.range()], &mut h4);
        let mut g = vec![0.0; n];
        self.dp.apply(&h4, &mut g);

        let mut rhs = vec![0.0; off.d1_len];
        self.forward_scatter(&g, &mut rhs);

        if let (Some(sy), Some(sx1)) = (off.y, off.x1) {
            let ops = self.d2_ops.as_ref().unwrap();
            let jac = self.d2_jac.as_ref().unwrap();
            let mut h = vec![0.0; sy.len];
            ops.dtau_inv_apply(&self.f[sx1.range()], &mut h);
            let mut dh = vec![0.0; sy.len];
            jac.apply(&h, &mut dh);
            la::axpy(-1.0, &dh, &mut rhs[sy.range()]);
        }
        if let (Some(sz), Some(sx2)) = (off.z, off.x2) {
            let ops = self.df_ops.as_ref().unwrap();
            let jac = self.df_jac.unwrap();
            let mut h = vec![0.0; sz.len];
            ops.dtau_inv_apply(&self.f[sx2.range()], &mut h);
            let mut dh = vec![0.0; sz.len];
            jac.apply(&h, &mut dh);
            la::axpy(-1.0, &dh, &mut rhs[sz.range()]);
        }
        if let (Some(sr), Some(sx3)) = (off.r, off.x3) {
            let ops = self.d1_ops.as_ref().unwrap();
            let jac = self.d1_jac.as_ref().unwrap();
            let mut h = vec![0.0; sr.len];
            ops.dtau_inv_apply(&self.f[sx3.range()], &mut h);
            let mut dh = vec![0.0; sr.len];
            jac.apply(&h, &mut dh);
            la::axpy(-1.0, &dh, &mut rhs[sr.range()]);
        }
        let _ = spec;
        for i in 0..off.d1_len {
            rhs[i] -= self.f[i];
        }
        rhs
    }

    /// d2 = (H22+τI)⁻¹ (H12ᵀ d1 − F̃2), blockwise through the structured
    /// (I−D)/σ + τ inverses; returned in flat x-group order.
    pub fn recover_d2(&self, d1: &[f64]) -> Vec<f64> {
        let off = self.off;
        let t = self.adjoint_gather(d1);
        let n = t.len();
        let mut g4 = vec![0.0; n];
        self.dp.apply(&t, &mut g4);

        let d2_len = off.total - off.d1_len;
        let mut out = vec![0.0; d2_len];
        let base = off.d1_len;

        if let (Some(sy), Some(sx1)) = (off.y, off.x1) {
            let jac = self.d2_jac.as_ref().unwrap();
            let ops = self.d2_ops.as_ref().unwrap();
            let mut dh = vec![0.0; sy.len];
            jac.apply(&d1[sy.range()], &mut dh);
            let rhs: Vec<f64> = (0..sy.len)
                .map(|i| -dh[i] - self.f[sx1.start + i])
                .collect();
            let mut sol = vec![0.0; sy.len];
            ops.dtau_inv_apply(&rhs, &mut sol);
            out[sx1.start - base..sx1.start - base + sx1.len].copy_from_slice(&sol);
        }
        if let (Some(sz), Some(sx2)) = (off.z, off.x2) {
            let jac = self.df_jac.unwrap();
            let ops = self.df_ops.as_ref().unwrap();
            let mut dh = vec![0.0; sz.len];
            jac.apply(&d1[sz.range()], &mut dh);
            let rhs: Vec<f64> = (0..sz.len)
                .map(|i| -dh[i] - self.f[sx2.start + i])
                .collect();
            let mut sol = vec![0.0; sz.len];
            ops.dtau_inv_apply(&rhs, &mut sol);
            out[sx2.start - base..sx2.start - base + sx2.len].copy_from_slice(&sol);
        }
        if let (Some(sr), Some(sx3)) = (off.r, off.x3) {
            let jac = self.d1_jac.as_ref().unwrap();
            let ops = self.d1_ops.as_ref().unwrap();
            let mut dh = vec![0.0; sr.len];
            jac.apply(&d1[sr.range()], &mut dh);
            let rhs: Vec<f64> = (0..sr.len)
                .map(|i| -dh[i] - self.f[sx3.start + i])
                .collect();
            let mut sol = vec![0.0; sr.len];
            ops.dtau_inv_apply(&rhs, &mut sol);
            out[sx3.start - base..sx3.start - base + sx3.len].copy_from_slice(&sol);
        }
        {
            let sx4 = off.x4;
            let rhs: Vec<f64> = (0..sx4.len)
                .map(|i| g4[i] - self.f[sx4.start + i])
                .collect();
            let mut sol = vec![0.0; sx4.len];
            self.dp_ops.dtau_inv_apply(&rhs, &mut sol);
            out[sx4.start - base..sx4.start - base + sx4.len].copy_from_slice(&sol);
        }
        out
    }

    /// Full direction (d1; d2) in the flat layout.
    pub fn direction(&self, d1: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.off.total];
        d[..self.off.d1_len].copy_from_slice(d1);
        let d2 = self.recover_d2(d1);
        d[self.off.d1_len..].copy_from_slice(&d2);
        d
    }

    /// Action of the full regularized operator
    /// [[H11+τI, H12], [−H12ᵀ, H22+τI]] on a flat direction, assembled from
    /// the unreduced block formulas; audits the inexactness accounting.
    pub fn full_apply(&self, d: &[f64], out: &mut [f64]) {
        let off = self.off;
        let spec = &self.problem.spec;
        let sigma = self.sigma;
        let n = self.problem.layout.n;
        let d1 = &d[..off.d1_len];
        out.fill(0.0);

        // H11 d1 + τ d1
        let cd1 = self.adjoint_gather(d1);
        let mut dp_cd1 = vec![0.0; n];
        self.dp.apply(&cd1, &mut dp_cd1);
        let scaled: Vec<f64> = dp_cd1.iter().map(|v| sigma * v).collect();
        self.forward_scatter(&scaled, &mut out[..off.d1_len]);
        if let (Some(sy), Some(jac)) = (off.y, &self.d2_jac) {
            let mut a = vec![0.0; sy.len];
            jac.apply(&d1[sy.range()], &mut a);
            la::axpy(sigma, &a, &mut out[sy.range()]);
        }
        if let Some(sz) = off.z {
            if self.z_smooth {
                la::axpy(1.0, &d1[sz.range()], &mut out[sz.range()]);
            } else if let Some(jac) = self.df_jac {
                let mut a = vec![0.0; sz.len];
                jac.apply(&d1[sz.range()], &mut a);
                la::axpy(sigma, &a, &mut out[sz.range()]);
            }
        }
        if let (Some(sr), Some(jac)) = (off.r, &self.d1_jac) {
            let mut a = vec![0.0; sr.len];
            jac.apply(&d1[sr.range()], &mut a);
            la::axpy(sigma, &a, &mut out[sr.range()]);
        }
        if let (Some(sv), Some(q)) = (off.v, &spec.q) {
            la::axpy(1.0, &q.apply_vec(&d1[sv.range()]), &mut out[sv.range()]);
        }
        for i in 0..off.d1_len {
            out[i] += self.tau * d1[i];
        }

        // + H12 d2 on the top rows
        let mut dp_x4 = vec![0.0; n];
        self.dp.apply(&d[off.x4.range()], &mut dp_x4);
        self.forward_scatter(&dp_x4, &mut out[..off.d1_len]);
        if let (Some(sy), Some(sx1), Some(jac)) = (off.y, off.x1, &self.d2_jac) {
            let mut a = vec![0.0; sy.len];
            jac.apply(&d[sx1.range()], &mut a);
            la::axpy(-1.0, &a, &mut out[sy.range()]);
        }
        if let (Some(sz), Some(sx2), Some(jac)) = (off.z, off.x2, self.df_jac) {
            let mut a = vec![0.0; sz.len];
            jac.apply(&d[sx2.range()], &mut a);
            la::axpy(-1.0, &a, &mut out[sz.range()]);
        }
        if let (Some(sr), Some(sx3), Some(jac)) = (off.r, off.x3, &self.d1_jac) {
            let mut a = vec![0.0; sr.len];
            jac.apply(&d[sx3.range()], &mut a);
            la::axpy(-1.0, &a, &mut out[sr.range()]);
        }

        // bottom rows: −H12ᵀ d1 + ((I−D)/σ + τI) d2 per block
        if let (Some(sy), Some(sx1), Some(jac)) = (off.y, off.x1, &self.d2_jac) {
            let mut a = vec![0.0; sy.len];
            jac.apply(&d1[sy.range()], &mut a);
            let mut b = vec![0.0; sy.len];
            jac.apply(&d[sx1.range()], &mut b);
            for i in 0..sy.len {
                let xi = d[sx1.start + i];
                out[sx1.start + i] = a[i] + (xi - b[i]) / sigma + self.tau * xi;
            }
        }
        if let (Some(sz), Some(sx2), Some(jac)) = (off.z, off.x2, self.df_jac) {
            let mut a = vec![0.0; sz.len];
            jac.apply(&d1[sz.range()], &mut a);
            let mut b = vec![0.0; sz.len];
            jac.apply(&d[sx2.range()], &mut b);
            for i in 0..sz.len {
                let xi = d[sx2.start + i];
                out[sx2.start + i] = a[i] + (xi - b[i]) / sigma + self.tau * xi;
            }
        }
        if let (Some(sr), Some(sx3), Some(jac)) = (off.r, off.x3, &self.d1_jac) {
            let mut a = vec![0.0; sr.len];
            jac.apply(&d1[sr.range()], &mut a);
            let mut b = vec![0.0; sr.len];
            jac.apply(&d[sx3.range()], &mut b);
            for i in 0..sr.len {
                let xi = d[sx3.start + i];
                out[sx3.start + i] = a[i] + (xi - b[i]) / sigma + self.tau * xi;
            }
        }
        {
            let sx4 = off.x4;
            for i in 0..sx4.len {
                let xi = d[sx4.start + i];
                out[sx4.start + i] =
                    -dp_cd1[i] + (xi - dp_x4[i]) / sigma + self.tau * xi;
            }
        }
    }

    pub fn default_mode(&self) -> SolveMode {
        if self.dim() <= DIRECT_THRESHOLD {
            SolveMode::Direct
        } else {
            SolveMode::Iterative
        }
    }

    fn true_residual(&self, d1: &[f64]) -> Vec<f64> {
        let mut sd = vec![0.0; self.dim()];
        self.apply(d1, &mut sd);
        (0..self.dim()).map(|i| sd[i] - self.rhs[i]).collect()
    }

    // ---- dense materialization -------------------------------------------

    fn c_dense<'c>(&self, cache: &'c mut SchurCache) -> &'c DMatrix<f64> {
        if cache.c_mat.is_none() {
            let spec = &self.problem.spec;
            let n = self.problem.layout.n;
            let k = self.off.d1_len;
            let mut c = DMatrix::zeros(k, n);
            if let (Some(sy), Some(a)) = (self.off.y, &spec.a) {
                c.view_mut((sy.start, 0), (sy.len, n)).copy_from(&a.to_dense());
            }
            if let (Some(sz), Some(b)) = (self.off.z, &spec.b) {
                c.view_mut((sz.start, 0), (sz.len, n)).copy_from(&b.to_dense());
            }
            if let Some(sr) = self.off.r {
                c.view_mut((sr.start, 0), (sr.len, n))
                    .copy_from(&DMatrix::identity(sr.len, n));
            }
            if let (Some(sv), Some(q)) = (self.off.v, &spec.q) {
                c.view_mut((sv.start, 0), (sv.len, n)).copy_from(&(-q.to_dense()));
            }
            cache.c_mat = Some(c);
        }
        cache.c_mat.as_ref().unwrap()
    }

    /// Dense assembly of the reduced system (oracle/direct path).
    pub fn materialize(&self, cache: &mut SchurCache) -> DMatrix<f64> {
        let k = self.dim();
        let mut s = if let Some(c) = self.dp_ops.dbar_uniform() {
            if cache.gram.is_none() {
                let cm = self.c_dense(cache).clone();
                cache.gram = Some(&cm * cm.transpose());
            }
            cache.gram.as_ref().unwrap() * c
        } else if self.dp_ops.dbar_is_diagonal() {
            let d = self.dp_ops.dbar_diag().unwrap();
            let cm = self.c_dense(cache).clone();
            let mut scaled = cm.clone();
            for (j, &dj) in d.iter().enumerate() {
                scaled.column_mut(j).scale_mut(dj);
            }
            &scaled * cm.transpose()
        } else if let Some(st) = self.dp_ops.dbar_structure() {
            // D̄p = Σ val·e_i e_iᵀ + Σ coef·u uᵀ; congruence through C keeps
            // that shape with w = C u
            let cm = self.c_dense(cache).clone();
            let mut m = DMatrix::zeros(k, k);
            let mut scaled = DMatrix::zeros(k, st.diag.len());
            for (col, &(i, val)) in st.diag.iter().enumerate() {
                scaled.column_mut(col).copy_from(&(cm.column(i) * val));
            }
            let mut sel = DMatrix::zeros(k, st.diag.len());
            for (col, &(i, _)) in st.diag.iter().enumerate() {
                sel.column_mut(col).copy_from(&cm.column(i));
            }
            m += &scaled * sel.transpose();
            let n = self.problem.layout.n;
            let mut u = vec![0.0; n];
            let mut w = vec![0.0; k];
            for (coef, entries) in &st.spikes {
                for &(i, v) in entries {
                    u[i] = v;
                }
                w.fill(0.0);
                self.forward_scatter(&u, &mut w);
                for &(i, _) in entries {
                    u[i] = 0.0;
                }
                for a in 0..k {
                    for b in 0..k {
                        m[(a, b)] += coef * w[a] * w[b];
                    }
                }
            }
            m
        } else {
            // opaque D̄p: materialize the whole operator column by column
            let mut m = DMatrix::zeros(k, k);
            let mut e = vec![0.0; k];
            let mut col = vec![0.0; k];
            for j in 0..k {
                e[j] = 1.0;
                self.apply(&e, &mut col);
                e[j] = 0.0;
                for i in 0..k {
                    m[(i, j)] = col[i];
                }
            }
            symmetrize(&mut m);
            return m;
        };

        // blkdiag additions and the τ shift
        for i in 0..k {
            s[(i, i)] += self.tau;
        }
        if let (Some(sy), Some(ops)) = (self.off.y, &self.d2_ops) {
            let d = ops.dbar_diag().unwrap();
            for i in 0..sy.len {
                s[(sy.start + i, sy.start + i)] += d[i];
            }
        }
        if let Some(sz) = self.off.z {
            if self.z_smooth {
                for i in 0..sz.len {
                    s[(sz.start + i, sz.start + i)] += 1.0;
                }
            } else if let Some(ops) = &self.df_ops {
                if ops.dbar_is_diagonal() {
                    let d = ops.dbar_diag().unwrap();
                    for i in 0..sz.len {
                        s[(sz.start + i, sz.start + i)] += d[i];
                    }
                } else {
                    let block = ops.dbar_dense();
                    for i in 0..sz.len {
                        for j in 0..sz.len {
                            s[(sz.start + i, sz.start + j)] += block[(i, j)];
                        }
                    }
                }
            }
        }
        if let (Some(sr), Some(ops)) = (self.off.r, &self.d1_ops) {
            let d = ops.dbar_diag().unwrap();
            for i in 0..sr.len {
                s[(sr.start + i, sr.start + i)] += d[i];
            }
        }
        if let (Some(sv), Some(q)) = (self.off.v, &self.problem.spec.q) {
            if cache.q_dense.is_none() {
                cache.q_dense = Some(q.to_dense());
            }
            let qd = cache.q_dense.as_ref().unwrap();
            for i in 0..sv.len {
                for j in 0..sv.len {
                    s[(sv.start + i, sv.start + j)] += qd[(i, j)];
                }
            }
        }
        symmetrize(&mut s);
        s
    }

    // ---- SMW path --------------------------------------------------------

    /// Outer diagonal Λ = τ + blkdiag diagonals, valid when every present
    /// block term is diagonal (no Q slot, D̄f diagonal or absent).
    fn outer_diag(&self) -> Option<Vec<f64>> {
        if !self.hints.blocks_diagonal {
            return None;
        }
        let mut lam = vec![self.tau; self.dim()];
        if let (Some(sy), Some(ops)) = (self.off.y, &self.d2_ops) {
            let d = ops.dbar_diag().unwrap();
            for i in 0..sy.len {
                lam[sy.start + i] += d[i];
            }
        }
        if let Some(sz) = self.off.z {
            if self.z_smooth {
                for i in 0..sz.len {
                    lam[sz.start + i] += 1.0;
                }
            } else if let Some(ops) = &self.df_ops {
                if !ops.dbar_is_diagonal() {
                    return None;
                }
                let d = ops.dbar_diag().unwrap();
                for i in 0..sz.len {
                    lam[sz.start + i] += d[i];
                }
            }
        }
        if let (Some(sr), Some(ops)) = (self.off.r, &self.d1_ops) {
            let d = ops.dbar_diag().unwrap();
            for i in 0..sr.len {
                lam[sr.start + i] += d[i];
            }
        }
        Some(lam)
    }

    /// Columns of C at unit vectors / sparse spikes, scaled so that
    /// C D̄p C* = Σ w wᵀ over the returned columns.
    pub fn smw_columns(&self) -> Option<Vec<Vec<f64>>> {
        let st = self.dp_ops.dbar_structure()?;
        let n = self.problem.layout.n;
        let count = st.diag.len() + st.spikes.len();
        if count * 2 > self.dim().max(8) {
            return None;
        }
        let mut cols = Vec::with_capacity(count);
        let mut unit = vec![0.0; n];
        for &(i, val) in &st.diag {
            if val == 0.0 {
                continue;
            }
            if val < 0.0 {
                return None;
            }
            unit[i] = 1.0;
            let mut w = vec![0.0; self.dim()];
            self.forward_scatter(&unit, &mut w);
            unit[i] = 0.0;
            la::scal(val.sqrt(), &mut w);
            cols.push(w);
        }
        for (coef, entries) in &st.spikes {
            if *coef == 0.0 {
                continue;
            }
            if *coef < 0.0 {
                return None;
            }
            for &(i, v) in entries {
                unit[i] = v;
            }
            let mut w = vec![0.0; self.dim()];
            self.forward_scatter(&unit, &mut w);
            for &(i, _) in entries {
                unit[i] = 0.0;
            }
            la::scal(coef.sqrt(), &mut w);
            cols.push(w);
        }
        Some(cols)
    }

    /// Low-rank update solve when D̄p decomposes into few spikes; `None`
    /// when the structure is absent or not profitable.
    pub fn solve_smw(&self) -> Option<Result<Vec<f64>, LinsysError>> {
        let lam = self.outer_diag()?;
        let cols = self.smw_columns()?;
        let k = self.dim();
        let kk = cols.len();
        // x = Λ⁻¹ b − Λ⁻¹ W (I + WᵀΛ⁻¹W)⁻¹ WᵀΛ⁻¹ b
        let linv_b: Vec<f64> = (0..k).map(|i| self.rhs[i] / lam[i]).collect();
        if kk == 0 {
            return Some(Ok(linv_b));
        }
        let mut cap = DMatrix::identity(kk, kk);
        for a in 0..kk {
            for b in a..kk {
                let mut s = 0.0;
                for i in 0..k {
                    s += cols[a][i] * cols[b][i] / lam[i];
                }
                cap[(a, b)] += s;
                cap[(b, a)] = cap[(a, b)];
            }
        }
        let chol = match Cholesky::new(cap) {
            Some(c) => c,
            None => return Some(Err(LinsysError::BreakdownNonSpd)),
        };
        let wt_b = DVector::from_iterator(kk, cols.iter().map(|w| la::dot(w, &linv_b)));
        let coef = chol.solve(&wt_b);
        let mut x = linv_b;
        for (j, w) in cols.iter().enumerate() {
            let c = coef[j];
            for i in 0..k {
                x[i] -= c * w[i] / lam[i];
            }
        }
        Some(Ok(x))
    }

    // ---- iterative path --------------------------------------------------

    /// Jacobi diagonal of H̃11; exact when D̄p has a cheap diagonal,
    /// otherwise unavailable.
    fn jacobi_diag(&self) -> Option<Vec<f64>> {
        let dpd = self.dp_ops.dbar_diag()?;
        let spec = &self.problem.spec;
        let mut diag = vec![self.tau; self.dim()];
        if let (Some(sy), Some(a)) = (self.off.y, &spec.a) {
            let rows = scaled_row_sq_norms(a, &dpd);
            for i in 0..sy.len {
                diag[sy.start + i] += rows[i];
            }
            if let Some(ops) = &self.d2_ops {
                let d = ops.dbar_diag().unwrap();
                for i in 0..sy.len {
                    diag[sy.start + i] += d[i];
                }
            }
        }
        if let (Some(sz), Some(b)) = (self.off.z, &spec.b) {
            let rows = scaled_row_sq_norms(b, &dpd);
            for i in 0..sz.len {
                diag[sz.start + i] += rows[i];
            }
            if self.z_smooth {
                for i in 0..sz.len {
                    diag[sz.start + i] += 1.0;
                }
            } else if let Some(d) = self.df_ops.as_ref().and_then(|o| o.dbar_diag()) {
                for i in 0..sz.len {
                    diag[sz.start + i] += d[i];
                }
            }
        }
        if let Some(sr) = self.off.r {
            for i in 0..sr.len {
                diag[sr.start + i] += dpd[i];
            }
            if let Some(ops) = &self.d1_ops {
                let d = ops.dbar_diag().unwrap();
                for i in 0..sr.len {
                    diag[sr.start + i] += d[i];
                }
            }
        }
        if let (Some(sv), Some(q)) = (self.off.v, &spec.q) {
            let rows = scaled_row_sq_norms(q, &dpd);
            let qd = op_diagonal(q);
            for i in 0..sv.len {
                diag[sv.start + i] += rows[i] + qd[i];
            }
        }
        Some(diag)
    }

    fn solve_cg(&self, tol: f64, maxit: usize) -> Result<(Vec<f64>, usize), LinsysError> {
        let k = self.dim();
        let precond = self.jacobi_diag();
        let apply_m_inv = |r: &[f64], z: &mut [f64]| match &precond {
            Some(d) => {
                for i in 0..k {
                    z[i] = r[i] / d[i];
                }
            }
            None => z.copy_from_slice(r),
        };

        let mut x = vec![0.0; k];
        let mut r = self.rhs.clone();
        let mut z = vec![0.0; k];
        apply_m_inv(&r, &mut z);
        let mut p = z.clone();
        let mut rz = la::dot(&r, &z);
        let mut best = (la::nrm2(&r), x.clone());
        let mut sp = vec![0.0; k];
        let mut iters = 0;
        while iters < maxit {
            if best.0 <= tol {
                break;
            }
            self.apply(&p, &mut sp);
            let psp = la::dot(&p, &sp);
            if psp <= 0.0 {
                return Err(LinsysError::BreakdownNonSpd);
            }
            let alpha = rz / psp;
            la::axpy(alpha, &p, &mut x);
            la::axpy(-alpha, &sp, &mut r);
            iters += 1;
            let rn = la::nrm2(&r);
            if rn < best.0 {
                best = (rn, x.clone());
            }
            if rn <= tol {
                break;
            }
            apply_m_inv(&r, &mut z);
            let rz_new = la::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..k {
                p[i] = z[i] + beta * p[i];
            }
        }
        Ok((best.1, iters))
    }
}

/// Solve for the multiplier direction; `tol` is the absolute residual
/// target of the iterative mode (ignored by the direct mode).
pub fn solve_schur(
    sys: &SchurSystem,
    mode: SolveMode,
    tol: f64,
    maxit: usize,
    cache: &mut SchurCache,
) -> Result<(Vec<f64>, SolveStats), LinsysError> {
    if sys.dim() == 0 {
        return Ok((
            Vec::new(),
            SolveStats {
                mode,
                iterations: 0,
                residual_norm: 0.0,
                residual: Vec::new(),
            },
        ));
    }
    let (d1, iterations) = match mode {
        SolveMode::Direct => {
            if let Some(res) = sys.solve_smw() {
                (res?, 0)
            } else {
                let s = sys.materialize(cache);
                let chol = Cholesky::new(s).ok_or(LinsysError::BreakdownNonSpd)?;
                let sol = chol.solve(&DVector::from_column_slice(&sys.rhs));
                (sol.as_slice().to_vec(), 0)
            }
        }
        SolveMode::Iterative => sys.solve_cg(tol, maxit)?,
    };
    let residual = sys.true_residual(&d1);
    let residual_norm = la::nrm2(&residual);
    Ok((
        d1,
        SolveStats {
            mode,
            iterations,
            residual_norm,
            residual,
        },
    ))
}

/// Auxiliary-group direction for a solved multiplier direction.
pub fn recover_d2(sys: &SchurSystem, d1: &[f64]) -> Vec<f64> {
    sys.recover_d2(d1)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// out[i] = Σ_j d[j]·op[i,j]².
fn scaled_row_sq_norms(op: &LinearOperator, d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; op.rows];
    match &op.rep {
        OpRep::Dense(a) => {
            for i in 0..op.rows {
                let mut s = 0.0;
                for j in 0..op.cols {
                    s += d[j] * a[(i, j)] * a[(i, j)];
                }
                out[i] = s;
            }
        }
        OpRep::Sparse(c) => {
            sparse_scaled_rows(c, d, &mut out);
        }
        OpRep::Identity => out.copy_from_slice(d),
    }
    out
}

fn sparse_scaled_rows(c: &Csc, d: &[f64], out: &mut [f64]) {
    for j in 0..c.cols {
        for idx in c.colptr[j]..c.colptr[j + 1] {
            out[c.rowind[idx]] += d[j] * c.vals[idx] * c.vals[idx];
        }
    }
}

fn op_diagonal(op: &LinearOperator) -> Vec<f64> {
    let k = op.rows.min(op.cols);
    let mut out = vec![0.0; k];
    match &op.rep {
        OpRep::Dense(a) => {
            for i in 0..k {
                out[i] = a[(i, i)];
            }
        }
        OpRep::Sparse(c) => {
            for j in 0..k {
                for idx in c.colptr[j]..c.colptr[j + 1] {
                    if c.rowind[idx] == j {
                        out[j] = c.vals[idx];
                    }
                }
            }
        }
        OpRep::Identity => out.fill(1.0),
    }
    out
}

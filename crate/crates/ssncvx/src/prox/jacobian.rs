//! Structured generalized Jacobians of proximal maps and the two derived
//! operators the Newton system needs:
//!
//! ```text
//!   Dᵗ   = (1/σ)(I − D) + τ I          (inverted blockwise)
//!   D̄    = σ D + D (Dᵗ)⁻¹ D            (appears in the reduced system)
//! ```
//!
//! Every prox Jacobian D in the catalog is one of: identity, diagonal,
//! diagonal-plus-low-rank blocks (norm balls, second-order cones), a spectral
//! Löwner operator (nuclear/spectral norm, PSD cone), or the fused-lasso
//! block-averaging form. Each case inverts Dᵗ in closed form; nothing here
//! falls back to a dense factorization of the ambient dimension.

use nalgebra::DMatrix;

use super::fused::FusedFactors;
use super::spectral::{PsdJac, SpectralJac};

/// Dense low-rank symmetric block: diag(d) + Σ_j a_j u_j u_jᵀ.
#[derive(Debug, Clone)]
pub struct LowRankBlock {
    pub diag: Vec<f64>,
    pub terms: Vec<(f64, Vec<f64>)>,
}

impl LowRankBlock {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        for i in 0..g.len() {
            out[i] = self.diag[i] * g[i];
        }
        for (a, u) in &self.terms {
            let s: f64 = u.iter().zip(g).map(|(ui, gi)| ui * gi).sum();
            let c = a * s;
            for i in 0..g.len() {
                out[i] += c * u[i];
            }
        }
    }
}

/// Generalized Jacobian of a prox at a point.
#[derive(Debug, Clone)]
pub enum JacobianRep {
    /// prox is the identity (p ≡ 0)
    Identity(usize),
    Diagonal(Vec<f64>),
    /// consecutive blocks, e.g. one per second-order cone
    LowRank { dims: Vec<usize>, blocks: Vec<LowRankBlock> },
    Spectral(Box<SpectralJac>),
    Psd(Box<PsdJac>),
    Fused(FusedFactors),
}

impl JacobianRep {
    pub fn dim(&self) -> usize {
        match self {
            JacobianRep::Identity(n) => *n,
            JacobianRep::Diagonal(d) => d.len(),
            JacobianRep::LowRank { dims, .. } => dims.iter().sum(),
            JacobianRep::Spectral(j) => j.n1 * j.n2,
            JacobianRep::Psd(j) => j.n * j.n,
            JacobianRep::Fused(f) => f.n,
        }
    }

    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        match self {
            JacobianRep::Identity(_) => out.copy_from_slice(g),
            JacobianRep::Diagonal(d) => {
                for i in 0..g.len() {
                    out[i] = d[i] * g[i];
                }
            }
            JacobianRep::LowRank { dims, blocks } => {
                let mut off = 0;
                for (d, b) in dims.iter().zip(blocks) {
                    b.apply(&g[off..off + d], &mut out[off..off + d]);
                    off += d;
                }
            }
            JacobianRep::Spectral(j) => j.apply(g, out),
            JacobianRep::Psd(j) => j.apply(g, out),
            JacobianRep::Fused(f) => f.apply(g, out),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    pub fn derived(&self, sigma: f64, tau: f64) -> DerivedOps {
        assert!(sigma > 0.0 && tau > 0.0, "derived operators need σ, τ > 0");
        let rep = match self {
            JacobianRep::Identity(n) => DerivedRep::Identity(*n),
            JacobianRep::Diagonal(d) => {
                let mut dtau = Vec::with_capacity(d.len());
                let mut dbar = Vec::with_capacity(d.len());
                for &di in d {
                    let inv = 1.0 / ((1.0 - di) / sigma + tau);
                    dtau.push(inv);
                    dbar.push(sigma * di + di * di * inv);
                }
                DerivedRep::Diagonal { dtau, dbar }
            }
            JacobianRep::LowRank { dims, blocks } => DerivedRep::LowRank {
                dims: dims.clone(),
                blocks: blocks.iter().map(|b| BlockDerived::new(b, sigma, tau)).collect(),
            },
            JacobianRep::Spectral(j) => DerivedRep::Spectral(Box::new(SpectralDerived::new(j, sigma, tau))),
            JacobianRep::Psd(j) => {
                let n = j.n;
                let base = sigma / (1.0 + sigma * tau);
                let mut coef_inv = DMatrix::zeros(n, n);
                let mut coef_dbar = DMatrix::zeros(n, n);
                for i in 0..n {
                    for jdx in 0..n {
                        let s = j.coef[(i, jdx)];
                        let inv = 1.0 / ((1.0 - s) / sigma + tau);
                        coef_inv[(i, jdx)] = inv;
                        coef_dbar[(i, jdx)] = sigma * s + s * s * inv;
                    }
                }
                DerivedRep::Psd {
                    q: j.q.clone(),
                    coef_inv,
                    coef_dbar,
                    base,
                }
            }
            JacobianRep::Fused(f) => {
                let a = 1.0 / sigma + tau;
                let c = 1.0 / sigma;
                let blocks = f
                    .blocks
                    .iter()
                    .map(|b| {
                        let nb = b.len() as f64;
                        let kb = (b.lo..=b.hi).filter(|&i| f.theta[i] == 1.0).count() as f64;
                        let d = kb / nb;
                        FusedBlockDerived {
                            lo: b.lo,
                            hi: b.hi,
                            scale: 1.0 / nb.sqrt(),
                            dtau_coef: c / (a * (a - c * d)),
                            dbar_coef: sigma + d / ((1.0 - d) / sigma + tau),
                        }
                    })
                    .collect();
                DerivedRep::Fused {
                    factors: f.clone(),
                    base_inv: 1.0 / a,
                    active_inv: 1.0 / tau,
                    active_dbar: sigma + 1.0 / tau,
                    blocks,
                }
            }
        };
        DerivedOps { sigma, tau, rep }
    }
}

/// One low-rank block of Dᵗ inverted by the matrix-inversion lemma:
/// with Λ' = diag((1−d)/σ + τ) and S = diag(a_j/σ),
/// (Λ' − U S Uᵀ)⁻¹ = Λ'⁻¹ + Ũ K Ũᵀ, Ũ = Λ'⁻¹U, K = (S⁻¹ − UᵀΛ'⁻¹U)⁻¹.
#[derive(Debug, Clone)]
pub struct BlockDerived {
    jac: LowRankBlock,
    lam_inv: Vec<f64>,
    ut: Vec<Vec<f64>>,
    cap: DMatrix<f64>,
}

impl BlockDerived {
    fn new(b: &LowRankBlock, sigma: f64, tau: f64) -> Self {
        let n = b.dim();
        let lam_inv: Vec<f64> = b.diag.iter().map(|&d| 1.0 / ((1.0 - d) / sigma + tau)).collect();
        let terms: Vec<&(f64, Vec<f64>)> = b.terms.iter().filter(|(a, _)| *a != 0.0).collect();
        let k = terms.len();
        let ut: Vec<Vec<f64>> = terms
            .iter()
            .map(|(_, u)| (0..n).map(|i| lam_inv[i] * u[i]).collect())
            .collect();
        let cap = if k == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let mut m = DMatrix::zeros(k, k);
            for j in 0..k {
                m[(j, j)] = sigma / terms[j].0;
                for l in 0..k {
                    let dot: f64 = terms[j].1.iter().zip(&ut[l]).map(|(a, b)| a * b).sum();
                    m[(j, l)] -= dot;
                }
            }
            m.try_inverse().expect("low-rank capacitance must be invertible")
        };
        BlockDerived {
            jac: b.clone(),
            lam_inv,
            ut,
            cap,
        }
    }

    fn dtau_inv_apply(&self, g: &[f64], out: &mut [f64]) {
        let k = self.ut.len();
        for i in 0..g.len() {
            out[i] = self.lam_inv[i] * g[i];
        }
        if k == 0 {
            return;
        }
        let proj: Vec<f64> = self
            .ut
            .iter()
            .map(|u| u.iter().zip(g).map(|(ui, gi)| ui * gi).sum())
            .collect();
        for j in 0..k {
            let mut c = 0.0;
            for l in 0..k {
                c += self.cap[(j, l)] * proj[l];
            }
            for i in 0..g.len() {
                out[i] += c * self.ut[j][i];
            }
        }
    }

    fn dbar_apply(&self, g: &[f64], out: &mut [f64], sigma: f64) {
        let n = g.len();
        let mut bg = vec![0.0; n];
        self.jac.apply(g, &mut bg);
        let mut inv = vec![0.0; n];
        self.dtau_inv_apply(&bg, &mut inv);
        let mut binv = vec![0.0; n];
        self.jac.apply(&inv, &mut binv);
        for i in 0..n {
            out[i] = sigma * bg[i] + binv[i];
        }
    }
}

/// Hadamard-coefficient operator in a fixed singular basis.
#[derive(Debug, Clone)]
struct HadamardOp {
    g: DMatrix<f64>,
    gt: DMatrix<f64>,
    diagm: Option<DMatrix<f64>>,
    rect: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SpectralDerived {
    n1: usize,
    n2: usize,
    transposed: bool,
    u: DMatrix<f64>,
    v1: DMatrix<f64>,
    inv: HadamardOp,
    dbar: HadamardOp,
}

impl SpectralDerived {
    fn new(j: &SpectralJac, sigma: f64, tau: f64) -> Self {
        let n1 = j.n1;
        let a = 1.0 / sigma + tau;
        // Dᵗ square-part coefficients c1 ⊙ G + c2 ⊙ Gᵀ and their inverse
        let mut inv_g = DMatrix::zeros(n1, n1);
        let mut inv_gt = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for k in 0..n1 {
                let c1 = a - j.omega_g[(i, k)] / sigma;
                let c2 = -j.omega_gt[(i, k)] / sigma;
                let os = 0.5 / (c1 + c2);
                let oa = 0.5 / (c1 - c2);
                inv_g[(i, k)] = os + oa;
                inv_gt[(i, k)] = os - oa;
            }
        }
        let inv_diag = j.diag_coupling.as_ref().map(|jpsi| {
            let m = DMatrix::identity(n1, n1) * a - jpsi / sigma;
            m.try_inverse().expect("diagonal-subspace operator must be invertible")
        });
        let inv_rect: Vec<f64> = j
            .omega_rect
            .iter()
            .map(|&w| 1.0 / ((1.0 - w) / sigma + tau))
            .collect();

        // D̄ = σD + D (Dᵗ)⁻¹ D composed coefficient-wise (the entry-pair
        // subspaces are invariant, so composition is exact)
        let mut db_g = DMatrix::zeros(n1, n1);
        let mut db_gt = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for k in 0..n1 {
                let (og, ogt) = (j.omega_g[(i, k)], j.omega_gt[(i, k)]);
                let (ig, igt) = (inv_g[(i, k)], inv_gt[(i, k)]);
                let f1 = ig * og + igt * ogt;
                let f2 = ig * ogt + igt * og;
                db_g[(i, k)] = sigma * og + og * f1 + ogt * f2;
                db_gt[(i, k)] = sigma * ogt + og * f2 + ogt * f1;
            }
        }
        let db_diag = j.diag_coupling.as_ref().map(|jpsi| {
            let inv = inv_diag.as_ref().unwrap();
            jpsi * sigma + jpsi * inv * jpsi
        });
        let db_rect: Vec<f64> = j
            .omega_rect
            .iter()
            .zip(&inv_rect)
            .map(|(&w, &r)| sigma * w + w * w * r)
            .collect();

        SpectralDerived {
            n1,
            n2: j.n2,
            transposed: j.transposed,
            u: j.u.clone(),
            v1: j.v1.clone(),
            inv: HadamardOp {
                g: inv_g,
                gt: inv_gt,
                diagm: inv_diag,
                rect: inv_rect,
            },
            dbar: HadamardOp {
                g: db_g,
                gt: db_gt,
                diagm: db_diag,
                rect: db_rect,
            },
        }
    }

    fn apply_op(&self, op: &HadamardOp, g: &[f64], out: &mut [f64]) {
        let gm = if self.transposed {
            DMatrix::from_column_slice(self.n2, self.n1, g).transpose()
        } else {
            DMatrix::from_column_slice(self.n1, self.n2, g)
        };
        let g1 = self.u.transpose() * &gm * &self.v1;
        let n1 = self.n1;
        let mut m = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for k in 0..n1 {
                m[(i, k)] = op.g[(i, k)] * g1[(i, k)] + op.gt[(i, k)] * g1[(k, i)];
            }
        }
        if let Some(c) = &op.diagm {
            for i in 0..n1 {
                let mut s = 0.0;
                for k in 0..n1 {
                    s += c[(i, k)] * g1[(k, k)];
                }
                m[(i, i)] = s;
            }
        }
        let rectm = &gm - &self.u * &g1 * self.v1.transpose();
        let mut scaled = self.u.transpose() * rectm;
        for i in 0..n1 {
            let w = op.rect[i];
            for jx in 0..scaled.ncols() {
                scaled[(i, jx)] *= w;
            }
        }
        let res = &self.u * m * self.v1.transpose() + &self.u * scaled;
        if self.transposed {
            out.copy_from_slice(res.transpose().as_slice());
        } else {
            out.copy_from_slice(res.as_slice());
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusedBlockDerived {
    lo: usize,
    hi: usize,
    scale: f64,
    dtau_coef: f64,
    dbar_coef: f64,
}

#[derive(Debug, Clone)]
enum DerivedRep {
    Identity(usize),
    Diagonal {
        dtau: Vec<f64>,
        dbar: Vec<f64>,
    },
    LowRank {
        dims: Vec<usize>,
        blocks: Vec<BlockDerived>,
    },
    Spectral(Box<SpectralDerived>),
    Psd {
        q: DMatrix<f64>,
        coef_inv: DMatrix<f64>,
        coef_dbar: DMatrix<f64>,
        base: f64,
    },
    Fused {
        factors: FusedFactors,
        base_inv: f64,
        active_inv: f64,
        active_dbar: f64,
        blocks: Vec<FusedBlockDerived>,
    },
}

/// Sparse rank-one decomposition of D̄ when one exists:
/// D̄ = Σ diag terms + Σ_j c_j v_j v_jᵀ with sparse v_j.
pub struct SpikeStructure {
    pub diag: Vec<(usize, f64)>,
    pub spikes: Vec<(f64, Vec<(usize, f64)>)>,
}

pub struct DerivedOps {
    pub sigma: f64,
    pub tau: f64,
    rep: DerivedRep,
}

impl DerivedOps {
    pub fn dim(&self) -> usize {
        match &self.rep {
            DerivedRep::Identity(n) => *n,
            DerivedRep::Diagonal { dtau, .. } => dtau.len(),
            DerivedRep::LowRank { dims, .. } => dims.iter().sum(),
            DerivedRep::Spectral(s) => s.n1 * s.n2,
            DerivedRep::Psd { q, .. } => q.nrows() * q.nrows(),
            DerivedRep::Fused { factors, .. } => factors.n,
        }
    }

    pub fn dtau_inv_apply(&self, g: &[f64], out: &mut [f64]) {
        match &self.rep {
            DerivedRep::Identity(_) => {
                let c = 1.0 / self.tau;
                for i in 0..g.len() {
                    out[i] = c * g[i];
                }
            }
            DerivedRep::Diagonal { dtau, .. } => {
                for i in 0..g.len() {
                    out[i] = dtau[i] * g[i];
                }
            }
            DerivedRep::LowRank { dims, blocks } => {
                let mut off = 0;
                for (d, b) in dims.iter().zip(blocks) {
                    b.dtau_inv_apply(&g[off..off + d], &mut out[off..off + d]);
                    off += d;
                }
            }
            DerivedRep::Spectral(s) => s.apply_op(&s.inv, g, out),
            DerivedRep::Psd { q, coef_inv, base, .. } => {
                psd_hadamard(q, coef_inv, g, out, Some(*base));
            }
            DerivedRep::Fused {
                factors,
                base_inv,
                active_inv,
                blocks,
                ..
            } => {
                for i in 0..g.len() {
                    out[i] = base_inv * g[i];
                }
                for &i in &factors.singletons {
                    if factors.theta[i] == 1.0 {
                        out[i] = active_inv * g[i];
                    }
                }
                for b in blocks {
                    let mut s = 0.0;
                    for i in b.lo..=b.hi {
                        s += factors.theta[i] * b.scale * g[i];
                    }
                    let c = b.dtau_coef * s;
                    for i in b.lo..=b.hi {
                        out[i] += c * factors.theta[i] * b.scale;
                    }
                }
            }
        }
    }

    pub fn dbar_apply(&self, g: &[f64], out: &mut [f64]) {
        match &self.rep {
            DerivedRep::Identity(_) => {
                let c = self.sigma + 1.0 / self.tau;
                for i in 0..g.len() {
                    out[i] = c * g[i];
                }
            }
            DerivedRep::Diagonal { dbar, .. } => {
                for i in 0..g.len() {
                    out[i] = dbar[i] * g[i];
                }
            }
            DerivedRep::LowRank { dims, blocks } => {
                let mut off = 0;
                for (d, b) in dims.iter().zip(blocks) {
                    b.dbar_apply(&g[off..off + d], &mut out[off..off + d], self.sigma);
                    off += d;
                }
            }
            DerivedRep::Spectral(s) => s.apply_op(&s.dbar, g, out),
            DerivedRep::Psd { q, coef_dbar, .. } => {
                psd_hadamard(q, coef_dbar, g, out, None);
            }
            DerivedRep::Fused {
                factors,
                active_dbar,
                blocks,
                ..
            } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for &i in &factors.singletons {
                    if factors.theta[i] == 1.0 {
                        out[i] = active_dbar * g[i];
                    }
                }
                for b in blocks {
                    let mut s = 0.0;
                    for i in b.lo..=b.hi {
                        s += factors.theta[i] * b.scale * g[i];
                    }
                    let c = b.dbar_coef * s;
                    for i in b.lo..=b.hi {
                        out[i] += c * factors.theta[i] * b.scale;
                    }
                }
            }
        }
    }

    /// D̄ = c·I exactly (the D = I case); enables caching the congruence Gram.
    pub fn dbar_uniform(&self) -> Option<f64> {
        match &self.rep {
            DerivedRep::Identity(_) => Some(self.sigma + 1.0 / self.tau),
            _ => None,
        }
    }

    /// Whether D̄ is exactly diagonal; `dbar_diag` alone is not enough to
    /// decide this because it also serves as the Jacobi diagonal of coupled
    /// representations.
    pub fn dbar_is_diagonal(&self) -> bool {
        matches!(
            &self.rep,
            DerivedRep::Identity(_) | DerivedRep::Diagonal { .. }
        )
    }

    /// Exact diagonal of D̄ when it is cheap; used for preconditioning.
    pub fn dbar_diag(&self) -> Option<Vec<f64>> {
        match &self.rep {
            DerivedRep::Identity(n) => Some(vec![self.sigma + 1.0 / self.tau; *n]),
            DerivedRep::Diagonal { dbar, .. } => Some(dbar.clone()),
            DerivedRep::Fused {
                factors,
                active_dbar,
                blocks,
                ..
            } => {
                let mut d = vec![0.0; factors.n];
                for &i in &factors.singletons {
                    if factors.theta[i] == 1.0 {
                        d[i] = *active_dbar;
                    }
                }
                for b in blocks {
                    for i in b.lo..=b.hi {
                        d[i] += b.dbar_coef * factors.theta[i] * b.scale * b.scale;
                    }
                }
                Some(d)
            }
            _ => None,
        }
    }

    /// D̄ as diagonal-plus-sparse-rank-one, when that form is exact.
    pub fn dbar_structure(&self) -> Option<SpikeStructure> {
        match &self.rep {
            DerivedRep::Identity(n) => Some(SpikeStructure {
                diag: (0..*n).map(|i| (i, self.sigma + 1.0 / self.tau)).collect(),
                spikes: Vec::new(),
            }),
            DerivedRep::Diagonal { dbar, .. } => Some(SpikeStructure {
                diag: dbar.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect(),
                spikes: Vec::new(),
            }),
            DerivedRep::Fused {
                factors,
                active_dbar,
                blocks,
                ..
            } => {
                let diag = factors
                    .singletons
                    .iter()
                    .filter(|&&i| factors.theta[i] == 1.0)
                    .map(|&i| (i, *active_dbar))
                    .collect();
                let spikes = blocks
                    .iter()
                    .map(|b| {
                        let v: Vec<(usize, f64)> = (b.lo..=b.hi)
                            .filter(|&i| factors.theta[i] == 1.0)
                            .map(|i| (i, b.scale))
                            .collect();
                        (b.dbar_coef, v)
                    })
                    .filter(|(_, v)| !v.is_empty())
                    .collect();
                Some(SpikeStructure { diag, spikes })
            }
            _ => None,
        }
    }

    pub fn dtau_inv_dense(&self) -> DMatrix<f64> {
        self.materialize(|g, out| self.dtau_inv_apply(g, out))
    }

    pub fn dbar_dense(&self) -> DMatrix<f64> {
        self.materialize(|g, out| self.dbar_apply(g, out))
    }

    fn materialize(&self, f: impl Fn(&[f64], &mut [f64])) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            f(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }
}

/// Q (C ⊙ (Qᵀ sym(G) Q)) Qᵀ, with the skew part scaled by `skew` when the
/// operator acts as that multiple of the identity there (and dropped when
/// `None` because the operator annihilates it).
fn psd_hadamard(q: &DMatrix<f64>, coef: &DMatrix<f64>, g: &[f64], out: &mut [f64], skew: Option<f64>) {
    let n = q.nrows();
    let gm = DMatrix::from_column_slice(n, n, g);
    let sym = (&gm + gm.transpose()) * 0.5;
    let ht = q.transpose() * &sym * q;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = coef[(i, j)] * ht[(i, j)];
        }
    }
    let mut res = q * m * q.transpose();
    if let Some(s) = skew {
        let skew_part = (&gm - gm.transpose()) * 0.5;
        res += skew_part * s;
    }
    out.copy_from_slice(res.as_slice());
}

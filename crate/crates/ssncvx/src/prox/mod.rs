//! Proximal-map catalog: evaluation, generalized Jacobians, conjugate
//! values, and the derived operators consumed by the Newton linear system.

pub mod fused;
pub mod jacobian;
pub mod soc;
pub mod spectral;

use crate::la;
use crate::model::{singular_values, sym_eigenvalues, FunctionKind, FunctionSpec, FEAS_TOL};
pub use jacobian::{DerivedOps, JacobianRep, LowRankBlock, SpikeStructure};

/// Result of one prox evaluation: the point prox_{t·g}(x), the function
/// value g(prox), and a generalized Jacobian of the map at x.
pub struct ProxEval {
    pub scale: f64,
    pub prox: Vec<f64>,
    pub value: f64,
    pub jac: JacobianRep,
}

/// prox_{t·g}(x) for every catalog entry, with its structured Jacobian.
pub fn prox_eval(kind: &FunctionKind, t: f64, x: &[f64]) -> ProxEval {
    assert!(t > 0.0, "prox scale must be positive");
    let n = x.len();
    let (prox, jac) = match kind {
        FunctionKind::Zero => (x.to_vec(), JacobianRep::Identity(n)),
        FunctionKind::L1 { lambda } => {
            let lam = t * lambda;
            let mut p = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 0..n {
                p[i] = if x[i] > lam {
                    x[i] - lam
                } else if x[i] < -lam {
                    x[i] + lam
                } else {
                    0.0
                };
                d[i] = if x[i].abs() >= lam { 1.0 } else { 0.0 };
            }
            (p, JacobianRep::Diagonal(d))
        }
        FunctionKind::L2Norm { lambda } => {
            let lam = t * lambda;
            let r = la::nrm2(x);
            if r > lam {
                let s = 1.0 - lam / r;
                let p: Vec<f64> = x.iter().map(|v| s * v).collect();
                let xhat: Vec<f64> = x.iter().map(|v| v / r).collect();
                let block = LowRankBlock {
                    diag: vec![s; n],
                    terms: vec![(lam / r, xhat)],
                };
                (p, JacobianRep::LowRank { dims: vec![n], blocks: vec![block] })
            } else {
                (vec![0.0; n], JacobianRep::Diagonal(vec![0.0; n]))
            }
        }
        FunctionKind::L2Ball { radius } => {
            let r = la::nrm2(x);
            if r <= *radius {
                (x.to_vec(), JacobianRep::Identity(n))
            } else {
                let s = radius / r;
                let p: Vec<f64> = x.iter().map(|v| s * v).collect();
                let xhat: Vec<f64> = x.iter().map(|v| v / r).collect();
                let block = LowRankBlock {
                    diag: vec![s; n],
                    terms: vec![(-s, xhat)],
                };
                (p, JacobianRep::LowRank { dims: vec![n], blocks: vec![block] })
            }
        }
        FunctionKind::BoxIndicator { set } => {
            let mut p = vec![0.0; n];
            set.project(x, &mut p);
            (p, JacobianRep::Diagonal(set.project_jacobian(x)))
        }
        FunctionKind::SocIndicator { dims } => {
            let mut p = vec![0.0; n];
            let mut blocks = Vec::with_capacity(dims.len());
            let mut off = 0;
            for &d in dims {
                soc::project(&x[off..off + d], &mut p[off..off + d]);
                blocks.push(soc::project_jacobian(&x[off..off + d]));
                off += d;
            }
            (p, JacobianRep::LowRank { dims: dims.clone(), blocks })
        }
        FunctionKind::SocBarrier { dims, mu } => {
            let mu_eff = t * mu;
            let mut p = vec![0.0; n];
            let mut blocks = Vec::with_capacity(dims.len());
            let mut off = 0;
            for &d in dims {
                let xc = soc::barrier_prox(mu_eff, &x[off..off + d]);
                blocks.push(soc::barrier_jacobian(mu_eff, &xc));
                p[off..off + d].copy_from_slice(&xc);
                off += d;
            }
            (p, JacobianRep::LowRank { dims: dims.clone(), blocks })
        }
        FunctionKind::NuclearNorm { lambda, n1, n2 } => {
            let r = spectral::nuclear_prox(x, t * lambda, *n1, *n2);
            (r.prox, JacobianRep::Spectral(Box::new(r.jac)))
        }
        FunctionKind::SpectralNorm { lambda, n1, n2 } => {
            let r = spectral::spectral_norm_prox(x, t * lambda, *n1, *n2);
            (r.prox, JacobianRep::Spectral(Box::new(r.jac)))
        }
        FunctionKind::PsdIndicator { n: sn } => {
            let r = spectral::psd_project(x, *sn);
            (r.prox, JacobianRep::Psd(Box::new(r.jac)))
        }
        FunctionKind::Fused { lambda1, lambda2 } => {
            let r = fused::fused_prox(x, *lambda1, *lambda2, t);
            (r.prox, JacobianRep::Fused(r.factors))
        }
        FunctionKind::SquaredLoss => {
            let s = 1.0 / (1.0 + t);
            let p: Vec<f64> = x.iter().map(|v| s * v).collect();
            (p, JacobianRep::Diagonal(vec![s; n]))
        }
    };
    let value = kind.value(&prox);
    ProxEval {
        scale: t,
        prox,
        value,
        jac,
    }
}

/// prox of the shifted function g(· − b): b + prox_{t·g}(x − b).
/// The Jacobian is unchanged by the shift.
pub fn shifted_prox_eval(spec: &FunctionSpec, t: f64, x: &[f64]) -> ProxEval {
    match &spec.shift {
        None => prox_eval(&spec.kind, t, x),
        Some(b) => {
            let inner: Vec<f64> = x.iter().zip(b).map(|(xi, bi)| xi - bi).collect();
            let mut e = prox_eval(&spec.kind, t, &inner);
            for (pi, bi) in e.prox.iter_mut().zip(b) {
                *pi += bi;
            }
            e
        }
    }
}

/// Barrier prox over a product of second-order cones: [`soc::barrier_prox`]
/// applied per cone of `dims`.
pub fn soc_barrier_prox(mu: f64, dims: &[usize], z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut start = 0;
    for &d in dims {
        out.extend(soc::barrier_prox(mu, &z[start..start + d]));
        start += d;
    }
    out
}

/// Jacobian of the barrier prox at `z`: one diagonal-plus-rank-one block per
/// cone, evaluated at the prox output.
pub fn soc_barrier_jacobian(mu: f64, dims: &[usize], z: &[f64]) -> JacobianRep {
    let mut blocks = Vec::with_capacity(dims.len());
    let mut start = 0;
    for &d in dims {
        let xc = soc::barrier_prox(mu, &z[start..start + d]);
        blocks.push(soc::barrier_jacobian(mu, &xc));
        start += d;
    }
    JacobianRep::LowRank { dims: dims.to_vec(), blocks }
}

/// Operators `(D^τ)⁻¹` and `D̄` derived from a prox Jacobian at penalty σ
/// and regularization τ.
pub fn derived_ops(jac: &JacobianRep, sigma: f64, tau: f64) -> DerivedOps {
    jac.derived(sigma, tau)
}

/// Block/threshold structure of the fused-penalty prox Jacobian at `x`
/// (unit prox scale).
pub fn fused_jacobian_factors(x: &[f64], lambda1: f64, lambda2: f64) -> fused::FusedFactors {
    fused::fused_prox(x, lambda1, lambda2, 1.0).factors
}

/// Conjugate value g*(y); +∞ encodes infeasibility of y for the dual
/// domain (indicator conjugates, norm-ball duals).
pub fn conjugate_value(kind: &FunctionKind, y: &[f64]) -> f64 {
    let tolr = FEAS_TOL * (1.0 + la::nrm2(y));
    match kind {
        FunctionKind::Zero => {
            if la::nrm_inf(y) <= tolr {
                0.0
            } else {
                f64::INFINITY
            }
        }
        FunctionKind::L1 { lambda } => {
            if la::nrm_inf(y) <= lambda + tolr {
                0.0
            } else {
                f64::INFINITY
            }
        }
        FunctionKind::L2Norm { lambda } => {
            if la::nrm2(y) <= lambda + tolr {
                0.0
            } else {
                f64::INFINITY
            }
        }
        FunctionKind::L2Ball { radius } => radius * la::nrm2(y),
        FunctionKind::BoxIndicator { set } => set.support(y),
        FunctionKind::SocIndicator { dims } => {
            // support of the cone: 0 iff −y lies in the (self-dual) cone
            let mut off = 0;
            for &d in dims {
                let y0 = -y[off];
                let tail = la::nrm2(&y[off + 1..off + d]);
                if y0 + tolr < tail {
                    return f64::INFINITY;
                }
                off += d;
            }
            0.0
        }
        FunctionKind::SocBarrier { dims, mu } => {
            let mut total = 0.0;
            let mut off = 0;
            for &d in dims {
                let neg: Vec<f64> = y[off..off + d].iter().map(|v| -v).collect();
                let dety = soc::det(&neg);
                if neg[0] <= 0.0 || dety <= 0.0 {
                    return f64::INFINITY;
                }
                total += -mu + 0.5 * mu * (mu * mu / dety).ln();
                off += d;
            }
            total
        }
        FunctionKind::NuclearNorm { lambda, n1, n2 } => {
            let sv = singular_values(y, *n1, *n2);
            let smax = sv.first().copied().unwrap_or(0.0);
            if smax <= lambda + tolr {
                0.0
            } else {
                f64::INFINITY
            }
        }
        FunctionKind::SpectralNorm { lambda, n1, n2 } => {
            let sv = singular_values(y, *n1, *n2);
            let total: f64 = sv.iter().sum();
            if total <= lambda + tolr {
                0.0
            } else {
                f64::INFINITY
            }
        }
        FunctionKind::PsdIndicator { n } => {
            let ev = sym_eigenvalues(y, *n);
            let lmax = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lmax <= tolr {
                0.0
            } else {
                f64::INFINITY
            }
        }
        FunctionKind::Fused { .. } => {
            // no closed form: lower-bound via the Fenchel inequality at the
            // prox point of a hugely scaled prox, clipped at the exact
            // lower bound g*(y) ≥ −g(0) = 0
            let t = 1e8;
            let scaled: Vec<f64> = y.iter().map(|v| t * v).collect();
            let e = prox_eval(kind, t, &scaled);
            let val = la::dot(y, &e.prox) - e.value;
            val.max(0.0)
        }
        FunctionKind::SquaredLoss => 0.5 * la::dot(y, y),
    }
}

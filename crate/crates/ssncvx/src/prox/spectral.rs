//! Spectral proximal maps: singular-value soft thresholding (nuclear norm),
//! the spectral-norm prox via an ℓ1-ball projection of the singular values,
//! and the PSD-cone projection. Their generalized Jacobians act through
//! Hadamard (Löwner) coefficient matrices in the singular/eigen basis, which
//! is also what makes the Newton-system operators (Dᵗ)⁻¹ and D̄ cheap.

use nalgebra::DMatrix;

/// Divided-difference tie threshold, relative to the magnitude of the pair.
const TIE_TOL: f64 = 1e-10;

/// Generalized Jacobian of a prox acting on singular values.
///
/// Internally the matrix is oriented n1 ≤ n2 (transposing if needed; prox
/// commutes with transposition). For a perturbation G with G1 = UᵀGV1:
///
/// ```text
///   D(G) = U [ Ωg ⊙ G1 + Ωgt ⊙ G1ᵀ ] V1ᵀ  +  U diag(ω) Uᵀ (G − U G1 V1ᵀ)
/// ```
///
/// with the diagonal of the bracket replaced by `diag_coupling · diag(G1)`
/// when the scalar map couples singular values (spectral norm).
#[derive(Debug, Clone)]
pub struct SpectralJac {
    pub n1: usize,
    pub n2: usize,
    pub transposed: bool,
    pub u: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub omega_g: DMatrix<f64>,
    pub omega_gt: DMatrix<f64>,
    pub omega_rect: Vec<f64>,
    /// Rows whose prox singular value (or scalar derivative) is nonzero;
    /// outside α×α every coefficient vanishes.
    pub alpha: Vec<usize>,
    pub diag_coupling: Option<DMatrix<f64>>,
}

impl SpectralJac {
    fn reshape_in(&self, g: &[f64]) -> DMatrix<f64> {
        if self.transposed {
            DMatrix::from_column_slice(self.n2, self.n1, g).transpose()
        } else {
            DMatrix::from_column_slice(self.n1, self.n2, g)
        }
    }

    fn reshape_out(&self, m: DMatrix<f64>, out: &mut [f64]) {
        if self.transposed {
            out.copy_from_slice(m.transpose().as_slice());
        } else {
            out.copy_from_slice(m.as_slice());
        }
    }

    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        let gm = self.reshape_in(g);
        let g1 = self.u.transpose() * &gm * &self.v1;
        let n1 = self.n1;
        let mut m = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                m[(i, j)] = self.omega_g[(i, j)] * g1[(i, j)] + self.omega_gt[(i, j)] * g1[(j, i)];
            }
        }
        if let Some(c) = &self.diag_coupling {
            for i in 0..n1 {
                let mut s = 0.0;
                for j in 0..n1 {
                    s += c[(i, j)] * g1[(j, j)];
                }
                m[(i, i)] = s;
            }
        }
        let rect = &gm - &self.u * &g1 * self.v1.transpose();
        let mut scaled = self.u.transpose() * rect;
        for i in 0..n1 {
            let w = self.omega_rect[i];
            for j in 0..scaled.ncols() {
                scaled[(i, j)] *= w;
            }
        }
        let res = &self.u * m * self.v1.transpose() + &self.u * scaled;
        self.reshape_out(res, out);
    }
}

/// PSD-cone projection Jacobian: D(H) = Q (Σ ⊙ (Qᵀ sym(H) Q)) Qᵀ.
#[derive(Debug, Clone)]
pub struct PsdJac {
    pub n: usize,
    pub q: DMatrix<f64>,
    pub coef: DMatrix<f64>,
}

impl PsdJac {
    pub fn apply(&self, h: &[f64], out: &mut [f64]) {
        let n = self.n;
        let hm = DMatrix::from_column_slice(n, n, h);
        let sym = (&hm + hm.transpose()) * 0.5;
        let ht = self.q.transpose() * sym * &self.q;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.coef[(i, j)] * ht[(i, j)];
            }
        }
        let res = &self.q * m * self.q.transpose();
        out.copy_from_slice(res.as_slice());
    }
}

/// Scalar soft threshold and its derivative (derivative 1 on the boundary).
pub fn soft(s: f64, lam: f64) -> f64 {
    if s > lam {
        s - lam
    } else {
        0.0
    }
}

pub fn dsoft(s: f64, lam: f64) -> f64 {
    if s >= lam {
        1.0
    } else {
        0.0
    }
}

fn div_diff(a: f64, b: f64, fa: f64, fb: f64, dmid: f64) -> f64 {
    if (a - b).abs() > TIE_TOL * (1.0 + a.abs().max(b.abs())) {
        (fa - fb) / (a - b)
    } else {
        dmid
    }
}

/// Orientation helper: return (rows, cols, transposed, column-major data of
/// the n1 ≤ n2 orientation).
fn orient(x: &[f64], n1: usize, n2: usize) -> (usize, usize, bool, DMatrix<f64>) {
    let m = DMatrix::from_column_slice(n1, n2, x);
    if n1 <= n2 {
        (n1, n2, false, m)
    } else {
        (n2, n1, true, m.transpose())
    }
}

pub struct SpectralProx {
    pub prox: Vec<f64>,
    /// singular values of the prox output (internal orientation)
    pub out_sigma: Vec<f64>,
    pub jac: SpectralJac,
}

/// Nuclear-norm prox: soft-threshold the singular values by `lam`.
pub fn nuclear_prox(x: &[f64], lam: f64, n1: usize, n2: usize) -> SpectralProx {
    let (r, c, transposed, xm) = orient(x, n1, n2);
    let svd = xm.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let v1 = vt.transpose();
    let phi: Vec<f64> = sigma.iter().map(|&s| soft(s, lam)).collect();

    let mut pm = DMatrix::zeros(r, c);
    for k in 0..r {
        if phi[k] != 0.0 {
            let uk = u.column(k);
            let vk = v1.column(k);
            for j in 0..c {
                for i in 0..r {
                    pm[(i, j)] += phi[k] * uk[i] * vk[j];
                }
            }
        }
    }

    let mut omega_g = DMatrix::zeros(r, r);
    let mut omega_gt = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            let o1 = div_diff(sigma[i], sigma[j], phi[i], phi[j], dsoft(0.5 * (sigma[i] + sigma[j]), lam));
            let sum = sigma[i] + sigma[j];
            let o2 = if sum > TIE_TOL * (1.0 + sigma[i]) {
                (phi[i] + phi[j]) / sum
            } else {
                dsoft(0.0, lam)
            };
            omega_g[(i, j)] = 0.5 * (o1 + o2);
            omega_gt[(i, j)] = 0.5 * (o1 - o2);
        }
    }
    let omega_rect: Vec<f64> = (0..r)
        .map(|i| if sigma[i] > TIE_TOL { phi[i] / sigma[i] } else { dsoft(sigma[i], lam) })
        .collect();
    let alpha: Vec<usize> = (0..r).filter(|&i| sigma[i] >= lam).collect();

    let prox = if transposed {
        pm.transpose().as_slice().to_vec()
    } else {
        pm.as_slice().to_vec()
    };
    SpectralProx {
        prox,
        out_sigma: phi,
        jac: SpectralJac {
            n1: r,
            n2: c,
            transposed,
            u,
            v1,
            sigma,
            omega_g,
            omega_gt,
            omega_rect,
            alpha,
            diag_coupling: None,
        },
    }
}

/// Scalar part of the spectral-norm prox: ψ(σ) = min(σ, θ) where θ is the
/// ℓ1-ball (radius `lam`) projection threshold of the nonincreasing σ.
fn linf_threshold(sigma: &[f64], lam: f64) -> f64 {
    let total: f64 = sigma.iter().sum();
    if total <= lam {
        return 0.0;
    }
    // σ is nonincreasing: find the usual simplex-style cutoff
    let mut cum = 0.0;
    let mut theta = 0.0;
    for k in 0..sigma.len() {
        cum += sigma[k];
        let t = (cum - lam) / (k + 1) as f64;
        if k + 1 == sigma.len() || sigma[k + 1] <= t {
            theta = t;
            break;
        }
    }
    theta.max(0.0)
}

/// Spectral-norm prox: subtract the nuclear-ball projection.
pub fn spectral_norm_prox(x: &[f64], lam: f64, n1: usize, n2: usize) -> SpectralProx {
    let (r, c, transposed, xm) = orient(x, n1, n2);
    let svd = xm.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let v1 = vt.transpose();

    let theta = linf_threshold(&sigma, lam);
    let psi: Vec<f64> = sigma.iter().map(|&s| s.min(theta)).collect();
    let active: Vec<bool> = sigma.iter().map(|&s| s > theta && theta > 0.0).collect();
    let nact = active.iter().filter(|&&a| a).count();

    // vector Jacobian of ψ: zero when the ball constraint is inactive,
    // otherwise I − P_A + (1/|A|) 1_A 1_Aᵀ
    let mut jpsi = DMatrix::zeros(r, r);
    if theta > 0.0 {
        for i in 0..r {
            if active[i] {
                for j in 0..r {
                    if active[j] {
                        jpsi[(i, j)] = 1.0 / nact as f64;
                    }
                }
            } else {
                jpsi[(i, i)] = 1.0;
            }
        }
    }

    let mut pm = DMatrix::zeros(r, c);
    for k in 0..r {
        if psi[k] != 0.0 {
            let uk = u.column(k);
            let vk = v1.column(k);
            for j in 0..c {
                for i in 0..r {
                    pm[(i, j)] += psi[k] * uk[i] * vk[j];
                }
            }
        }
    }

    let dzero = if theta > 0.0 { 1.0 } else { 0.0 };
    let mut omega_g = DMatrix::zeros(r, r);
    let mut omega_gt = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            let tie = jpsi[(i, i)] - jpsi[(i, j)];
            let o1 = div_diff(sigma[i], sigma[j], psi[i], psi[j], tie);
            let sum = sigma[i] + sigma[j];
            let o2 = if sum > TIE_TOL * (1.0 + sigma[i]) {
                (psi[i] + psi[j]) / sum
            } else {
                dzero
            };
            omega_g[(i, j)] = 0.5 * (o1 + o2);
            omega_gt[(i, j)] = 0.5 * (o1 - o2);
        }
    }
    let omega_rect: Vec<f64> = (0..r)
        .map(|i| if sigma[i] > TIE_TOL { psi[i] / sigma[i] } else { dzero })
        .collect();
    let alpha: Vec<usize> = (0..r).filter(|&i| psi[i] != 0.0).collect();

    let prox = if transposed {
        pm.transpose().as_slice().to_vec()
    } else {
        pm.as_slice().to_vec()
    };
    SpectralProx {
        prox,
        out_sigma: psi,
        jac: SpectralJac {
            n1: r,
            n2: c,
            transposed,
            u,
            v1,
            sigma,
            omega_g,
            omega_gt,
            omega_rect,
            alpha,
            diag_coupling: Some(jpsi),
        },
    }
}

pub struct PsdProx {
    pub prox: Vec<f64>,
    pub eigs: Vec<f64>,
    pub jac: PsdJac,
}

/// Projection of sym(X) onto the PSD cone.
pub fn psd_project(x: &[f64], n: usize) -> PsdProx {
    let xm = DMatrix::from_column_slice(n, n, x);
    let sym = (&xm + xm.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let q = eig.eigenvectors;
    let lams: Vec<f64> = eig.eigenvalues.iter().copied().collect();

    let mut pm = DMatrix::zeros(n, n);
    for k in 0..n {
        if lams[k] > 0.0 {
            let qk = q.column(k);
            for j in 0..n {
                for i in 0..n {
                    pm[(i, j)] += lams[k] * qk[i] * qk[j];
                }
            }
        }
    }

    let mut coef = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (lams[i], lams[j]);
            coef[(i, j)] = if li > 0.0 && lj > 0.0 {
                1.0
            } else if li > 0.0 {
                li / (li - lj)
            } else if lj > 0.0 {
                lj / (lj - li)
            } else {
                0.0
            };
        }
    }
    PsdProx {
        prox: pm.as_slice().to_vec(),
        eigs: lams,
        jac: PsdJac { n, q, coef },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nuclear_prox_of_diagonal() {
        // X = diag(3, 1, 0.2): singular values threshold at 1
        let mut x = vec![0.0; 9];
        x[0] = 3.0;
        x[4] = 1.0;
        x[8] = 0.2;
        let p = nuclear_prox(&x, 1.0, 3, 3);
        let mut want = vec![0.0; 9];
        want[0] = 2.0;
        for i in 0..9 {
            assert!((p.prox[i] - want[i]).abs() < 1e-12, "i={i}: {} vs {}", p.prox[i], want[i]);
        }
    }

    #[test]
    fn linf_threshold_basic() {
        // σ = (3,1): total 4 > 2, cutoff from the top element: θ = (3−2)/1 = 1 … but σ2=1 ≤ 1 so stop
        assert_eq!(linf_threshold(&[3.0, 1.0], 2.0), 1.0);
        assert_eq!(linf_threshold(&[3.0, 1.0], 5.0), 0.0);
    }

    #[test]
    fn psd_projection_of_indefinite_diagonal() {
        let mut x = vec![0.0; 4];
        x[0] = 1.0;
        x[3] = -1.0;
        let p = psd_project(&x, 2);
        assert!((p.prox[0] - 1.0).abs() < 1e-14);
        assert!(p.prox[3].abs() < 1e-14);
    }
}

//! Fused-lasso prox: soft threshold composed with exact 1-D total-variation
//! denoising, plus the block structure of its generalized Jacobian.
//!
//! The TV solution is piecewise constant; coordinates joined by a difference
//! whose dual multiplier is strictly inside (−λ2, λ2) are provably fused, and
//! the denoiser's Jacobian averages over each such maximal block. Composing
//! with the soft-threshold diagonal Θ gives M = Θ Γ Θ, a 0/1 diagonal plus a
//! sum of one rank-one term per block — the structure every downstream solve
//! exploits.

/// Exact TV denoiser: minimizes ½‖x − y‖² + λ Σ|x_{k+1} − x_k| by a direct
/// O(n) taut-string sweep.
pub fn tv_denoise(y: &[f64], lam: f64, x: &mut [f64]) {
    let n = y.len();
    if n == 0 {
        return;
    }
    if lam <= 0.0 || n == 1 {
        x.copy_from_slice(y);
        return;
    }
    let nn = n - 1;
    let (mut k, mut k0, mut km, mut kp) = (0usize, 0usize, 0usize, 0usize);
    let mut vmin = y[0] - lam;
    let mut vmax = y[0] + lam;
    let mut umin = lam;
    let mut umax = -lam;
    'outer: loop {
        if k == nn {
            x[nn] = vmin + umin;
            return;
        }
        loop {
            if y[k + 1] + umin < vmin - lam {
                // lower tube boundary forces a negative jump
                for xi in x.iter_mut().take(km + 1).skip(k0) {
                    *xi = vmin;
                }
                k = km + 1;
                k0 = k;
                km = k;
                kp = k;
                vmin = y[k];
                vmax = y[k] + 2.0 * lam;
                umin = lam;
                umax = -lam;
            } else if y[k + 1] + umax > vmax + lam {
                // upper tube boundary forces a positive jump
                for xi in x.iter_mut().take(kp + 1).skip(k0) {
                    *xi = vmax;
                }
                k = kp + 1;
                k0 = k;
                km = k;
                kp = k;
                vmin = y[k] - 2.0 * lam;
                vmax = y[k];
                umin = lam;
                umax = -lam;
            } else {
                k += 1;
                umin += y[k] - vmin;
                umax += y[k] - vmax;
                if umin >= lam {
                    vmin += (umin - lam) / (k - k0 + 1) as f64;
                    umin = lam;
                    km = k;
                }
                if umax <= -lam {
                    vmax += (umax + lam) / (k - k0 + 1) as f64;
                    umax = -lam;
                    kp = k;
                }
            }
            if k >= nn {
                break;
            }
        }
        if umin < 0.0 {
            for xi in x.iter_mut().take(km + 1).skip(k0) {
                *xi = vmin;
            }
            k = km + 1;
            k0 = k;
            km = k;
            vmin = y[k];
            umin = lam;
            umax = y[k] + lam - vmax;
            continue 'outer;
        } else if umax > 0.0 {
            for xi in x.iter_mut().take(kp + 1).skip(k0) {
                *xi = vmax;
            }
            k = kp + 1;
            k0 = k;
            kp = k;
            vmax = y[k];
            umax = -lam;
            umin = y[k] - lam - vmin;
            continue 'outer;
        } else {
            let avg = vmin + umin / (k - k0 + 1) as f64;
            for xi in x.iter_mut().take(nn + 1).skip(k0) {
                *xi = avg;
            }
            return;
        }
    }
}

fn soft_signed(v: f64, lam: f64) -> f64 {
    if v > lam {
        v - lam
    } else if v < -lam {
        v + lam
    } else {
        0.0
    }
}

/// Maximal run of provably-fused coordinates `lo..=hi` (length ≥ 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusedBlock {
    pub lo: usize,
    pub hi: usize,
}

impl FusedBlock {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Structure of M = Θ Γ Θ at a fused prox point.
#[derive(Debug, Clone)]
pub struct FusedFactors {
    pub n: usize,
    /// 0/1 soft-threshold derivative at the TV output
    pub theta: Vec<f64>,
    pub blocks: Vec<FusedBlock>,
    /// coordinates not inside any block
    pub singletons: Vec<usize>,
}

impl FusedFactors {
    /// y = Θ Γ Θ g: zero out θ=0 entries, average over each block, pass
    /// singletons through, zero out again.
    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &i in &self.singletons {
            out[i] = self.theta[i] * g[i];
        }
        for b in &self.blocks {
            let nb = b.len() as f64;
            let mut s = 0.0;
            for i in b.lo..=b.hi {
                s += self.theta[i] * g[i];
            }
            let avg = s / nb;
            for i in b.lo..=b.hi {
                out[i] = self.theta[i] * avg;
            }
        }
    }

    /// Active singleton coordinates (θ = 1, not fused).
    pub fn active_singletons(&self) -> Vec<usize> {
        self.singletons
            .iter()
            .copied()
            .filter(|&i| self.theta[i] == 1.0)
            .collect()
    }
}

pub struct FusedProx {
    pub prox: Vec<f64>,
    /// TV-denoised intermediate (before the soft threshold)
    pub tv: Vec<f64>,
    pub factors: FusedFactors,
}

/// prox of t·(λ1‖x‖₁ + λ2 TV): soft-threshold the TV denoiser output, and
/// read off the fused-block structure from the TV dual multipliers.
pub fn fused_prox(x: &[f64], lam1: f64, lam2: f64, t: f64) -> FusedProx {
    let n = x.len();
    let l1 = t * lam1;
    let l2 = t * lam2;
    let mut tv = vec![0.0; n];
    tv_denoise(x, l2, &mut tv);
    let prox: Vec<f64> = tv.iter().map(|&v| soft_signed(v, l1)).collect();

    let theta: Vec<f64> = if lam1 == 0.0 {
        vec![1.0; n]
    } else {
        tv.iter().map(|&v| if v.abs() >= l1 { 1.0 } else { 0.0 }).collect()
    };

    // dual multipliers of the difference terms: z_k = Σ_{j≤k}(tv_j − x_j);
    // |z_k| strictly below the bound certifies coordinates k, k+1 fused
    let tol = 1e-12 * (1.0 + l2);
    let mut blocks = Vec::new();
    let mut covered = vec![false; n];
    if n >= 2 && l2 > 0.0 {
        let mut z = 0.0;
        let mut run_start: Option<usize> = None;
        for k in 0..n - 1 {
            z += tv[k] - x[k];
            let separated = z.abs() >= l2 - tol;
            if separated {
                if let Some(a) = run_start.take() {
                    blocks.push(FusedBlock { lo: a, hi: k });
                }
            } else if run_start.is_none() {
                run_start = Some(k);
            }
        }
        if let Some(a) = run_start {
            blocks.push(FusedBlock { lo: a, hi: n - 1 });
        }
        for b in &blocks {
            for i in b.lo..=b.hi {
                covered[i] = true;
            }
        }
    }
    let singletons: Vec<usize> = (0..n).filter(|&i| !covered[i]).collect();

    FusedProx {
        prox,
        tv,
        factors: FusedFactors {
            n,
            theta,
            blocks,
            singletons,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv_optimality(y: &[f64], lam: f64, x: &[f64]) {
        let n = y.len();
        let mut z = 0.0;
        for k in 0..n {
            z += x[k] - y[k];
            if k + 1 < n {
                assert!(z.abs() <= lam + 1e-10, "multiplier bound violated at {k}: {z}");
                let d = x[k + 1] - x[k];
                if d.abs() > 1e-9 {
                    let want = lam * d.signum();
                    assert!((z - want).abs() < 1e-9, "jump at {k}: z={z}, want {want}");
                }
            } else {
                assert!(z.abs() < 1e-9, "telescoped sum must vanish: {z}");
            }
        }
    }

    #[test]
    fn tv_denoise_small_cases() {
        let mut x = vec![0.0; 2];
        tv_denoise(&[0.0, -10.0], 1.0, &mut x);
        assert!((x[0] + 1.0).abs() < 1e-12 && (x[1] + 9.0).abs() < 1e-12);

        let y = [1.0, 1.0, 1.0, 1.0];
        let mut x = vec![0.0; 4];
        tv_denoise(&y, 0.7, &mut x);
        for v in &x {
            assert!((v - 1.0).abs() < 1e-12);
        }

        // large λ flattens to the mean
        let y = [3.0, -1.0, 2.0, 0.0];
        let mut x = vec![0.0; 4];
        tv_denoise(&y, 100.0, &mut x);
        for v in &x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_denoise_satisfies_optimality() {
        // fixed pseudo-random-ish data, several lambdas
        let y: Vec<f64> = (0..31)
            .map(|i| ((i * 2654435761u64 % 1000) as f64) / 100.0 - 5.0)
            .collect();
        for lam in [0.05, 0.5, 2.0, 20.0] {
            let mut x = vec![0.0; y.len()];
            tv_denoise(&y, lam, &mut x);
            tv_optimality(&y, lam, &x);
        }
    }

    #[test]
    fn fused_blocks_on_flat_data() {
        // flat input: everything fuses into one block, threshold kills nothing
        let x = [2.0, 2.0, 2.0];
        let p = fused_prox(&x, 0.5, 0.3, 1.0);
        assert_eq!(p.factors.blocks, vec![FusedBlock { lo: 0, hi: 2 }]);
        assert!(p.factors.singletons.is_empty());
        for v in &p.prox {
            assert!((v - 1.5).abs() < 1e-12);
        }
    }
}
